"""Per-covariate basis expansions (no cross-covariate terms)."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .kernels import bspline_basis


def polynomial_features(x, degree):
    """``(x_j, x_j^2, ..., x_j^d)`` for every covariate, covariate-major.

    Works on a single vector or on rows of a matrix.
    """
    if degree < 1:
        raise ConfigError(f"polynomial degree must be >= 1, got {degree}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    powers = np.arange(1, degree + 1)
    out = (X[:, :, None] ** powers).reshape(X.shape[0], -1)
    return out[0] if single else out


def clamped_knots(breakpoints, degree):
    bp = np.asarray(breakpoints, dtype=np.float64)
    if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
        raise ConfigError("breakpoints must be strictly increasing with at least two entries")
    return np.concatenate([np.full(degree, bp[0]), bp, np.full(degree, bp[-1])])


def default_breakpoints(n_interior=5, lo=-1.0, hi=1.0):
    return np.linspace(lo, hi, n_interior + 2)


def bspline_features(x, breakpoints=None, degree=3):
    """B-spline basis of every covariate, concatenated covariate-major.

    ``breakpoints`` includes both boundaries, e.g. ``(-1, 0, 1)``. The knot
    vector is clamped by repeating the boundaries ``degree`` times, giving
    ``len(breakpoints) + degree - 1`` functions per covariate. Values outside
    the boundaries are clamped onto them.
    """
    if degree < 0:
        raise ConfigError("spline degree must be >= 0")
    if breakpoints is None:
        breakpoints = default_breakpoints()
    t = clamped_knots(breakpoints, degree)
    lo, hi = t[0], t[-1]
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.clip(x.reshape(1, -1) if single else x, lo, hi)
    n, p = X.shape
    blocks = [bspline_basis(X[:, j], t, degree) for j in range(p)]
    out = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
    return out[0] if single else out


def n_bspline_features(p, breakpoints, degree):
    return p * (len(breakpoints) + degree - 1)

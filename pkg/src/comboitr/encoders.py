"""Covariate and treatment encoders of the double encoder model.

The outcome regression is ``Q(x, a) = m(x) + alpha(x)^T beta(a)`` with
``beta(a) = W a + beta_1(a)`` and ``beta_1(a) = 0`` whenever ``a`` has fewer
than two active treatments.
"""
from __future__ import annotations

import numpy as np

from .basis import bspline_features, default_breakpoints, n_bspline_features, polynomial_features
from .errors import ConfigError, DomainError, ShapeError
from .nn import DenseNet
from .treatments import TreatmentSpace, interaction_allowed  # noqa: F401  (re-export)

COVARIATE_KINDS = ("network", "polynomial", "bspline")
INTERACTIVE_KINDS = ("network", "dictionary")


class CovariateEncoder:
    """Maps covariates in R^p to the latent space R^r.

    The basis variants apply a fixed expansion followed by a trainable linear
    map (stored as a one-layer :class:`DenseNet`); the network variant is an
    MLP on the raw covariates.
    """

    def __init__(self, kind, net, p, degree=None, breakpoints=None, spline_degree=None):
        if kind not in COVARIATE_KINDS:
            raise ConfigError(f"unknown covariate encoder {kind!r}")
        self.kind = kind
        self.net = net
        self.p = int(p)
        self.degree = degree
        self.breakpoints = None if breakpoints is None else np.asarray(breakpoints, dtype=np.float64)
        self.spline_degree = spline_degree
        if net.n_in != self.n_features:
            raise ShapeError(f"{kind} encoder expects {self.n_features} inputs, net takes {net.n_in}")

    @classmethod
    def network(cls, p, r, depth=2, width=32, rng=None):
        rng = np.random.default_rng(rng)
        widths = [p] + [width] * (depth - 1) + [r]
        return cls("network", DenseNet.init(widths, rng), p)

    @classmethod
    def polynomial(cls, p, r, degree=3, rng=None):
        rng = np.random.default_rng(rng)
        return cls("polynomial", DenseNet.init([p * degree, r], rng), p, degree=degree)

    @classmethod
    def bspline(cls, p, r, breakpoints=None, degree=3, rng=None):
        rng = np.random.default_rng(rng)
        bp = default_breakpoints() if breakpoints is None else np.asarray(breakpoints, dtype=np.float64)
        nf = n_bspline_features(p, bp, degree)
        return cls("bspline", DenseNet.init([nf, r], rng), p, breakpoints=bp, spline_degree=degree)

    @property
    def r(self):
        return self.net.n_out

    @property
    def n_features(self):
        if self.kind == "network":
            return self.p
        if self.kind == "polynomial":
            return self.p * self.degree
        return n_bspline_features(self.p, self.breakpoints, self.spline_degree)

    def features(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.p:
            raise ShapeError(f"covariate encoder expects {self.p} covariates, got {X.shape[-1]}")
        if self.kind == "network":
            return X
        if self.kind == "polynomial":
            return polynomial_features(X, self.degree)
        return bspline_features(X, self.breakpoints, self.spline_degree)

    def __call__(self, X):
        return self.net.forward(self.features(X))

    def to_dict(self):
        return {
            "kind": self.kind,
            "p": self.p,
            "degree": self.degree,
            "breakpoints": None if self.breakpoints is None else self.breakpoints.tolist(),
            "spline_degree": self.spline_degree,
            "net": self.net.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], DenseNet.from_dict(d["net"]), d["p"], d.get("degree"),
                   d.get("breakpoints"), d.get("spline_degree"))


def encode_covariates(enc, x):
    return enc(x)


class TreatmentEncoder:
    """``beta(a) = W a + mask(a) * beta_1(a)``.

    ``beta_1`` is either a dictionary ``V`` with one column per admissible
    combination or a :class:`DenseNet` on the binary treatment vector.
    """

    def __init__(self, space, W, kind="network", net=None, V=None):
        if kind not in INTERACTIVE_KINDS:
            raise ConfigError(f"unknown interactive encoder {kind!r}")
        self.space = space
        self.W = np.array(W, dtype=np.float64, ndmin=2)
        if self.W.shape[1] != space.K:
            raise ShapeError(f"W must have K={space.K} columns, got {self.W.shape}")
        self.kind = kind
        self.net = net
        self.V = None if V is None else np.array(V, dtype=np.float64, ndmin=2)
        if kind == "network":
            if net is None or net.n_in != space.K or net.n_out != self.r:
                raise ShapeError("interactive network must map K inputs to r outputs")
        else:
            if self.V is None or self.V.shape != (self.r, len(space)):
                raise ShapeError(f"dictionary must have shape ({self.r}, {len(space)})")
        self.mask = (space.sizes >= 2).astype(np.float64)

    @classmethod
    def init(cls, space, r, kind="network", depth=2, width=16, rng=None, w_scale=0.5):
        rng = np.random.default_rng(rng)
        W = rng.uniform(-w_scale, w_scale, size=(r, space.K))
        if kind == "network":
            widths = [space.K] + [width] * (depth - 1) + [r]
            # zero output layer: beta_1 starts at exactly 0
            return cls(space, W, "network", net=DenseNet.init(widths, rng, zero_output=True))
        return cls(space, W, "dictionary", V=np.zeros((r, len(space))))

    @property
    def r(self):
        return self.W.shape[0]

    def interactive_params(self):
        return self.net.params() if self.kind == "network" else [self.V]

    def additive(self, idx):
        return self.space.bits[idx] @ self.W.T

    def interactive(self, idx):
        idx = np.asarray(idx)
        if self.kind == "network":
            out = self.net.forward(self.space.bits[idx])
        else:
            out = self.V[:, idx].T
        return out * self.mask[idx][:, None]

    def raw(self, idx):
        """Un-normalized ``beta`` for combination indices ``idx`` (rows)."""
        idx = np.asarray(idx, dtype=np.int64)
        return self.additive(idx) + self.interactive(idx)

    def all_centered(self):
        """``beta`` on every admissible combination, centered to sum to zero."""
        B = self.raw(np.arange(len(self.space)))
        return B - B.mean(axis=0)

    def to_dict(self):
        return {
            "kind": self.kind,
            "W": self.W.tolist(),
            "net": None if self.net is None else self.net.to_dict(),
            "V": None if self.V is None else self.V.tolist(),
        }

    @classmethod
    def from_dict(cls, d, space):
        net = None if d.get("net") is None else DenseNet.from_dict(d["net"])
        return cls(space, d["W"], d["kind"], net=net, V=d.get("V"))


def encode_treatment(enc, combo):
    """``beta(a)`` for a single admissible combination (bitmask or combo)."""
    mask = getattr(combo, "mask", combo)
    if mask not in enc.space:
        raise DomainError(f"combination {mask} is not admissible")
    return enc.raw([enc.space.index(mask)])[0]


def normalize_batch(betas, combo_idx):
    """Subtract the mean of ``beta`` over the distinct combinations in a batch.

    Equivalent to a weighted mean over rows with weight ``1 / count(combo)``.
    Returns the centered rows.
    """
    betas = np.asarray(betas, dtype=np.float64)
    combo_idx = np.asarray(combo_idx)
    if betas.shape[0] == 0:
        raise ShapeError("empty batch")
    _, first = np.unique(combo_idx, return_index=True)
    mean = betas[first].mean(axis=0)
    return betas - mean


class DemModel:
    def __init__(self, covariate, treatment, fitted=False):
        if covariate.r != treatment.r:
            raise ShapeError(f"encoder dimensions disagree: {covariate.r} vs {treatment.r}")
        self.covariate = covariate
        self.treatment = treatment
        self.fitted = fitted

    @property
    def r(self):
        return self.covariate.r

    @property
    def space(self):
        return self.treatment.space

    def alpha(self, X):
        return self.covariate(X)

    def beta(self):
        return self.treatment.all_centered()

    def effects(self, X):
        """Matrix of estimated effects ``alpha(x_i)^T beta(a_j)``, rows = subjects."""
        A = self.alpha(np.atleast_2d(X))
        return A @ self.beta().T

    def to_dict(self):
        return {
            "format": "dem",
            "version": 1,
            "space": self.space.to_dict(),
            "covariate": self.covariate.to_dict(),
            "treatment": self.treatment.to_dict(),
            "fitted": self.fitted,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "dem":
            raise ConfigError("not a DEM document")
        space = TreatmentSpace.from_dict(d["space"])
        return cls(CovariateEncoder.from_dict(d["covariate"]),
                   TreatmentEncoder.from_dict(d["treatment"], space), d.get("fitted", False))


def q_value(model, m_hat, x, a):
    mask = getattr(a, "mask", a)
    j = model.space.index(mask)
    return float(m_hat + model.alpha(np.asarray(x, dtype=np.float64)) @ model.beta()[j])

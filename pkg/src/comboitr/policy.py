"""Treatment rules and their evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def argmax_first(scores):
    """Row-wise argmax; ties go to the lowest column (= smallest bitmask)."""
    return np.argmax(np.asarray(scores), axis=1)


class Policy:
    """Base class: ``decide_indices(X)`` returns combination indices."""

    space = None

    def decide_indices(self, X):
        raise NotImplementedError

    def decide(self, x):
        idx = self.decide_indices(np.atleast_2d(x))
        combos = [self.space.combo(int(i)) for i in idx]
        return combos[0] if np.ndim(x) == 1 else combos


class ModelPolicy(Policy):
    """``argmax_a alpha(x)^T beta(a)``; the treatment-free term cancels."""

    def __init__(self, model):
        self.model = model
        self.space = model.space

    def decide_indices(self, X):
        return argmax_first(self.model.effects(X))


class ScorePolicy(Policy):
    """Argmax of any ``(n, |A|)`` score function."""

    def __init__(self, space, score_fn):
        self.space = space
        self.score_fn = score_fn

    def decide_indices(self, X):
        return argmax_first(self.score_fn(np.atleast_2d(X)))


class OraclePolicy(ScorePolicy):
    def __init__(self, setting):
        super().__init__(setting.space, setting.effects)
        self.setting = setting


class ConstantPolicy(Policy):
    def __init__(self, space, index):
        self.space = space
        self.index = int(index)

    def decide_indices(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.index, dtype=np.int64)


class FixedPolicy(Policy):
    """Pre-computed decisions for a fixed set of rows."""

    def __init__(self, space, indices):
        self.space = space
        self.indices = np.asarray(indices, dtype=np.int64)

    def decide_indices(self, X):
        if np.atleast_2d(X).shape[0] != self.indices.size:
            raise DataError("fixed policy evaluated on a different number of rows")
        return self.indices


def decide(model, x):
    return ModelPolicy(model).decide(x)


@dataclass(frozen=True)
class EmpiricalValue:
    """Matched-subset mean outcome. ``value`` is None when no row matches."""

    value: float | None
    n_matched: int

    @property
    def defined(self):
        return self.value is not None

    def to_json(self):
        return "undefined" if self.value is None else self.value


def empirical_value(policy, data):
    """``sum y_i 1{d(x_i) = a_i} / sum 1{d(x_i) = a_i}``."""
    if data.n == 0:
        raise DataError("empirical value of an empty dataset")
    match = policy.decide_indices(data.X) == data.idx
    k = int(match.sum())
    if k == 0:
        return EmpiricalValue(None, 0)
    return EmpiricalValue(float(data.y[match].mean()), k)


def accuracy(policy, oracle, X):
    if policy.space != oracle.space:
        raise DataError("policies are defined on different treatment spaces")
    return float(np.mean(policy.decide_indices(X) == oracle.decide_indices(X)))


@dataclass(frozen=True)
class TrueValue:
    value: float
    se: float
    n_mc: int


def true_value(policy, setting, n_mc=100_000, seed=0, X=None):
    """Monte Carlo estimate of ``E[m(X) + delta*(X, d(X))]``.

    Pass ``X`` to evaluate several policies on shared draws.
    """
    from .simdata import gen_covariates

    if X is None:
        X = gen_covariates(n_mc, seed)
    d = policy.decide_indices(X)
    vals = setting.m(X) + setting.effects(X)[np.arange(X.shape[0]), d]
    n = vals.size
    return TrueValue(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0, n)

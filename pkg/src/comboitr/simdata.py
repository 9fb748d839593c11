"""The four simulation regimes: uniform covariates on (-1, 1)^10, tabulated
single-treatment and interaction effect functions, uniform or propensity-based
assignment, Gaussian outcomes.

Several tabulated effects take ``log`` of a covariate, or divide by one, on a
domain that includes non-positive values. Those arguments go through
:func:`pos`, the map ``x -> (x + 1) / 2 + 1e-6`` onto ``(0, 1]``. The same map
is used for data generation and for the true-effect oracle, and it is listed
in :func:`manifest`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .treatments import TreatmentSpace, bits_to_mask

P = 10
POS_SHIFT = 1e-6
REMAP = "pos(x) = (x + 1) / 2 + 1e-6, applied to every log argument and reciprocal argument"


def pos(x):
    return (x + 1.0) / 2.0 + POS_SHIFT


def _c(X, j):
    # 1-based covariate access, matching the tabulated formulas
    return X[:, j - 1]


# each entry: (printed combination, formula text, callable on an (n, 10) matrix)
_SINGLES_12 = [
    ((0, 0, 1), "2*X1 + exp(X3 + X4)", lambda X: 2 * _c(X, 1) + np.exp(_c(X, 3) + _c(X, 4))),
    ((0, 1, 0), "2*X2*log(pos(X5)) + X7", lambda X: 2 * _c(X, 2) * np.log(pos(_c(X, 5))) + _c(X, 7)),
    ((1, 0, 0), "sin(X3) + 2*log(pos(X4)) + 2*log(pos(X7))",
     lambda X: np.sin(_c(X, 3)) + 2 * np.log(pos(_c(X, 4))) + 2 * np.log(pos(_c(X, 7)))),
]
_INTER_12 = [
    ((0, 1, 1), "sin(5*X1**2) - 3*(X2 - 0.5)**2",
     lambda X: np.sin(5 * _c(X, 1) ** 2) - 3 * (_c(X, 2) - 0.5) ** 2),
    ((1, 1, 1), "2*sin((X2 - X4)**2)", lambda X: 2 * np.sin((_c(X, 2) - _c(X, 4)) ** 2)),
]
_COMBOS_12 = [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 0, 0), (1, 1, 1)]

_SINGLES_34 = [
    ((0, 0, 0, 0, 1), "(X1 - 0.25)**3", lambda X: (_c(X, 1) - 0.25) ** 3),
    ((0, 0, 0, 1, 0), "2*log(pos(X3)) + 4*log(pos(X8))*cos(2*pi*X10)",
     lambda X: 2 * np.log(pos(_c(X, 3))) + 4 * np.log(pos(_c(X, 8))) * np.cos(2 * np.pi * _c(X, 10))),
    ((0, 0, 1, 0, 0), "X2*sin(X4) - 1", lambda X: _c(X, 2) * np.sin(_c(X, 4)) - 1),
    ((0, 1, 0, 0, 0), "(X1 + X5 - X8**2)**3", lambda X: (_c(X, 1) + _c(X, 5) - _c(X, 8) ** 2) ** 3),
    ((1, 0, 0, 0, 0), "exp(X2 - X5)", lambda X: np.exp(_c(X, 2) - _c(X, 5))),
]
_ZERO = "0"
_INTER_34 = [
    ((0, 0, 1, 0, 1), "exp(2*X2)", lambda X: np.exp(2 * _c(X, 2))),
    ((0, 1, 0, 0, 1), "exp(2*X4 + X9)", lambda X: np.exp(2 * _c(X, 4) + _c(X, 9))),
    ((0, 1, 0, 1, 1), "-4*log(pos(X6))", lambda X: -4 * np.log(pos(_c(X, 6)))),
    ((1, 0, 1, 0, 1), "-3/2*cos(2*pi*X1 + X8**2)",
     lambda X: -1.5 * np.cos(2 * np.pi * _c(X, 1) + _c(X, 8) ** 2)),
    ((1, 1, 0, 0, 1), "-4*log(pos(X6))", lambda X: -4 * np.log(pos(_c(X, 6)))),
    ((1, 1, 0, 1, 1), "X6**2 + 1/2*sin(2*pi/pos(X7))",
     lambda X: _c(X, 6) ** 2 + 0.5 * np.sin(2 * np.pi / pos(_c(X, 7)))),
]
_COMBOS_34 = [
    (0, 0, 0, 0, 0), (0, 0, 0, 0, 1), (0, 0, 0, 1, 0), (0, 0, 1, 0, 0), (0, 0, 1, 0, 1),
    (0, 1, 0, 0, 0), (0, 1, 0, 0, 1), (0, 1, 0, 1, 1), (0, 1, 1, 0, 0), (0, 1, 1, 1, 0),
    (1, 0, 0, 0, 0), (1, 0, 0, 0, 1), (1, 0, 0, 1, 0), (1, 0, 1, 0, 0), (1, 0, 1, 0, 1),
    (1, 1, 0, 0, 0), (1, 1, 0, 0, 1), (1, 1, 0, 1, 1), (1, 1, 1, 0, 0), (1, 1, 1, 1, 0),
]


def default_m(X):
    return 1.0 + 0.5 * _c(X, 1) + 0.5 * _c(X, 2) ** 2


DEFAULT_M_TEXT = "1 + 0.5*X1 + 0.5*X2**2"


def default_beta_ps():
    b = np.zeros(P)
    b[:2] = 1.0 / np.sqrt(2.0)
    return b


@dataclass
class SimSetting:
    id: int
    scheme: str = "uniform"
    sigma: float = 1.0
    beta_ps: np.ndarray = field(default_factory=default_beta_ps)
    m: object = default_m
    m_text: str = DEFAULT_M_TEXT

    def __post_init__(self):
        if self.id not in (1, 2, 3, 4):
            raise ConfigError(f"simulation setting must be 1..4, got {self.id}")
        if self.scheme not in ("uniform", "propensity"):
            raise ConfigError(f"unknown assignment scheme {self.scheme!r}")
        if self.sigma < 0:
            raise ConfigError("noise sd must be non-negative")
        self.beta_ps = np.asarray(self.beta_ps, dtype=np.float64)
        if self.beta_ps.shape != (P,):
            raise ConfigError(f"beta_ps must have {P} entries")
        small = self.id in (1, 2)
        combos = _COMBOS_12 if small else _COMBOS_34
        self.K = 3 if small else 5
        self.space = TreatmentSpace.from_bits(combos)
        self.singles = _SINGLES_12 if small else _SINGLES_34
        self.interaction = self.id in (2, 4)
        self.interactions = (_INTER_12 if small else _INTER_34) if self.interaction else []

    @property
    def p(self):
        return P

    def effects(self, X):
        """True effect matrix ``delta*(x_i, a_j)``, columns in combination order."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != P:
            raise DomainError(f"simulation covariates have {P} columns, got {X.shape[1]}")
        single = np.column_stack([f(X) for _, _, f in self.singles])  # (n, K) in singles order
        # column k of `unit` belongs to treatment A^{k+1}
        unit = np.zeros((X.shape[0], self.K))
        for (bits, _, _), col in zip(self.singles, single.T):
            unit[:, bits.index(1)] = col
        out = unit @ self.space.bits.T
        inter = {bits_to_mask(b): f for b, _, f in self.interactions}
        for j, mask in enumerate(self.space.masks):
            if mask in inter:
                out[:, j] += inter[mask](X)
        return out

    def propensities(self, X):
        X = np.atleast_2d(X)
        if self.scheme == "uniform":
            return np.full((X.shape[0], len(self.space)), 1.0 / len(self.space))
        return graded_propensity(X, self.beta_ps, len(self.space))


def graded_propensity(X, beta_ps, n_arms):
    """``P(arm i | x) ∝ exp(0.2 i x^T beta_ps)`` for arms ``i = 1..n_arms``."""
    s = np.atleast_2d(X) @ np.asarray(beta_ps)
    logits = 0.2 * np.outer(s, np.arange(1, n_arms + 1))
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def gen_covariates(n, seed=None):
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, P))
    # uniform() samples [-1, 1); keep the support open on both sides
    X[X == -1.0] = np.nextafter(-1.0, 0.0)
    return X


def true_delta(setting, x, a):
    mask = getattr(a, "mask", a)
    j = setting.space.index(mask)
    return float(setting.effects(np.asarray(x, dtype=np.float64).reshape(1, -1))[0, j])


def assign_treatment(setting, X, scheme=None, seed=None):
    """Draw combination indices for every row of ``X``."""
    rng = np.random.default_rng(seed)
    scheme = scheme or setting.scheme
    X = np.atleast_2d(X)
    n_arms = len(setting.space)
    if scheme == "uniform":
        return rng.integers(0, n_arms, size=X.shape[0])
    if scheme != "propensity":
        raise ConfigError(f"unknown assignment scheme {scheme!r}")
    probs = graded_propensity(X, setting.beta_ps, n_arms)
    u = rng.random(X.shape[0])
    idx = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, n_arms - 1)


def gen_outcome(setting, X, idx, seed=None, delta=None):
    rng = np.random.default_rng(seed)
    X = np.atleast_2d(X)
    if delta is None:
        delta = setting.effects(X)
    idx = np.asarray(idx)
    mean = setting.m(X) + delta[np.arange(X.shape[0]), idx]
    return mean + setting.sigma * rng.standard_normal(X.shape[0])


@dataclass
class SimSample:
    X: np.ndarray
    idx: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    propensity: np.ndarray
    setting: SimSetting
    seed: int | None = None

    @property
    def masks(self):
        return np.array(self.setting.space.masks)[self.idx]

    @property
    def n(self):
        return self.X.shape[0]


def simulate(setting, n, seed=None):
    """One replicate. The seed drives three independent child streams."""
    ss = np.random.SeedSequence(seed)
    s_x, s_a, s_y = ss.spawn(3)
    X = gen_covariates(n, s_x)
    delta = setting.effects(X)
    idx = assign_treatment(setting, X, seed=s_a)
    y = gen_outcome(setting, X, idx, seed=s_y, delta=delta)
    return SimSample(X, idx, y, delta, setting.propensities(X), setting, seed)


def replicate_seeds(master_seed, count):
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def manifest(setting):
    return {
        "setting": setting.id,
        "K": setting.K,
        "combos": list(setting.space.masks),
        "scheme": setting.scheme,
        "sigma": setting.sigma,
        "beta_ps": setting.beta_ps.tolist(),
        "treatment_free": setting.m_text,
        "remap": REMAP,
        "single_effects": {str(bits): text for bits, text, _ in setting.singles},
        "interaction_effects": {str(bits): text for bits, text, _ in setting.interactions},
    }

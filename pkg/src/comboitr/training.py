"""Alternating mini-batch training of the double encoder model and random
hyper-parameter search.

Per mini-batch, three Adam steps run in order, each with the other two blocks
held fixed: the covariate encoder, the additive matrix ``W`` (squared L2
penalty), and the interactive encoder (L1 penalty). ``beta`` is centered over
the distinct combinations of the batch before every loss evaluation.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .encoders import CovariateEncoder, DemModel, TreatmentEncoder
from .errors import ComboITRError, ConfigError, OptimizationError
from .nn import Adam, penalty_grad, penalty_value


@dataclass(frozen=True)
class HyperParams:
    r: int = 4
    covariate: str = "network"
    depth_alpha: int = 2
    width_alpha: int = 32
    interactive: str = "network"
    depth_beta: int = 2
    width_beta: int = 16
    lam_a: float = 1e-4
    lam_i: float = 1e-3
    batch_size: int = 64
    lr: float = 1e-2
    epochs: int = 200
    lr_decay: float = 0.95
    inner_steps: int = 1
    poly_degree: int = 3
    spline_interior: int = 5
    spline_degree: int = 3
    w_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        positive = ("r", "depth_alpha", "width_alpha", "depth_beta", "width_beta", "batch_size",
                    "epochs", "inner_steps", "poly_degree")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"hyper-parameter {name} must be >= 1")
        for name in ("lam_a", "lam_i", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"hyper-parameter {name} must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")

    @property
    def additive_only(self):
        return math.isinf(self.lam_i)

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["lam_i"]):
            d["lam_i"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("lam_i") in ("inf", "Infinity"):
            d["lam_i"] = math.inf
        unknown = set(d) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown hyper-parameters {sorted(unknown)}")
        return cls(**d)


@dataclass
class FitResult:
    model: DemModel
    losses: list
    initial_loss: float
    hp: HyperParams
    val_value: float | None = None
    update_log: list = field(default_factory=list)


def build_model(space, p, hp, rng):
    if hp.covariate == "network":
        cov = CovariateEncoder.network(p, hp.r, hp.depth_alpha, hp.width_alpha, rng)
    elif hp.covariate == "polynomial":
        cov = CovariateEncoder.polynomial(p, hp.r, hp.poly_degree, rng)
    elif hp.covariate == "bspline":
        bp = np.linspace(-1.0, 1.0, hp.spline_interior + 2)
        cov = CovariateEncoder.bspline(p, hp.r, bp, hp.spline_degree, rng)
    else:
        raise ConfigError(f"unknown covariate encoder {hp.covariate!r}")
    trt = TreatmentEncoder.init(space, hp.r, hp.interactive, hp.depth_beta, hp.width_beta, rng,
                                w_scale=hp.w_scale)
    return DemModel(cov, trt)


def _batch_grads(A, idx, target, w, Bu, inv):
    """Loss and gradients w.r.t. ``alpha`` rows and un-normalized ``beta_u``."""
    Bc = Bu - Bu.mean(axis=0)
    Brow = Bc[inv]
    e = target - np.einsum("ij,ij->i", A, Brow)
    nb = idx.size
    loss = float(np.mean(w * e * e))
    g = -2.0 * w * e / nb
    GA = g[:, None] * Brow
    Gt = np.zeros_like(Bu)
    np.add.at(Gt, inv, g[:, None] * A)
    Gu = Gt - Gt.mean(axis=0)
    return loss, GA, Gu


def weighted_loss(model, X, idx, y, weights=None, m_hat=None, features=None):
    """Mean of ``w_i (y_i - m_i - alpha(x_i)^T beta(a_i))^2`` with ``beta``
    centered over the whole admissible set, so the loss of a batch is the
    mean of its single-row losses. Penalties are reported by :func:`penalties`."""
    idx = np.asarray(idx)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    m = np.zeros_like(y) if m_hat is None else np.asarray(m_hat, dtype=np.float64)
    F = model.covariate.features(X) if features is None else features
    A = model.covariate.net.forward(F)
    per_row = w * (y - m - np.einsum("ij,ij->i", A, model.beta()[idx])) ** 2
    bad = np.flatnonzero(~np.isfinite(per_row))
    if bad.size:
        raise OptimizationError(f"non-finite loss at row {int(bad[0])}")
    return float(per_row.mean())


def objective(model, hp, X, idx, y, weights=None, m_hat=None):
    """Weighted loss plus both penalties."""
    pen = penalties(model, hp)
    return weighted_loss(model, X, idx, y, weights, m_hat) + pen["additive"] + pen["interactive"]


def penalties(model, hp):
    out = {"additive": penalty_value("l2", hp.lam_a, [model.treatment.W])}
    if not hp.additive_only:
        out["interactive"] = penalty_value("l1", hp.lam_i, model.treatment.interactive_params())
    else:
        out["interactive"] = 0.0
    return out


def alpha_grads(model, Fb, ib, tb, wb, uniq, inv):
    """Batch loss and covariate-network gradients (treatment encoder fixed)."""
    net = model.covariate.net
    A = net.forward_train(Fb)
    loss, GA, _ = _batch_grads(A, ib, tb, wb, model.treatment.raw(uniq), inv)
    gw, gb, _ = net.backward(Fb, GA)
    return loss, net.grads_flat(gw, gb)


def additive_grads(model, hp, A, ib, tb, wb, uniq, inv, inter=None):
    """Batch loss and gradient for ``W``, including the squared-L2 penalty."""
    trt = model.treatment
    bu = model.space.bits[uniq]
    if inter is None:
        inter = trt.interactive(uniq)
    loss, _, Gu = _batch_grads(A, ib, tb, wb, bu @ trt.W.T + inter, inv)
    return loss, [Gu.T @ bu + penalty_grad("l2", hp.lam_a, trt.W)]


def interactive_grads(model, hp, A, ib, tb, wb, uniq, inv):
    """Batch loss and L1-subgradients for the interactive encoder."""
    trt = model.treatment
    bu = model.space.bits[uniq]
    mu = trt.mask[uniq][:, None]
    add = bu @ trt.W.T
    if trt.kind == "network":
        out = trt.net.forward_train(bu)
        loss, _, Gu = _batch_grads(A, ib, tb, wb, add + out * mu, inv)
        gw, gb, _ = trt.net.backward(bu, Gu * mu)
        grads = trt.net.grads_flat(gw, gb)
    else:
        loss, _, Gu = _batch_grads(A, ib, tb, wb, add + trt.V[:, uniq].T * mu, inv)
        gV = np.zeros_like(trt.V)
        gV[:, uniq] = (Gu * mu).T
        grads = [gV]
    params = trt.interactive_params()
    return loss, [g + penalty_grad("l1", hp.lam_i, p) for g, p in zip(grads, params)]


def fit_dem(data, hp=None, weights=None, m_hat=None, model=None, debug=False):
    """Fit the model on ``data`` with per-row ``weights`` and baseline ``m_hat``.

    ``weights`` defaults to 1 and ``m_hat`` to 0. ``hp.lam_i = inf`` freezes
    the interactive encoder (additive-only model).
    """
    hp = hp or HyperParams()
    n = data.n
    if n == 0:
        raise ConfigError("empty training data")
    rng = np.random.default_rng(hp.seed)
    if model is None:
        model = build_model(data.space, data.p, hp, rng)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    m = np.zeros(n) if m_hat is None else np.asarray(m_hat, dtype=np.float64)
    target = data.y - m
    F = model.covariate.features(data.X)
    idx = data.idx
    cov_net = model.covariate.net
    trt = model.treatment

    opt_a = Adam(cov_net.params(), lr=hp.lr, decay=hp.lr_decay)
    opt_w = Adam([trt.W], lr=hp.lr, decay=hp.lr_decay)
    frozen = hp.additive_only
    opt_i = None if frozen else Adam(trt.interactive_params(), lr=hp.lr, decay=hp.lr_decay)

    initial = weighted_loss(model, None, idx, data.y, w, m, features=F)
    losses, log = [], []
    bs = min(hp.batch_size, n)
    for epoch in range(hp.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            rows = perm[start:start + bs]
            Fb, ib, tb, wb = F[rows], idx[rows], target[rows], w[rows]
            uniq, inv = np.unique(ib, return_inverse=True)

            for _ in range(hp.inner_steps):
                opt_a.step(alpha_grads(model, Fb, ib, tb, wb, uniq, inv)[1], epoch)
            if debug:
                log.append("alpha")

            A = cov_net.forward(Fb)
            inter = trt.interactive(uniq)
            for _ in range(hp.inner_steps):
                opt_w.step(additive_grads(model, hp, A, ib, tb, wb, uniq, inv, inter)[1], epoch)
            if debug:
                log.append("additive")

            if not frozen:
                for _ in range(hp.inner_steps):
                    opt_i.step(interactive_grads(model, hp, A, ib, tb, wb, uniq, inv)[1], epoch)
                if debug:
                    log.append("interactive")

        loss = weighted_loss(model, None, idx, data.y, w, m, features=F)
        if not np.isfinite(loss):
            raise OptimizationError(f"training diverged at epoch {epoch}", epoch=epoch)
        losses.append(loss)
    model.fitted = True
    return FitResult(model, losses, initial, hp, update_log=log)


DEFAULT_SEARCH_SPACE = {
    "r": [2, 4, 8, 16],
    "width_alpha": [16, 32, 64],
    "depth_alpha": [2, 3],
    "width_beta": [8, 16, 32],
    "depth_beta": [2, 3],
    "lam_a": [0.0, 1e-4, 1e-3],
    "lam_i": [1e-4, 1e-3, 1e-2, 1e-1],
    "batch_size": [32, 64, 128],
    "lr": [3e-3, 1e-2, 3e-2],
    "epochs": [100, 200],
}


def sample_configs(space, n_draws, seed=0, base=None):
    """``n_draws`` configurations, each key drawn uniformly from its list."""
    base = base or HyperParams()
    rng = np.random.default_rng(seed)
    keys = sorted(space)
    out = []
    for k in range(n_draws):
        pick = {key: space[key][int(rng.integers(len(space[key])))] for key in keys}
        out.append(replace(base, **pick, seed=int(rng.integers(2**31))))
    return out


class SearchError(ComboITRError):
    exit_code = 4

    def __init__(self, failures):
        lines = "; ".join(f"config {i}: {err}" for i, err in failures)
        super().__init__(f"all hyper-parameter fits failed: {lines}")
        self.failures = failures


def random_search(train, val, space=None, n_draws=50, seed=0, weights=None, m_hat=None,
                  base=None, n_jobs=1, configs=None):
    """Fit every sampled configuration on ``train``; keep the one with the
    largest empirical value on ``val`` (ties: smaller ``r``, then smaller
    ``lam_i``). Returns ``(best FitResult, list of (hp, value or None))``.

    An explicit ``configs`` list replaces the random draws.
    """
    from .policy import ModelPolicy, empirical_value

    if space is None and configs is None:
        space = dict(DEFAULT_SEARCH_SPACE)
        space["r"] = sorted({2, 4, 8, min(16, len(train.space))})
    if configs is None:
        configs = sample_configs(space, n_draws, seed, base)

    def run(hp):
        res = fit_dem(train, hp, weights, m_hat)
        ev = empirical_value(ModelPolicy(res.model), val)
        res.val_value = ev.value
        return res

    results, failures = [], []
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            futures = [pool.submit(run, hp) for hp in configs]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append(f.result())
                except ComboITRError as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for hp in configs:
            try:
                outcomes.append(run(hp))
            except ComboITRError as exc:
                outcomes.append(exc)
    for i, out in enumerate(outcomes):
        if isinstance(out, Exception):
            failures.append((i, out))
        else:
            results.append(out)
    if not results:
        raise SearchError(failures)

    def key(res):
        v = -math.inf if res.val_value is None else res.val_value
        return (-v, res.hp.r, res.hp.lam_i)

    best = min(results, key=key)
    table = [(res.hp, res.val_value) for res in results]
    return best, table

"""Working models for the weighted loss: a group-lasso multinomial logistic
propensity model and a two-layer treatment-free network."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import OptimizationError, ShapeError
from .nn import Adam, DenseNet

P_MIN = 1e-3
W_MAX = 20.0


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp(logits):
    mx = logits.max(axis=1)
    return mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))


def _design(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([np.ones((X.shape[0], 1)), X])


@dataclass
class PropensityModel:
    """Multinomial logistic model on ``(1, x)``.

    ``coef`` has shape ``(p + 1, n_arms)``; row 0 is the unpenalized intercept.
    """

    coef: np.ndarray
    freq: np.ndarray
    w_max: float = W_MAX
    p_min: float = P_MIN
    lam: float = 0.0
    n_iter: int = 0
    history: list | None = None

    @property
    def n_arms(self):
        return self.coef.shape[1]

    @property
    def Gamma(self):
        """Covariate coefficients, one column per combination."""
        return self.coef[1:]

    def predict(self, X):
        Z = _design(X)
        if Z.shape[1] != self.coef.shape[0]:
            raise ShapeError(f"propensity model expects {self.coef.shape[0] - 1} covariates")
        prob = _softmax(Z @ self.coef)
        if self.p_min > 0:
            prob = np.maximum(prob, self.p_min)
            prob /= prob.sum(axis=1, keepdims=True)
        return prob

    def weights(self, X, idx):
        prob = self.predict(X)[np.arange(len(idx)), idx]
        return stabilize(self.freq[idx], prob, self.w_max)

    def to_dict(self):
        return {"kind": "multinomial", "coef": self.coef.tolist(), "freq": self.freq.tolist(),
                "w_max": self.w_max, "p_min": self.p_min, "lam": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["coef"]), np.asarray(d["freq"]), d["w_max"], d["p_min"], d["lam"])

    @classmethod
    def marginal(cls, freq, p, **kw):
        """The covariate-free model whose probabilities are the frequencies."""
        freq = np.asarray(freq, dtype=np.float64)
        coef = np.zeros((p + 1, freq.size))
        coef[0] = np.log(freq)
        return cls(coef, freq, p_min=0.0, **kw)


def predict_propensity(model, x):
    x = np.asarray(x, dtype=np.float64)
    out = model.predict(x.reshape(1, -1) if x.ndim == 1 else x)
    return out[0] if x.ndim == 1 else out


def stabilize(freq, prob, w_max=W_MAX):
    w = np.asarray(freq, dtype=np.float64) / np.asarray(prob, dtype=np.float64)
    return np.clip(w, 1.0 / w_max, w_max)


def stabilized_weight(model, x, a_index):
    prob = predict_propensity(model, x)[a_index]
    return float(stabilize(model.freq[a_index], prob, model.w_max))


def treatment_frequencies(idx, n_arms, p_min=P_MIN):
    counts = np.bincount(np.asarray(idx), minlength=n_arms).astype(np.float64)
    freq = counts / counts.sum()
    missing = counts == 0
    if missing.any():
        warnings.warn(f"combinations {np.flatnonzero(missing).tolist()} never observed; "
                      f"their frequency is floored at {p_min}", stacklevel=3)
        freq[missing] = p_min
        freq /= freq.sum()
    return freq


def propensity_objective(coef, Z, Y, lam):
    """Penalized negative mean log-likelihood (the quantity minimized)."""
    logits = Z @ coef
    nll = np.mean(_logsumexp(logits) - np.sum(logits * Y, axis=1))
    return nll + lam * np.sum(np.linalg.norm(coef[1:], axis=1))


def propensity_gradient(coef, Z, Y):
    """Gradient of the smooth (unpenalized) part of the objective."""
    return Z.T @ (_softmax(Z @ coef) - Y) / Z.shape[0]


def _group_prox(coef, thresh):
    out = coef.copy()
    norms = np.linalg.norm(out[1:], axis=1)
    scale = np.where(norms > thresh, 1.0 - thresh / np.where(norms > 0, norms, 1.0), 0.0)
    out[1:] *= scale[:, None]
    return out


def group_lasso_threshold(X, idx, n_arms):
    """Smallest penalty at which every covariate group is exactly zero."""
    Z = _design(X)
    Y = np.eye(n_arms)[idx]
    freq = Y.mean(axis=0)
    G = Z[:, 1:].T @ (freq[None, :] - Y) / Z.shape[0]
    return float(np.linalg.norm(G, axis=1).max())


def fit_propensity(X, idx, n_arms, lam=0.0, tol=1e-8, max_iter=5000, w_max=W_MAX, p_min=P_MIN,
                   record=False):
    """Group-lasso penalized multinomial logistic regression.

    Monotone FISTA with step ``1/L``, ``L = ||Z||_2^2 / (2n)`` (a global bound
    on the softmax-loss Hessian). Each covariate's coefficients across all
    combinations form one group; the intercept is not penalized.
    """
    Z = _design(X)
    idx = np.asarray(idx)
    n = Z.shape[0]
    Y = np.eye(n_arms)[idx]
    freq = treatment_frequencies(idx, n_arms, p_min)
    if lam > 0 and lam >= group_lasso_threshold(X, idx, n_arms):
        # every group is zero at the optimum; the intercepts are the log frequencies
        coef = np.zeros((Z.shape[1], n_arms))
        coef[0] = np.log(freq)
        return PropensityModel(coef, freq, w_max=w_max, p_min=p_min, lam=lam, n_iter=0,
                               history=[propensity_objective(coef, Z, Y, lam)] if record else None)
    L = np.linalg.norm(Z, 2) ** 2 / (2.0 * n)
    step = 1.0 / L
    x = np.zeros((Z.shape[1], n_arms))
    x[0] = np.log(np.maximum(Y.mean(axis=0), 1e-12))
    x[0] -= x[0].mean()
    fx = propensity_objective(x, Z, Y, lam)
    y, t = x.copy(), 1.0
    history = [fx] if record else None
    it = 0
    for it in range(1, max_iter + 1):
        u = _group_prox(y - step * propensity_gradient(y, Z, Y), step * lam)
        fu = propensity_objective(u, Z, Y, lam)
        if not np.isfinite(fu):
            raise OptimizationError(f"non-finite propensity objective at iteration {it}", step=it)
        x_new, f_new = (u, fu) if fu <= fx else (x, fx)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t / t_new) * (u - x_new) + ((t - 1.0) / t_new) * (x_new - x)
        change = abs(fu - fx)
        x, fx, t = x_new, f_new, t_new
        if record:
            history.append(fx)
        if change < tol:
            break
    return PropensityModel(x, freq, w_max=w_max, p_min=p_min, lam=lam, n_iter=it, history=history)


@dataclass
class TreatmentFreeModel:
    """``m(x) = w2^T relu(W1 x + b1) + b2``."""

    net: DenseNet
    losses: list

    @property
    def hidden(self):
        return self.net.weights[0].shape[0]

    def predict(self, X):
        return self.net.forward(np.atleast_2d(X))[:, 0]

    def to_dict(self):
        return {"kind": "two_layer", "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(DenseNet.from_dict(d["net"]), [])


class ZeroTreatmentFree:
    """``m(x) = 0``; used when the outcome is modelled without a baseline."""

    def predict(self, X):
        return np.zeros(np.atleast_2d(X).shape[0])

    def to_dict(self):
        return {"kind": "zero"}


def treatment_free_from_dict(d):
    return ZeroTreatmentFree() if d["kind"] == "zero" else TreatmentFreeModel.from_dict(d)


def treatment_free_grads(net, X, y):
    """Mean squared error on a batch and its gradients per parameter."""
    out = net.forward_train(X)[:, 0]
    resid = out - y
    gw, gb, _ = net.backward(X, (2.0 / y.size) * resid[:, None])
    return float(np.mean(resid * resid)), net.grads_flat(gw, gb)


def fit_treatment_free(X, y, hidden=32, epochs=30, batch_size=64, lr=1e-2, decay=0.99, seed=0):
    """Least-squares fit of the two-layer network by mini-batch Adam."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n < 2:
        raise ShapeError("treatment-free model needs at least two rows")
    rng = np.random.default_rng(seed)
    # start from the mean predictor
    net = DenseNet.init([X.shape[1], hidden, 1], rng, zero_output=True)
    net.biases[-1][:] = y.mean()
    opt = Adam(net.params(), lr=lr, decay=decay)
    bs = min(batch_size, n)
    losses = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            rows = perm[start:start + bs]
            opt.step(treatment_free_grads(net, X[rows], y[rows])[1], epoch)
        mse = float(np.mean((net.forward(X)[:, 0] - y) ** 2))
        if not np.isfinite(mse):
            raise OptimizationError(f"treatment-free fit diverged at epoch {epoch}", epoch=epoch)
        losses.append(mse)
    return TreatmentFreeModel(net, losses)

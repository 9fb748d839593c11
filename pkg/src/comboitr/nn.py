"""Sequential dense ReLU networks with hand-written reverse mode and Adam.

Everything is float64. Inputs are either a single vector of length ``r_0``
or a batch with one sample per row.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, OptimizationError, ShapeError, StateError

FORMAT_VERSION = 1


class DenseNet:
    """Feed-forward net ``T_L o relu o ... o relu o T_1``.

    ``weights[l]`` has shape ``(r_{l+1}, r_l)`` and ``biases[l]`` shape
    ``(r_{l+1},)``. The output layer has no activation.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=np.float64, ndmin=2) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {l}: weight has {w.shape[0]} rows, bias has {b.shape[0]}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(
                    f"layer {l}: expects {w.shape[1]} inputs, previous layer emits "
                    f"{self.weights[l - 1].shape[0]}"
                )
        self._cache = None

    @classmethod
    def init(cls, widths, rng, zero_output=False):
        """He-uniform weights, zero biases. ``widths = (r_0, ..., r_L)``."""
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ConfigError(f"invalid widths {widths}")
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        if zero_output:
            weights[-1][:] = 0.0
        return cls(weights, biases)

    @classmethod
    def zeros(cls, widths):
        return cls(
            [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
            [np.zeros(o) for o in widths[1:]],
        )

    @property
    def widths(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def n_in(self):
        return self.weights[0].shape[1]

    @property
    def n_out(self):
        return self.weights[-1].shape[0]

    def params(self):
        """Parameter arrays in a fixed order: W_1, b_1, ..., W_L, b_L."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x.reshape(1, -1) if single else x
        if xb.ndim != 2 or xb.shape[1] != self.n_in:
            raise ShapeError(f"layer 0: expects {self.n_in} inputs, got shape {x.shape}")
        return xb, single

    def forward(self, x):
        xb, single = self._as_batch(x)
        h = xb
        last = self.depth - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if l < last:
                h = np.maximum(h, 0.0)
        return h[0] if single else h

    def forward_train(self, x):
        """Forward pass that records activations for a following :meth:`backward`."""
        xb, single = self._as_batch(x)
        acts = [xb]
        pre = []
        h = xb
        last = self.depth - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if l < last else z
            acts.append(h)
        self._cache = (xb, acts, pre, single)
        return h[0] if single else h

    def backward(self, x, upstream):
        """Gradients of a scalar loss given ``upstream = dloss/doutput``.

        Returns ``(grad_weights, grad_biases, grad_input)``. Requires a prior
        :meth:`forward_train` on the same ``x``. The ReLU derivative at 0 is 0.
        """
        if self._cache is None:
            raise StateError("backward called without a recorded forward pass")
        xb, acts, pre, single = self._cache
        x_arr = np.asarray(x, dtype=np.float64)
        if x_arr is not xb and (x_arr.size != xb.size or not np.array_equal(x_arr.reshape(xb.shape), xb)):
            raise StateError("backward input does not match the recorded forward pass")
        g = np.asarray(upstream, dtype=np.float64).reshape(acts[-1].shape)
        gw = [None] * self.depth
        gb = [None] * self.depth
        for l in range(self.depth - 1, -1, -1):
            if l < self.depth - 1:
                g = g * (pre[l] > 0.0)
            gw[l] = g.T @ acts[l]
            gb[l] = g.sum(axis=0)
            g = g @ self.weights[l]
        grad_x = g[0] if single else g
        return gw, gb, grad_x

    def grads_flat(self, gw, gb):
        out = []
        for w, b in zip(gw, gb):
            out.extend((w, b))
        return out

    def to_dict(self):
        return {
            "format": "densenet",
            "version": FORMAT_VERSION,
            "widths": list(self.widths),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "densenet" or d.get("version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported network document {d.get('format')}/{d.get('version')}")
        net = cls(d["weights"], d["biases"])
        if list(net.widths) != list(d["widths"]):
            raise ShapeError("declared widths disagree with weight arrays")
        return net


def scheduled_lr(base_lr, epoch, decay):
    if not 0.0 < decay <= 1.0:
        raise ConfigError(f"learning-rate decay must lie in (0, 1], got {decay}")
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    return base_lr * decay**epoch


def penalty_grad(kind, lam, param):
    """Subgradient of ``lam * ||param||_2^2`` (``"l2"``) or ``lam * ||param||_1`` (``"l1"``)."""
    param = np.asarray(param, dtype=np.float64)
    if lam < 0:
        raise ConfigError("penalty coefficient must be non-negative")
    if not np.all(np.isfinite(param)):
        raise OptimizationError("non-finite parameter in penalty")
    kind = kind.lower()
    if kind == "l2":
        return 2.0 * lam * param
    if kind == "l1":
        return lam * np.sign(param)
    raise ConfigError(f"unknown penalty kind {kind!r}")


def penalty_value(kind, lam, params):
    kind = kind.lower()
    if kind == "l2":
        return lam * sum(float(np.sum(p * p)) for p in params)
    if kind == "l1":
        return lam * sum(float(np.sum(np.abs(p))) for p in params)
    raise ConfigError(f"unknown penalty kind {kind!r}")


class Adam:
    """Adam with bias correction and an exponential per-epoch schedule.

    Parameters are updated in place so that networks holding them see the change.
    """

    def __init__(self, params, lr=1e-2, decay=0.95, beta1=0.9, beta2=0.999, eps=1e-8):
        scheduled_lr(lr, 0, decay)
        self.params = list(params)
        self.lr = float(lr)
        self.decay = float(decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, epoch=0):
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradients for {len(self.params)} parameters")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise OptimizationError(f"non-finite gradient at step {self.t + 1}", step=self.t + 1)
        self.t += 1
        lr = scheduled_lr(self.lr, epoch, self.decay)
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr


def adam_step(state, params, grads, epoch=0):
    """Functional wrapper: one update of ``state`` applied to ``params``."""
    if state.params is not params and [id(p) for p in state.params] != [id(p) for p in params]:
        raise StateError("Adam state was built for a different parameter list")
    state.step(grads, epoch)
    return params, state

"""Budget-constrained allocation as a multi-choice knapsack.

Each subject receives exactly one combination; the population-average cost
may not exceed the budget ``B``. Costs live on an integer lattice: every
combination cost times ``scale`` must be an integer, and the dynamic program
runs over total integer spend ``0 .. floor(n * B * scale)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InfeasibleError, ShapeError, SizeError
from .kernels import mckp_dp

BRUTE_FORCE_LIMIT = 10**7
_REPR_TOL = 1e-9


def combo_cost(unit_costs, combo):
    """``a^T c`` for one combination (bit vector, bitmask with ``K``, or combo)."""
    c = np.asarray(unit_costs, dtype=np.float64)
    if np.any(c < 0):
        raise ConfigError("unit costs must be non-negative")
    bits = getattr(combo, "bits", combo)
    bits = np.asarray(bits, dtype=np.float64)
    if bits.shape != c.shape:
        raise ShapeError(f"combination has {bits.size} entries, costs {c.size}")
    return float(bits @ c)


@dataclass
class KnapsackInstance:
    """``delta``: ``(n, m)`` effects; ``costs``: ``(m,)`` combination costs;
    ``budget``: average per-subject budget; ``scale``: lattice denominator
    (one lattice unit of total spend is ``1 / scale`` currency)."""

    delta: np.ndarray
    costs: np.ndarray
    budget: float
    scale: float = 1.0

    def __post_init__(self):
        self.delta = np.atleast_2d(np.asarray(self.delta, dtype=np.float64))
        self.costs = np.asarray(self.costs, dtype=np.float64).reshape(-1)
        if self.delta.shape[1] != self.costs.size:
            raise ShapeError(f"{self.delta.shape[1]} combinations but {self.costs.size} costs")
        if np.any(self.costs < 0):
            raise ConfigError("combination costs must be non-negative")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")
        if self.scale <= 0:
            raise ConfigError("lattice scale must be positive")
        if not np.all(np.isfinite(self.delta)):
            raise ConfigError("treatment effects must be finite")

    @property
    def n(self):
        return self.delta.shape[0]

    @property
    def m(self):
        return self.delta.shape[1]

    @property
    def grid_step(self):
        """Lattice spacing in average-cost units."""
        return 1.0 / (self.scale * self.n)

    def lattice(self):
        """Integer costs and capacity, reduced by their common divisor."""
        scaled = self.costs * self.scale
        ic = np.rint(scaled)
        if np.any(np.abs(scaled - ic) > _REPR_TOL * np.maximum(1.0, np.abs(scaled))):
            raise ConfigError(f"costs {self.costs.tolist()} are not multiples of 1/{self.scale}")
        ic = ic.astype(np.int64)
        cap = int(math.floor(self.n * self.budget * self.scale + _REPR_TOL))
        g = int(np.gcd.reduce(ic[ic > 0])) if np.any(ic > 0) else 1
        if g > 1:
            ic //= g
            cap //= g
        return ic, cap, g


@dataclass
class AssignmentMatrix:
    choice: np.ndarray       # per-subject combination index
    objective: float         # (1/n) sum_i delta[i, choice_i]
    avg_cost: float
    budget: float

    @property
    def n(self):
        return self.choice.size

    def dense(self, m):
        d = np.zeros((self.n, m), dtype=np.int8)
        d[np.arange(self.n), self.choice] = 1
        return d


def _objective(delta, choice):
    return math.fsum(delta[np.arange(delta.shape[0]), choice]) / delta.shape[0]


def _assignment(inst, choice):
    choice = np.asarray(choice, dtype=np.int64)
    return AssignmentMatrix(choice, _objective(inst.delta, choice),
                            float(math.fsum(inst.costs[choice]) / inst.n), inst.budget)


def tie_order(costs):
    """Candidate order for ties: lower cost first, then lower index."""
    costs = np.asarray(costs)
    return np.lexsort((np.arange(costs.size), costs)).astype(np.int64)


def solve_mckp(inst, prune=False, max_cells=3 * 10**8):
    """Exact dynamic program over the integer budget lattice.

    ``Z_l(b) = max_{j: cost_j <= b} Z_{l-1}(b - cost_j) + delta_lj`` with
    ``Z_0 = 0``; the assignment is recovered by backpointers from the
    cheapest budget attaining ``Z_n(capacity)``.
    """
    icost, cap, _ = inst.lattice()
    if inst.n * (cap + 1) > max_cells:
        raise SizeError(f"lattice of {inst.n} x {cap + 1} cells exceeds {max_cells}; "
                        "use a coarser cost scale")
    delta = inst.delta
    if prune:
        delta = delta.copy()
        for i in range(inst.n):
            keep = dominance_prune(delta[i], icost)
            drop = np.ones(inst.m, dtype=bool)
            drop[keep] = False
            delta[i, drop] = -np.inf
    Z, choice, stuck = mckp_dp(delta, icost, cap, tie_order(icost))
    if stuck >= 0:
        raise InfeasibleError(
            f"no assignment fits the budget: subject {stuck} cannot be served "
            f"(cheapest combination costs {inst.costs.min()}, budget {inst.budget})",
            subject=int(stuck))
    best = Z[cap]
    b = int(np.flatnonzero(Z == best)[0])
    out = np.empty(inst.n, dtype=np.int64)
    for l in range(inst.n - 1, -1, -1):
        j = int(choice[l, b])
        out[l] = j
        b -= int(icost[j])
    return _assignment(inst, out)


def brute_force_mckp(inst, chunk=1 << 16):
    """Exhaustive search over all ``m^n`` assignments, vectorized in chunks.

    Among maximizers the one with the lowest total spend is returned.
    """
    n, m = inst.n, inst.m
    total = m**n
    if total > BRUTE_FORCE_LIMIT:
        raise SizeError(f"{m}^{n} assignments exceed the brute-force limit")
    icost, cap, _ = inst.lattice()
    place = m ** np.arange(n, dtype=np.int64)
    rows = np.arange(n)
    best_code, best_val, best_spend = -1, -np.inf, None
    for lo in range(0, total, chunk):
        codes = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        digits = (codes[:, None] // place) % m
        spend = icost[digits].sum(axis=1)
        val = inst.delta[rows, digits].sum(axis=1)
        val[spend > cap] = -np.inf
        top = val.max()
        if top == -np.inf or top < best_val:
            continue
        cand = np.flatnonzero(val == top)
        k = cand[np.argmin(spend[cand])]
        if top > best_val or spend[k] < best_spend:
            best_code, best_val, best_spend = int(codes[k]), float(top), int(spend[k])
    if best_code < 0:
        raise InfeasibleError("no assignment fits the budget")
    choice = (best_code // place) % m
    return _assignment(inst, choice)


def dominance_prune(delta_i, costs):
    """Indices of combinations not strictly dominated for one subject.

    ``l`` is dominated when some ``k`` has ``delta_k > delta_l`` and
    ``cost_k < cost_l``.
    """
    d = np.asarray(delta_i, dtype=np.float64)
    c = np.asarray(costs, dtype=np.float64)
    dominated = ((d[None, :] > d[:, None]) & (c[None, :] < c[:, None])).any(axis=1)
    return np.flatnonzero(~dominated)


@dataclass(frozen=True)
class BoundCheck:
    holds: bool
    z_true: float
    z_est: float
    bound: float

    @property
    def gap(self):
        return abs(self.z_true - self.z_est)


def perturbation_bound_check(delta_true, delta_est, costs, budget, scale=1.0, slack=1e-12):
    """``|Z*(B) - Z_hat(B)| <= (1/n) sum_i max_j |delta*_ij - delta_hat_ij|``."""
    delta_true = np.atleast_2d(np.asarray(delta_true, dtype=np.float64))
    delta_est = np.atleast_2d(np.asarray(delta_est, dtype=np.float64))
    if delta_true.shape != delta_est.shape:
        raise ShapeError("true and estimated effect matrices differ in shape")
    z_true = solve_mckp(KnapsackInstance(delta_true, costs, budget, scale)).objective
    z_est = solve_mckp(KnapsackInstance(delta_est, costs, budget, scale)).objective
    bound = float(np.abs(delta_true - delta_est).max(axis=1).mean())
    return BoundCheck(abs(z_true - z_est) <= bound + slack, z_true, z_est, bound)


def budget_sweep(delta, costs, budgets, scale=1.0):
    """Solve one instance per budget; returns ``[(budget, AssignmentMatrix)]``."""
    return [(float(B), solve_mckp(KnapsackInstance(delta, costs, B, scale))) for B in budgets]

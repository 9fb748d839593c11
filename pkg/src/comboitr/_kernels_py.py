"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``COMBOITR_PURE=1`` is set. Signatures match the extension exactly.
"""
import numpy as np


def bspline_basis(x, knots, degree):
    """Basis values ``(len(x), len(knots) - degree - 1)`` by the Cox-de Boor recursion.

    ``knots`` is the full (already clamped) knot vector. ``x`` is assumed to
    lie inside ``[knots[degree], knots[-degree - 1]]``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    t = np.ascontiguousarray(knots, dtype=np.float64)
    p = int(degree)
    n_basis = t.size - p - 1
    hi = t[n_basis]
    # degree-0 indicators on half-open spans; the right boundary joins the last non-empty span
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, p, n_basis - 1)
    at_end = x >= hi
    if np.any(at_end):
        last = n_basis - 1
        while last > p and t[last] == t[last + 1]:
            last -= 1
        span = np.where(at_end, last, span)
    B = np.zeros((x.size, t.size - 1))
    B[np.arange(x.size), span] = 1.0
    for d in range(1, p + 1):
        nb = t.size - 1 - d
        new = np.zeros((x.size, nb))
        for i in range(nb):
            den1 = t[i + d] - t[i]
            den2 = t[i + d + 1] - t[i + 1]
            term = 0.0
            if den1 > 0:
                term = (x - t[i]) / den1 * B[:, i]
            if den2 > 0:
                term = term + (t[i + d + 1] - x) / den2 * B[:, i + 1]
            new[:, i] = term
        B = new
    return B


def mckp_dp(delta, costs, capacity, order):
    """Forward pass of the multi-choice knapsack dynamic program.

    ``delta`` is ``(n, m)``; ``costs`` integer lattice costs; ``order`` the
    candidate order in which ties are resolved (first wins). Returns
    ``(Z, choice, stuck)``: final value table over budgets ``0..capacity``,
    per-subject backpointers, and the first subject with no feasible state
    (``-1`` when feasible).
    """
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    costs = np.ascontiguousarray(costs, dtype=np.int64)
    n, m = delta.shape
    cap = int(capacity)
    Z = np.zeros(cap + 1)
    choice = np.full((n, cap + 1), -1, dtype=np.int32)
    for l in range(n):
        new = np.full(cap + 1, -np.inf)
        row = choice[l]
        for j in order:
            c = int(costs[j])
            if c > cap:
                continue
            cand = Z[: cap + 1 - c] + delta[l, j]
            tail = new[c:]
            better = cand > tail
            tail[better] = cand[better]
            row[c:][better] = j
        Z = new
        if Z[cap] == -np.inf:
            return Z, choice, l
    return Z, choice, -1

import numpy as np
import pytest
from hypothesis import given, strategies as st

from comboitr.budget import (KnapsackInstance, brute_force_mckp, budget_sweep, combo_cost,
                             dominance_prune, perturbation_bound_check, solve_mckp)
from comboitr.errors import ConfigError, InfeasibleError, SizeError
from comboitr.treatments import TreatmentSpace


def dyadic(rng, shape, scale=64):
    """Effects on a 1/scale grid, so sums compare exactly in floating point."""
    return np.round(rng.normal(size=shape) * scale) / scale


@st.composite
def instances(draw, max_n=6, max_m=4):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_m))
    delta = np.array(draw(st.lists(st.lists(st.integers(-64, 64), min_size=m, max_size=m),
                                   min_size=n, max_size=n)), dtype=float) / 16
    costs = np.array([0] + draw(st.lists(st.integers(0, 10), min_size=m - 1, max_size=m - 1)), float)
    budget = draw(st.integers(0, 10 * n)) / n
    return KnapsackInstance(delta, costs, budget)


def test_combo_cost_examples():
    assert combo_cost([79, 100, 66], (0, 0, 0)) == 0
    assert combo_cost([79, 100, 66], (1, 0, 1)) == 145
    space = TreatmentSpace.full(3)
    c = space.costs([79, 100, 66])
    for i, a in enumerate(space.masks):
        for j, b in enumerate(space.masks):
            if a & b == a:  # b adds treatments to a
                assert c[j] >= c[i]


def test_slack_budget_is_unconstrained_argmax(rng):
    delta = dyadic(rng, (30, 5))
    delta[:, 3] = delta[:, 1]  # ties resolved to the cheaper combo
    costs = np.array([0, 2, 1, 1, 4.0])
    sol = solve_mckp(KnapsackInstance(delta, costs, costs.max()))
    best = delta.max(axis=1)
    assert sol.objective == pytest.approx(np.mean(best), abs=0)
    for i, j in enumerate(sol.choice):
        tied = np.flatnonzero(delta[i] == best[i])
        assert costs[j] == costs[tied].min()


def test_zero_budget_assigns_null(rng):
    delta = dyadic(rng, (12, 4))
    sol = solve_mckp(KnapsackInstance(delta, [0, 1, 2, 3], 0.0))
    assert np.all(sol.choice == 0)
    assert sol.objective == np.mean(delta[:, 0])


def test_brute_force_single_subject():
    sol = brute_force_mckp(KnapsackInstance([[1.0, 5.0, 3.0]], [0, 4, 2], 3.0))
    assert sol.choice.tolist() == [2]


def test_brute_force_two_by_two():
    # costs (0, 1), budget 0.5 -> total spend 1: exactly one subject may be treated
    delta = np.array([[0.0, 2.0], [0.0, 3.0]])
    sol = brute_force_mckp(KnapsackInstance(delta, [0, 1], 0.5))
    assert sol.choice.tolist() == [0, 1] and sol.objective == 1.5
    assert solve_mckp(KnapsackInstance(delta, [0, 1], 0.5)).choice.tolist() == [0, 1]


def test_brute_force_size_limit():
    with pytest.raises(SizeError):
        brute_force_mckp(KnapsackInstance(np.zeros((12, 6)), np.zeros(6), 1.0))


@given(instances())
def test_dp_matches_brute_force(inst):
    assert solve_mckp(inst).objective == brute_force_mckp(inst).objective


@given(instances())
def test_feasibility(inst):
    sol = solve_mckp(inst)
    assert np.all(sol.dense(inst.m).sum(axis=1) == 1)
    assert sol.avg_cost <= inst.budget + 1e-12


def test_dominance_prune_examples():
    assert dominance_prune([5, 3], [1, 2]).tolist() == [0]
    assert dominance_prune([5, 3], [2, 2]).tolist() == [0, 1]


def test_pruning_preserves_objective(rng):
    for _ in range(100):
        n, m = int(rng.integers(1, 15)), int(rng.integers(2, 7))
        costs = np.concatenate([[0], rng.integers(0, 10, m - 1)]).astype(float)
        inst = KnapsackInstance(dyadic(rng, (n, m)), costs, float(rng.integers(0, 10)))
        assert solve_mckp(inst, prune=True).objective == solve_mckp(inst).objective


def test_bound_identical_and_shift(rng):
    delta = dyadic(rng, (20, 4))
    costs = [0, 1, 2, 3]
    same = perturbation_bound_check(delta, delta, costs, 1.0)
    assert same.holds and same.gap == 0 and same.bound == 0
    kappa = 0.375
    shift = perturbation_bound_check(delta, delta + kappa, costs, 1.0)
    assert shift.holds
    assert shift.z_est - shift.z_true == kappa and shift.bound == kappa


@given(instances(), st.integers(0, 2**31 - 1))
def test_bound_random(inst, seed):
    noise = np.random.default_rng(seed).normal(scale=0.5, size=inst.delta.shape)
    assert perturbation_bound_check(inst.delta, inst.delta + noise, inst.costs, inst.budget).holds


def test_budget_monotone(rng):
    delta = rng.normal(size=(40, 6))
    costs = np.array([0, 3, 1, 4, 2, 6.0])
    vals = [sol.objective for _, sol in budget_sweep(delta, costs, np.linspace(0, 6, 25))]
    assert np.all(np.diff(vals) >= 0)


def test_unit_cost_on_one_treatment_caps_its_share(rng):
    space = TreatmentSpace(3, [0, 1, 2, 3, 4, 7])
    ccost = space.costs([0, 1, 0])  # only the second treatment costs
    delta = rng.normal(size=(50, 6)) + 2 * space.bits[:, 1]
    for q in (0.1, 0.3, 0.5):
        sol = solve_mckp(KnapsackInstance(delta, ccost, q))
        assert np.mean(space.bits[sol.choice, 1]) <= q


def test_binary_quantile_rule(rng):
    n = 37
    delta = np.column_stack([np.zeros(n), dyadic(rng, n)])
    delta[:, 1] = np.abs(delta[:, 1]) + 1 / 64  # strictly positive contrasts
    for B in (0.0, 0.2, 0.5, 1.0):
        sol = solve_mckp(KnapsackInstance(delta, [0, 1], B))
        k = int(np.floor(n * B))
        top = np.argsort(-delta[:, 1], kind="stable")[:k]
        assert set(np.flatnonzero(sol.choice == 1)) == set(top.tolist())


def test_infeasible_reports_subject():
    with pytest.raises(InfeasibleError) as info:
        solve_mckp(KnapsackInstance(np.zeros((3, 2)), [1, 2], 0.5))
    assert info.value.subject is not None


def test_lattice_scale():
    inst = KnapsackInstance([[0.0, 1.0], [0.0, 2.0]], [0, 0.5], 0.25, scale=2)
    assert solve_mckp(inst).objective == 1.0
    with pytest.raises(ConfigError):
        solve_mckp(KnapsackInstance([[0.0, 1.0]], [0, 0.3], 1.0))

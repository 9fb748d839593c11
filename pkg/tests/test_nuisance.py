import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from comboitr.nuisance import (PropensityModel, _design, fit_propensity, fit_treatment_free,
                               group_lasso_threshold, predict_propensity, propensity_gradient,
                               propensity_objective, stabilize, stabilized_weight,
                               treatment_frequencies)
from comboitr.simdata import SimSetting, simulate

from conftest import central_diff, rel_err


def test_zero_coefficients_give_uniform():
    model = PropensityModel(np.zeros((4, 5)), np.full(5, 0.2))
    np.testing.assert_allclose(predict_propensity(model, [0.3, -0.2, 0.9]), 0.2)


def test_two_class_logit():
    coef = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
    model = PropensityModel(coef, np.array([0.5, 0.5]), p_min=0.0)
    np.testing.assert_allclose(predict_propensity(model, [1.0]), [0.75, 0.25], rtol=1e-14)


@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(-20, 20)),
       hnp.arrays(np.float64, (10, 2), elements=st.floats(-5, 5)))
def test_simplex_invariant(coef, X):
    P = PropensityModel(coef, np.full(6, 1 / 6)).predict(X)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-10)


def test_simplex_on_1000_inputs(rng):
    model = PropensityModel(rng.normal(size=(4, 6)) * 3, np.full(6, 1 / 6))
    P = model.predict(rng.uniform(-1, 1, size=(1000, 3)))
    assert P.min() >= 0
    assert np.abs(P.sum(axis=1) - 1).max() <= 1e-10


def test_no_signal_fit_recovers_frequencies(rng):
    X = rng.uniform(-1, 1, size=(400, 3))
    idx = np.tile([0, 1], 200)
    model = fit_propensity(np.zeros((400, 3)), idx, 2, lam=0.0)
    Z = _design(np.zeros((400, 3)))
    g = propensity_gradient(model.coef, Z, np.eye(2)[idx])
    assert np.linalg.norm(g) < 1e-6
    np.testing.assert_allclose(model.predict(X[:5]), 0.5, atol=1e-6)
    d = model.Gamma[:, 0] - model.Gamma[:, 1]
    np.testing.assert_allclose(d, d[0])


def test_descent_on_separable_data(rng):
    X = np.array([[-1.0], [-0.5], [0.5], [1.0]])
    idx = np.array([0, 0, 1, 1])
    model = fit_propensity(X, idx, 2, lam=0.0, max_iter=50, record=True)
    Z, Y = _design(X), np.eye(2)[idx]
    assert propensity_objective(model.coef, Z, Y, 0.0) <= propensity_objective(np.zeros((2, 2)), Z, Y, 0.0)
    h = np.array(model.history)
    assert np.all(np.diff(h) <= 0)


def test_objective_non_increasing_with_penalty(rng):
    X = rng.uniform(-1, 1, size=(300, 4))
    idx = (X[:, 0] + 0.5 * rng.normal(size=300) > 0).astype(int) + (X[:, 1] > 0.3)
    model = fit_propensity(X, idx, 3, lam=0.02, record=True)
    assert np.all(np.diff(model.history) <= 1e-15)


def test_group_lasso_shutoff_threshold(rng):
    X = rng.uniform(-1, 1, size=(500, 4))
    idx = np.where(X[:, 0] + 0.3 * rng.normal(size=500) > 0, 1, 0) + 2 * (rng.random(500) < 0.3)
    lam0 = group_lasso_threshold(X, idx, 4)
    off = fit_propensity(X, idx, 4, lam=lam0 * 1.0001)
    assert np.all(off.Gamma == 0.0)
    on = fit_propensity(X, idx, 4, lam=lam0 * 0.9)
    assert np.any(on.Gamma != 0.0)


def test_propensity_gradient_finite_differences(rng):
    X = rng.uniform(-1, 1, size=(40, 3))
    idx = rng.integers(0, 4, 40)
    Z, Y = _design(X), np.eye(4)[idx]
    coef = rng.normal(size=(4, 4))
    g = propensity_gradient(coef, Z, Y)
    num = central_diff(lambda: propensity_objective(coef, Z, Y, 0.0), coef)
    assert rel_err(g, num) < 1e-4


def test_stabilized_weight_examples():
    assert stabilize(0.3, 0.3) == 1.0
    assert stabilize(0.2, 0.1) == pytest.approx(2.0)
    assert stabilize(0.5, 1e-4, w_max=20) == 20.0
    assert stabilize(0.01, 0.9, w_max=20) == 1 / 20


def test_stabilized_weight_from_model():
    coef = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
    model = PropensityModel(coef, np.array([0.6, 0.4]), p_min=0.0)
    assert stabilized_weight(model, [1.0], 0) == pytest.approx(0.8)
    assert stabilized_weight(model, [1.0], 1) == pytest.approx(1.6)


def test_marginal_model_weights_are_one(rng):
    X = rng.uniform(-1, 1, size=(300, 5))
    idx = rng.integers(0, 6, 300)
    freq = treatment_frequencies(idx, 6)
    model = PropensityModel.marginal(freq, 5)
    np.testing.assert_allclose(model.weights(X, idx), 1.0, rtol=1e-12)


def test_missing_combination_warns():
    with pytest.warns(UserWarning, match="never observed"):
        f = treatment_frequencies(np.array([0, 0, 2]), 3)
    assert f[1] > 0 and f.sum() == pytest.approx(1.0)


def test_uniform_assignment_mean_propensity():
    s = simulate(SimSetting(1), 2000, seed=3)
    model = fit_propensity(s.X, s.idx, 6, lam=0.01)
    P = model.predict(s.X)
    se = np.sqrt((1 / 6) * (5 / 6) / 2000)
    assert np.all(np.abs(P.mean(axis=0) - 1 / 6) < 3 * se)


def test_treatment_free_constant(rng):
    X = rng.uniform(-1, 1, size=(200, 3))
    fit = fit_treatment_free(X, np.full(200, 2.5), epochs=50)
    assert fit.losses[-1] <= 1e-4


def test_treatment_free_relu_target(rng):
    X = rng.uniform(-1, 1, size=(500, 2))
    y = 2 * np.maximum(X[:, 0], 0)
    fit = fit_treatment_free(X, y, hidden=16, epochs=200, seed=1)
    assert np.mean((fit.predict(X) - y) ** 2) <= 1e-3


def test_treatment_free_beats_mean(rng):
    X = rng.uniform(-1, 1, size=(300, 4))
    y = np.sin(2 * X[:, 0]) + rng.normal(scale=0.3, size=300)
    fit = fit_treatment_free(X, y, epochs=60)
    assert np.mean((fit.predict(X) - y) ** 2) <= np.var(y)


def test_treatment_free_gradient_audit(rng):
    X = rng.uniform(-1, 1, size=(20, 3))
    y = rng.normal(size=20)
    net = fit_treatment_free(X, y, hidden=16, epochs=1).net
    for b in net.biases:
        b += 0.05  # move pre-activations off the ReLU kink

    def mse():
        return float(np.mean((net.forward(X)[:, 0] - y) ** 2))

    out = net.forward_train(X)[:, 0]
    gw, gb, _ = net.backward(X, (2 / 20) * (out - y)[:, None])
    for p, g in zip(net.params(), net.grads_flat(gw, gb)):
        assert rel_err(g, central_diff(mse, p)) < 1e-4


def test_round_trip(rng):
    X = rng.uniform(-1, 1, size=(100, 2))
    idx = rng.integers(0, 3, 100)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = fit_propensity(X, idx, 3, lam=0.01)
    back = PropensityModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.predict(X), m.predict(X))

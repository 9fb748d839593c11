import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def constant_model(alpha, beta_raw, K=None, masks=None):
    """DemModel with ``alpha(x) = alpha`` for every x and the given raw ``beta``
    rows (the null combination's row must be zero)."""
    from comboitr.encoders import CovariateEncoder, DemModel, TreatmentEncoder
    from comboitr.nn import DenseNet
    from comboitr.treatments import TreatmentSpace

    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta_raw = np.atleast_2d(np.asarray(beta_raw, dtype=float))
    r = alpha.size
    space = TreatmentSpace(K, masks, warn_missing_null=False)
    # singletons fix W; the dictionary carries the rest
    low = space.sizes <= 1
    W, *_ = np.linalg.lstsq(space.bits[low], beta_raw[low], rcond=None)
    W = W.T
    V = (beta_raw - space.bits @ W.T).T
    V[:, space.sizes < 2] = 0.0
    trt = TreatmentEncoder(space, W, "dictionary", V=V)
    np.testing.assert_allclose(trt.raw(np.arange(len(space))), beta_raw, atol=1e-12)
    cov = CovariateEncoder("network", DenseNet([np.zeros((r, 2))], [alpha]), 2)
    return DemModel(cov, trt, fitted=True)


ACCEPTANCE_LINES = []


def report_criterion(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

import itertools
import math

import numpy as np
import pytest

from ancilla_moments.gstate import from_table_variances

TABLE_X = (0.0193, 0.021, 0.060, 0.015)
TABLE_P = (359.0, 398.0, 1.64, 1419.0)


def gh_moment(mean, cov, exponents, order=24):
    """Raw Gaussian moment by tensor Gauss-Hermite quadrature (independent of Wick)."""
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    idx = [i for i, k in enumerate(exponents) if k]
    if not idx:
        return 1.0
    mu = mean[idx]
    sub = cov[np.ix_(idx, idx)]
    w, v = np.linalg.eigh(sub)
    factor = v * np.sqrt(np.clip(w, 0, None))
    z, wz = np.polynomial.hermite_e.hermegauss(order)
    wz = wz / math.sqrt(2 * math.pi)
    total = 0.0
    for pts in itertools.product(range(order), repeat=len(idx)):
        zz = z[list(pts)]
        xx = mu + factor @ zz
        total += np.prod(wz[list(pts)]) * np.prod([xx[j] ** exponents[i] for j, i in enumerate(idx)])
    return float(total)


@pytest.fixture(scope="session")
def table_state():
    return from_table_variances(TABLE_X, TABLE_P)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    store = request.config.stash[ACCEPTANCE_KEY]

    def record(number, ok, detail):
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

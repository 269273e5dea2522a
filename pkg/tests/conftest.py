import pathlib

import numpy as np
import pytest

from varsmc.data import DgpConfig, HarInputs, build_har_inputs, generate_synthetic_market

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]
FIXTURE_CSV = REPO_ROOT / "fixtures" / "synthetic_market.csv"


@pytest.fixture(scope="session")
def small_series():
    """400-observation synthetic market shared across tests."""
    return generate_synthetic_market(7, 400)


@pytest.fixture(scope="session")
def small_inputs(small_series):
    return build_har_inputs(small_series)


@pytest.fixture(scope="session")
def fixture_csv():
    assert FIXTURE_CSV.exists(), "bundled fixture missing"
    return FIXTURE_CSV


def make_inputs(rv_d, rv_w=None, rv_m=None, valid_from=0):
    """Hand-built HarInputs for recursion tests (no validity bookkeeping)."""
    rv_d = np.asarray(rv_d, dtype=np.float64)
    rv_w = rv_d if rv_w is None else np.asarray(rv_w, dtype=np.float64)
    rv_m = rv_d if rv_m is None else np.asarray(rv_m, dtype=np.float64)
    zeros = np.zeros_like(rv_d)
    return HarInputs(
        rv_d=rv_d, rv_w=rv_w, rv_m=rv_m,
        neg_ret_d=zeros, neg_ret_w=zeros, neg_ret_m=zeros,
        valid_from=valid_from,
    )


def rhargarch_simulate(params, n, seed, burn=200):
    """Independent simulator for the realized HAR-GARCH process.

    Generates (returns, rv) per the model equations, feeding the variance
    recursion with trailing means of the simulated realized measure. Written
    without touching the estimation code so it can serve as its oracle.
    """
    mu, omega, beta, gd, gw, gm, xi, phi, tau1, tau2, su2 = params
    rng = np.random.default_rng(seed)
    total = n + burn
    z = rng.standard_normal(total)
    u = rng.standard_normal(total) * np.sqrt(su2)

    y = np.empty(total)
    rv = np.empty(total)
    h_prev = omega / max(1.0 - beta - (gd + gw + gm) * phi, 0.05)
    rv_hist = [max(xi + phi * h_prev, 1e-4)] * 22
    for t in range(total):
        rv_d = rv_hist[-1]
        rv_w = float(np.mean(rv_hist[-5:]))
        rv_m = float(np.mean(rv_hist[-22:]))
        h = omega + beta * h_prev + gd * rv_d + gw * rv_w + gm * rv_m
        y[t] = mu + np.sqrt(h) * z[t]
        rv[t] = max(xi + phi * h + tau1 * z[t] + tau2 * (z[t] ** 2 - 1.0) + u[t], 1e-6)
        rv_hist.append(rv[t])
        rv_hist.pop(0)
        h_prev = h
    return y[burn:], rv[burn:]

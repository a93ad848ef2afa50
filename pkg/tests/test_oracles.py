"""Reference values: Fourier call price, Black-Scholes, exact flows, fixtures."""

import dataclasses
import math

import numpy as np
import pytest

from sdelab import brownian as bw
from sdelab import models, oracles as orc, schemes
from sdelab.oracles import FourierSettings, OracleError

HESTON = models.HestonParams(
    mu=0.0319,
    kappa=5.07,
    lam=0.0457,
    theta=0.48,
    rho=-0.7,
    s0=100.0,
    v0=0.05,
    r=0.0319,
)


@pytest.fixture(scope="module")
def heston_price():
    return orc.heston_call_price(HESTON, 105.0, 1.0)


# ---------------------------------------------------------------------------
# Fourier call price


def test_heston_price_matches_frozen_value(heston_price):
    assert math.isclose(heston_price, 7.462531075585542, abs_tol=1e-9)
    assert abs(heston_price - 7.46253) < 5e-3


def test_heston_price_stable_under_quadrature_changes(heston_price):
    alt = orc.heston_call_price(
        HESTON, 105.0, 1.0, FourierSettings(nodes=512, truncation=150.0)
    )
    assert abs(alt - heston_price) < 1e-4


def test_heston_zero_strike_is_discounted_forward():
    assert orc.heston_call_price(HESTON, 0.0, 1.0) == 100.0
    drifted = dataclasses.replace(HESTON, mu=0.05, r=0.02)
    expect = 100.0 * math.exp((0.05 - 0.02) * 2.0)
    assert math.isclose(orc.heston_call_price(drifted, 0.0, 2.0), expect, rel_tol=1e-15)


def test_heston_degenerate_vol_matches_black_scholes():
    deg = dataclasses.replace(HESTON, theta=1e-4, v0=HESTON.lam)
    bs = orc.black_scholes_call(100.0, 105.0, math.sqrt(HESTON.lam), 1.0, r=HESTON.r)
    assert abs(orc.heston_call_price(deg, 105.0, 1.0) - bs) <= 1e-4


def test_heston_unstable_integral_raises():
    # vanishing vol-of-vol makes the damped integrand too stiff to stabilize
    deg = dataclasses.replace(HESTON, theta=1e-6, v0=HESTON.lam)
    with pytest.raises(OracleError, match="stabilize"):
        orc.heston_call_price(deg, 105.0, 1.0)


def test_heston_damping_beyond_moment_bound_raises():
    with pytest.raises(OracleError, match="damping"):
        orc.heston_call_price(HESTON, 105.0, 1.0, FourierSettings(damping=50.0))


def test_heston_price_input_guards():
    with pytest.raises(OracleError):
        orc.heston_call_price(HESTON, 105.0, 0.0)
    with pytest.raises(OracleError):
        orc.heston_call_price(HESTON, -5.0, 1.0)


def test_fourier_settings_validation():
    with pytest.raises(OracleError):
        FourierSettings(nodes=32)
    with pytest.raises(OracleError):
        FourierSettings(truncation=0.0)
    with pytest.raises(OracleError):
        FourierSettings(damping=0.0)
    with pytest.raises(OracleError):
        FourierSettings(stability_tol=0.0)


def test_heston_call_monotone_and_convex_in_strike():
    fast = FourierSettings(nodes=256)
    strikes = np.linspace(85.0, 125.0, 12)
    prices = [orc.heston_call_price(HESTON, k, 1.0, fast) for k in strikes]
    assert all(b < a for a, b in zip(prices, prices[1:]))
    second = np.diff(prices, n=2)
    assert (second > -1e-9).all()


# ---------------------------------------------------------------------------
# Black-Scholes


def test_black_scholes_frozen_value():
    assert math.isclose(
        orc.black_scholes_call(100.0, 100.0, 0.2, 1.0, r=0.05),
        10.450583572185579,
        rel_tol=1e-12,
    )


def test_black_scholes_limits():
    assert orc.black_scholes_call(100.0, 0.0, 0.2, 1.0, r=0.05) == 100.0
    intrinsic = math.exp(-0.05) * (100.0 * math.exp(0.05) - 90.0)
    assert math.isclose(
        orc.black_scholes_call(100.0, 90.0, 0.0, 1.0, r=0.05), intrinsic, rel_tol=1e-15
    )
    with pytest.raises(OracleError):
        orc.black_scholes_call(0.0, 100.0, 0.2, 1.0)
    with pytest.raises(OracleError):
        orc.black_scholes_call(100.0, -1.0, 0.2, 1.0)
    with pytest.raises(OracleError):
        orc.black_scholes_call(100.0, 100.0, 0.2, -1.0)


def test_black_scholes_put_limits():
    assert orc.black_scholes_put(100.0, 0.0, 0.2, 1.0, r=0.05) == 0.0
    strikes = np.linspace(80.0, 120.0, 9)
    puts = [orc.black_scholes_put(100.0, k, 0.2, 1.0, r=0.05) for k in strikes]
    assert all(p >= 0.0 for p in puts)
    assert all(b > a for a, b in zip(puts, puts[1:]))


# ---------------------------------------------------------------------------
# exact flows


def test_gbm_exact_nodes_deterministic_and_shapes():
    p = models.CevParams(mu=0.1, sigma=0.3, gamma=1.0, s0=2.0)
    n = 8
    vals = orc.gbm_exact_nodes(p, 2.0, n, np.zeros(n + 1))
    t = np.arange(n + 1) * 0.25
    assert np.allclose(vals, 2.0 * np.exp((0.1 - 0.045) * t), rtol=1e-15)
    w = np.array([[0.0] * (n + 1), [0.5] * (n + 1)])
    batch = orc.gbm_exact_nodes(p, 2.0, n, w)
    assert batch.shape == (2, n + 1)
    assert math.isclose(
        batch[1, -1], 2.0 * math.exp((0.1 - 0.045) * 2.0 + 0.3 * 0.5), rel_tol=1e-15
    )
    with pytest.raises(OracleError, match="gamma"):
        orc.gbm_exact_nodes(
            models.CevParams(mu=0.1, sigma=0.3, gamma=0.5, s0=2.0), 1.0, 4, np.zeros(5)
        )
    with pytest.raises(OracleError):
        orc.gbm_exact_nodes(p, 1.0, 4, np.zeros(4))


def test_cir_mean_flow():
    p = models.CirParams(kappa=5.07, lam=0.0457, theta=0.48, x0=0.05)
    assert orc.cir_mean(p, 0.0) == 0.05
    assert math.isclose(float(orc.cir_mean(p, 50.0)), p.lam, rel_tol=1e-8)
    # mean-reversion ODE m' = kappa (lam - m), checked by central difference
    h = 1e-5
    for t in (0.1, 1.0, 3.0):
        lhs = float(orc.cir_mean(p, t + h) - orc.cir_mean(p, t - h)) / (2.0 * h)
        rhs = p.kappa * (p.lam - float(orc.cir_mean(p, t)))
        assert abs(lhs - rhs) <= 1e-8
    grid = orc.cir_mean(p, np.array([0.0, 1.0, 2.0]))
    assert grid.shape == (3,) and (np.diff(grid) < 0).all()  # x0 > lam decays
    with pytest.raises(OracleError):
        orc.cir_mean(p, -1.0)


# ---------------------------------------------------------------------------
# pinned absolute-mean fixture and its reciprocal square-root process


def test_absolute_mean_fixture_is_pinned():
    p = models.ThreeHalvesParams(c1=1.2, c2=0.8, c3=1.0, v0=0.5)
    assert orc.three_halves_abs_mean_fixture(p, 4.0) == 0.566217
    with pytest.raises(OracleError, match="pinned"):
        orc.three_halves_abs_mean_fixture(dataclasses.replace(p, c1=1.3), 4.0)
    with pytest.raises(OracleError, match="pinned"):
        orc.three_halves_abs_mean_fixture(p, 1.0)


def test_inverse_cir_parameter_map():
    inv = orc.three_halves_inverse_cir(
        models.ThreeHalvesParams(c1=1.2, c2=0.8, c3=1.0, v0=0.5)
    )
    assert math.isclose(inv.kappa, 0.96, rel_tol=1e-15)
    assert math.isclose(inv.lam, 2.2916666666666667, rel_tol=1e-15)
    assert inv.theta == 1.0 and inv.x0 == 2.0


def test_reciprocal_process_reproduces_absolute_mean():
    # E|V_T| = E[1/X_T] where X is the reciprocal square-root process; the
    # positivity-preserving implicit scheme on X cross-checks the fixture.
    inv = orc.three_halves_inverse_cir(
        models.ThreeHalvesParams(c1=1.2, c2=0.8, c3=1.0, v0=0.5)
    )
    cir = models.build_model("cir", inv)
    cfg = schemes.StepperConfig(scheme_id="cir_implicit_sqrt_euler")
    n, n_samples = 2**12, 20_000
    dt = 4.0 / n
    total = total_sq = 0.0
    for start in range(0, n_samples, 1024):
        idx = np.arange(start, min(start + 1024, n_samples))
        incr = (bw.batch_standard_normals(123, idx, 0, n) * math.sqrt(dt))[None]
        res = schemes.simulate_batch(cfg, cir, dt, incr)
        v = 1.0 / res.terminal[0]
        total += v.sum()
        total_sq += (v * v).sum()
    mean = total / n_samples
    se = math.sqrt((total_sq / n_samples - mean * mean) / (n_samples - 1))
    assert se < 4e-3
    assert abs(mean - 0.566217) <= 3.0 * se

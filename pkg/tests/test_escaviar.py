import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dccal.errors import FitError, InfeasibleParams
from dccal.escaviar import (
    AssetRiskParams,
    filter_asset,
    fit_asset,
    implied_volatility,
    quantile_recursion,
    stage1_loss,
)
from dccal.simulate import DgpSpec, simulate_panel

Q2_NORMAL = 3.8415
G0_NORMAL = -0.8610


def _garch_series(T, seed):
    return simulate_panel(DgpSpec(n=1, T=T, seed=seed)).panel.values[:, 0]


def test_degenerate_recursion_is_constant(rng):
    r = rng.normal(size=300)
    r -= r.mean()
    p = AssetRiskParams(alpha_q=0.0, beta=0.0, q=-1.96, gamma0=-0.86)
    fit = filter_asset(r, p, 0.025)
    level = -1.96 * np.sqrt(np.var(r))
    np.testing.assert_allclose(fit.var_path[1:], level, rtol=1e-12)
    # with the initial state at the targeted level the path is flat from t=0
    fit0 = filter_asset(r, p, 0.025, q2_init=1.96 ** 2 * np.var(r))
    np.testing.assert_allclose(fit0.var_path, level, rtol=1e-12)


def test_es_ratio_from_gamma0(rng):
    r = rng.normal(size=200)
    fit = filter_asset(r, AssetRiskParams(0.3, 0.8, -1.96, G0_NORMAL), 0.025)
    np.testing.assert_allclose(fit.es_path / fit.var_path, np.sqrt(1.4227), atol=1e-4)
    assert np.sqrt(1.4227) == pytest.approx(1.1928, abs=1e-4)


def test_one_step_hand_recursion():
    r = np.array([2.0, 0.0, 0.0])
    out = quantile_recursion(r, alpha_q=0.4, beta=0.8, q=-np.sqrt(3.8415), sample_var=1.0, q2_init=3.8415)
    assert out[1] == pytest.approx(5.0415, abs=1e-10)
    assert out.size == r.size + 1


def test_variance_targeting_identity(rng):
    r = rng.normal(scale=1.7, size=500)
    p = AssetRiskParams(0.35, 0.85, -2.0, -0.8)
    V = float(np.var(r))
    omega, a, b = p.implied_garch(V)
    assert omega / (1.0 - a - b) == pytest.approx(V, rel=1e-12)


def test_implied_volatility_identity(rng):
    r = rng.normal(size=400)
    fit = filter_asset(r, AssetRiskParams(0.3, 0.85, -2.1, -0.7), 0.025)
    h = implied_volatility(fit)
    assert np.all(h > 0)
    np.testing.assert_allclose(fit.params.q * h, fit.var_path, rtol=1e-12)
    assert np.all(np.abs(fit.es_path) > np.abs(fit.var_path))


def test_implied_volatility_simple():
    p = AssetRiskParams(0.0, 0.0, -2.0, 0.0)
    r = np.tile([1.0, -1.0], 30)
    fit = filter_asset(r, p, 0.025, q2_init=4.0)
    np.testing.assert_allclose(implied_volatility(fit), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 20.0))
def test_scale_covariance(seed, c):
    r = np.random.default_rng(seed).normal(size=120)
    p = AssetRiskParams(0.2, 0.85, -1.9, -0.5)
    base = filter_asset(r, p, 0.05)
    scaled = filter_asset(c * r, p, 0.05)
    np.testing.assert_allclose(scaled.var_path, c * base.var_path, rtol=1e-10)
    np.testing.assert_allclose(scaled.es_path, c * base.es_path, rtol=1e-10)


def test_infeasible_intercept(rng):
    r = rng.normal(size=100)
    with pytest.raises(InfeasibleParams):
        filter_asset(r, AssetRiskParams(alpha_q=5.0, beta=0.9, q=-1.0, gamma0=0.0), 0.025)
    assert stage1_loss([5.0, 0.9, -1.0, 0.0], r, 0.025, 1.0, 1.0) == np.inf


def test_loss_matches_filtered_paths(rng):
    r = rng.normal(size=300)
    r -= r.mean()
    p = AssetRiskParams(0.4, 0.8, -2.0, -0.9)
    fit = filter_asset(r, p, 0.025)
    v0 = float(np.var(r[:50]))
    assert stage1_loss(p.to_vector(), r, 0.025, float(np.var(r)), v0) == pytest.approx(fit.loss, rel=1e-12)


def test_fit_garch_normal_recovers_factors():
    r = _garch_series(5000, seed=21)
    fit = fit_asset(r - r.mean(), 0.025)
    assert fit.params.q ** 2 == pytest.approx(Q2_NORMAL, abs=0.3)
    assert fit.params.gamma0 == pytest.approx(G0_NORMAL, abs=0.25)
    omega, a, b = fit.params.implied_garch(fit.sample_var)
    assert a + b < 1
    assert fit.loss == pytest.approx(stage1_loss(fit.params.to_vector(), r - r.mean(), 0.025,
                                                 fit.sample_var, float(np.var((r - r.mean())[:500]))))


def test_fit_iid_gives_flat_quantile(rng):
    r = rng.normal(size=2000)
    r -= r.mean()
    fit = fit_asset(r, 0.025)
    # no response to returns; beta then only shapes the decay from the initial state
    assert fit.params.alpha_q / fit.params.q ** 2 < 1e-3
    Q = fit.var_path
    assert (Q.max() - Q.min()) < 0.1 * abs(Q.mean())
    hits = int(np.sum(r <= Q))
    assert abs(hits - 0.025 * r.size) <= 1


def test_fit_too_short():
    with pytest.raises(FitError):
        fit_asset(np.arange(10.0), 0.025)

import warnings

import numpy as np
import pytest

from dccal.dcc import (
    CorrelationState,
    DccParams,
    correlation_target,
    covariance_path,
    filter_correlations,
    fit_dcc,
    forecast_one_step,
    portfolio_risk_paths,
    refilter_dcc,
    standardize,
)
from dccal.errors import FitError, InitError, InternalError, RankWarning
from dccal.escaviar import AssetRiskFit, AssetRiskParams, fit_asset
from dccal.linalg import cholesky
from dccal.simulate import DgpSpec, simulate_panel
from dccal.timeseries import ReturnPanel, equal_weights


def _fit_with_vol(h, q=-1.0):
    h = np.asarray(h, dtype=float)
    p = AssetRiskParams(0.0, 0.0, q, 0.0)
    return AssetRiskFit(params=p, alpha=0.025, var_path=q * h, es_path=np.sqrt(2.0) * q * h,
                        vol_path=h, loss=0.0, sample_var=1.0, q2_next=(q * h[-1]) ** 2)


def test_params_c_link():
    p = DccParams(0.1, 0.8, -1.96, -0.861)
    assert p.c == pytest.approx(-np.sqrt(1.96 ** 2 * (1 + np.exp(-0.861))))
    assert abs(p.c) > abs(p.q)


def test_standardize_examples():
    panel = ReturnPanel.from_array(np.array([[2.0, -3.0], [4.0, 6.0]]))
    eps = standardize(panel, [_fit_with_vol([2.0, 2.0]), _fit_with_vol([3.0, 3.0])])
    np.testing.assert_allclose(eps[0], [1.0, -1.0])
    np.testing.assert_allclose(eps[:, 1], panel.values[:, 1] / 3.0)
    bad = _fit_with_vol([1.0, 1.0])
    object.__setattr__(bad, "var_path", np.array([-1.0, 0.0]))
    with pytest.raises(InternalError):
        standardize(panel, [bad, bad])


def test_standardized_variance_near_one():
    sim = simulate_panel(DgpSpec(n=2, T=5000, seed=4))
    values = sim.panel.values - sim.panel.values.mean(axis=0)
    fits = [fit_asset(values[:, i], 0.025) for i in range(2)]
    eps = standardize(values, fits)
    np.testing.assert_allclose(eps.var(axis=0), 1.0, rtol=0.15)


def test_correlation_target_examples(rng):
    x = rng.normal(size=(50, 1))
    S = correlation_target(np.hstack([x, x, x]))
    np.testing.assert_allclose(S, S[0, 0])
    assert np.linalg.matrix_rank(S) == 1
    S2 = correlation_target(rng.normal(size=(10_000, 2)))
    assert abs(S2[0, 1]) < 0.05
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        correlation_target(rng.normal(size=(2, 3)))
    assert any(issubclass(w.category, RankWarning) for w in caught)


def test_correlation_target_reference_design():
    sim = simulate_panel(DgpSpec(n=3, T=5000, seed=8))
    eps = sim.panel.values / sim.vol[:-1]
    S = correlation_target(eps)
    off = S[np.triu_indices(3, 1)] / np.sqrt(S[0, 0] * S[1, 1])
    # persistent correlation dynamics widen the sampling error of single pairs
    assert abs(off.mean() - 0.5) < 0.05
    np.testing.assert_allclose(off, 0.5, atol=0.1)


def test_filter_correlations_degenerate(rng):
    eps = rng.normal(size=(40, 3))
    S = correlation_target(eps)
    state = filter_correlations(eps, DccParams(0.0, 0.0, -2.0, -0.8), S)
    np.testing.assert_allclose(state.R_path, np.broadcast_to(S, state.R_path.shape), atol=1e-14)
    d = 1 / np.sqrt(np.diag(S))
    np.testing.assert_allclose(state.P_path[5], S * np.outer(d, d), atol=1e-14)


def test_filter_correlations_hand_step():
    eps = np.array([[1.0, 1.0], [0.3, -0.2]])
    state = filter_correlations(eps, DccParams(0.12, 0.78, -2.0, -0.8), np.eye(2), np.eye(2))
    np.testing.assert_allclose(state.R_path[1], [[1.0, 0.12], [0.12, 1.0]], atol=1e-12)
    assert state.P_path[1][0, 1] == pytest.approx(0.12, abs=1e-12)
    R_next = 0.1 * np.eye(2) + 0.12 * np.outer(eps[1], eps[1]) + 0.78 * state.R_path[1]
    np.testing.assert_allclose(state.R_next, R_next, atol=1e-12)


def test_filter_correlations_rejects_bad_init(rng):
    eps = rng.normal(size=(10, 2))
    with pytest.raises(InitError):
        filter_correlations(eps, DccParams(0.1, 0.8, -2, -1), np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_portfolio_risk_paths_examples():
    state = CorrelationState(np.eye(1), np.ones((3, 1, 1)), np.ones((3, 1, 1)), np.eye(1), np.eye(1))
    Q, _ = portfolio_risk_paths(state, np.full((3, 1), 2.0), [1.0], DccParams(0.0, 0.0, -1.96, 0.0))
    np.testing.assert_allclose(Q, -3.92)
    I4 = np.broadcast_to(np.eye(4), (5, 4, 4))
    state4 = CorrelationState(np.eye(4), I4, I4, np.eye(4), np.eye(4))
    p = DccParams(0.0, 0.0, -1.7, -0.861)
    Q, ES = portfolio_risk_paths(state4, np.ones((5, 4)), np.full(4, 0.25), p)
    np.testing.assert_allclose(Q, 0.5 * -1.7)
    np.testing.assert_allclose(ES / Q, np.sqrt(1 + np.exp(-0.861)), atol=1e-6)
    assert np.sqrt(1 + np.exp(-0.861)) == pytest.approx(1.1928, abs=1e-4)


def test_fit_invariants(fit3, sim3):
    assert np.all(fit3.port_es_path <= fit3.port_var_path)
    assert np.all(fit3.port_var_path - fit3.weights @ fit3.mu < 0)
    assert abs(fit3.params.c) > abs(fit3.params.q)
    assert fit3.params.a + fit3.params.b < 1
    for P in fit3.corr.P_path[::50]:
        assert cholesky(P) is not None
        assert np.all(np.diag(P) == 1.0)
    # optimum no worse than any multistart initial point
    assert all(fit3.loss <= f0 + 1e-9 for f0 in fit3.diagnostics["start_initial_losses"])
    assert fit3.loss == pytest.approx(min(fit3.diagnostics["start_losses"]), rel=1e-12)


def test_marginalization_consistency(fit3):
    H = covariance_path(fit3, include_next=False)
    w = fit3.weights
    t = 123
    v_mat = w @ H[t] @ w
    h, P = fit3.vol[t], fit3.corr.P_path[t]
    v_sum = sum(w[i] * w[j] * h[i] * h[j] * P[i, j] for i in range(3) for j in range(3))
    assert v_mat == pytest.approx(v_sum, abs=1e-10)
    sd = (fit3.port_var_path - w @ fit3.mu) / fit3.params.q
    np.testing.assert_allclose(sd ** 2, np.einsum("i,tij,j->t", w, H, w), rtol=1e-10)


def test_forecast_is_pure_and_consistent(fit3):
    f1, f2 = forecast_one_step(fit3), forecast_one_step(fit3)
    assert f1 == f2
    assert f1.es < f1.var < 0
    H_next = covariance_path(fit3)[-1]
    w = fit3.weights
    assert f1.var == pytest.approx(w @ fit3.mu + fit3.params.q * np.sqrt(w @ H_next @ w), rel=1e-12)


def test_forecast_degenerate_model_is_constant(sim3):
    panel = sim3.panel
    w = np.asarray(equal_weights(3))
    s1 = [AssetRiskParams(0.0, 0.0, -1.96, -0.8)] * 3
    fit = refilter_dcc(panel, w, DccParams(0.0, 0.0, -1.9, -0.8), s1, 0.025)
    fc = forecast_one_step(fit)
    assert fc.var == pytest.approx(fit.port_var_path[-1], rel=1e-12)
    assert fc.es == pytest.approx(fit.port_es_path[-1], rel=1e-12)
    np.testing.assert_allclose(fit.port_var_path[1:], fit.port_var_path[-1], rtol=1e-12)


def test_refilter_at_fitted_params_reproduces_fit(fit3, sim3):
    again = refilter_dcc(sim3.panel, fit3.weights, fit3.params, [f.params for f in fit3.stage1], 0.025)
    np.testing.assert_allclose(again.port_var_path, fit3.port_var_path, rtol=1e-12)
    assert again.loss == pytest.approx(fit3.loss, rel=1e-12)


def test_single_asset_nests_stage1():
    sim = simulate_panel(DgpSpec(n=1, T=1500, seed=5))
    fit = fit_dcc(sim.panel, [1.0], 0.025)
    q1 = fit.stage1[0].var_path
    rel = np.sqrt(np.mean((fit.port_var_path - fit.mu[0] - q1) ** 2)) / np.sqrt(np.mean(q1 ** 2))
    assert rel < 0.02


def test_constant_correlation_dgp():
    sim = simulate_panel(DgpSpec(n=3, T=1500, a=0.0, b=0.0, seed=6))
    w = np.asarray(equal_weights(3))
    fit = fit_dcc(sim.panel, w, 0.025)
    assert fit.params.a < 0.05
    sd_const = np.sqrt(np.einsum("ti,ij,tj->t", fit.vol * w, fit.corr.P_path.mean(axis=0), fit.vol * w))
    ratio = (fit.port_var_path - w @ fit.mu) / sd_const
    assert ratio.std() / abs(ratio.mean()) < 0.05


def test_fit_requires_long_panel(rng):
    panel = ReturnPanel.from_array(rng.normal(size=(100, 2)))
    with pytest.raises(FitError) as info:
        fit_dcc(panel, [0.5, 0.5], 0.025)
    assert info.value.stage == "input"

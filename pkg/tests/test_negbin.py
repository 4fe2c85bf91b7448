import math

import numpy as np
import pytest

from ssip.chain import RunSettings, SamplerError, batch_means_se
from ssip.gaussian import GaussianHyper, RegionStats, sweep_gamma_z
from ssip.graph import build_grid_graph, from_edge_list
from ssip.negbin import (NbConfig, NbRegionData, NbState, ar1_prior_precision, compute_pseudo_data,
                         draw_alpha_sweep, draw_tau_alpha, draw_temporal, fit_nb_ssip,
                         iar_quadratic_form, nb_region_stats, sample_omega, update_temporal_ar1)
from ssip.polyagamma import pg_mean
from ssip.prior import LatentField


def test_pseudo_data_examples():
    assert compute_pseudo_data([1.0], [0.37], 1.0)[0] == 0.0
    assert compute_pseudo_data([3], [0.5], 1.0)[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        compute_pseudo_data([1], [0.0], 1.0)


def test_region_data_validation():
    with pytest.raises(ValueError):
        NbRegionData(np.ones((2, 1)), [1, -1])
    with pytest.raises(ValueError):
        NbRegionData(np.ones((2, 1)), [1.5, 2])


def make_state(regions, p, h=1.0, beta=None):
    n = len(regions)
    field = LatentField.from_z(np.ones((n, p)))
    return NbState(beta=np.zeros((n, p)) if beta is None else beta, field=field, mu=np.zeros(p),
                   tau2=np.ones(p), omega=[np.ones(r.m) for r in regions], alpha=np.zeros(n),
                   tau_alpha=1.0, zeta_t=np.zeros(0), ar_coef=0.9, ar_innov_var=1.0, h=h)


def test_omega_moments(rng):
    Y = np.array([0, 0, 3, 7])
    regions = [NbRegionData(np.ones((4, 1)), Y), NbRegionData(np.ones((4, 1)), Y)]
    beta = np.array([[0.0], [1.3]])
    state = make_state(regions, 1, h=2.0, beta=beta)
    reps = 20_000
    draws = np.empty((reps, 2, 4))
    for k in range(reps):
        sample_omega(state, regions, rng)
        draws[k] = state.omega
    assert np.all(draws > 0)
    # region 0 has psi = 0: mean (Y + h) / 4
    for i, c in ((0, 0.0), (1, 1.3)):
        target = pg_mean(Y + 2.0, c)
        se = draws[:, i].std(0) / math.sqrt(reps)
        assert np.all(np.abs(draws[:, i].mean(0) - target) < 3 * se)


def test_psi_guard_aborts(rng):
    regions = [NbRegionData(np.ones((2, 1)), [0, 1])] * 2
    state = make_state(regions, 1, beta=np.array([[31.0], [0.0]]))
    with pytest.raises(FloatingPointError, match="region 0"):
        sample_omega(state, regions, rng)


def test_gamma_sweep_shared_with_gaussian_engine():
    rng = np.random.default_rng(0)
    g = build_grid_graph(2, 2)
    regions = [NbRegionData(np.column_stack([np.ones(5), rng.random((5, 2))]), rng.poisson(3, 5))
               for _ in range(4)]
    state = make_state(regions, 3, h=1.5)
    state.alpha = np.array([0.2, -0.1, 0.0, -0.1])
    state.omega = [rng.gamma(2.0, 0.5, 5) for _ in range(4)]
    stats_nb = nb_region_stats(state, regions)
    # the same statistics built by hand as a heteroskedastic Gaussian regression
    stats_g = []
    for i, r in enumerate(regions):
        w = state.omega[i]
        y = (r.Y - 1.5) / (2 * w) - state.alpha[i]
        stats_g.append(RegionStats.build(r.X, y, 1 / w))
    fa = LatentField.from_z(rng.standard_normal((4, 3)))
    fb = fa.copy()
    mu, tau2 = np.array([0.5, 0.1, -0.2]), np.array([1.0, 2.0, 0.5])
    sweep_gamma_z(fa, g, stats_nb, mu, tau2, 0.9, np.random.default_rng(5))
    sweep_gamma_z(fb, g, stats_g, mu, tau2, 0.9, np.random.default_rng(5))
    assert np.array_equal(fa.Z, fb.Z) and np.array_equal(fa.gamma, fb.gamma)


def test_alpha_no_data_is_iar_conditional(rng):
    g = from_edge_list(2, [(0, 1)])
    tau = 4.0
    draws = np.array([draw_alpha_sweep(np.array([0.0, 2.0]), g, tau, np.zeros(2), np.zeros(2), rng)[0]
                      for _ in range(20_000)])
    assert abs(draws.mean() - 2.0) < 3 * 0.5 / math.sqrt(draws.size)
    assert draws.var() == pytest.approx(1 / tau, rel=0.05)


def test_tau_alpha_gamma_mean(rng):
    g = build_grid_graph(3, 3)
    alpha = rng.standard_normal(9)
    q = iar_quadratic_form(alpha, g)
    draws = np.array([draw_tau_alpha(alpha, g, 2.0, 1.0, rng) for _ in range(20_000)])
    target = (2.0 + 0.5 * 8) / (1.0 + 0.5 * q)
    assert abs(draws.mean() - target) < 3 * draws.std() / math.sqrt(draws.size)


def test_alpha_symmetric_data():
    rng = np.random.default_rng(2)
    X = np.ones((6, 1))
    Y = rng.poisson(4, 6)
    regions = [NbRegionData(X, Y), NbRegionData(X, Y)]
    g = from_edge_list(2, [(0, 1)])
    chain = fit_nb_ssip(regions, g, nb=NbConfig(h=2.0, car_intercept=True),
                        run=RunSettings(6000, seed=1))
    a = chain.flat("alpha")
    diff = a[:, 0] - a[:, 1]
    assert abs(diff.mean()) < 3 * batch_means_se(diff)
    assert np.allclose(a.sum(axis=1), 0.0, atol=1e-9)


def test_alpha_without_intercept_moves_level():
    rng = np.random.default_rng(3)
    regions = [NbRegionData(rng.random((5, 1)), rng.poisson(3, 5)) for _ in range(4)]
    chain = fit_nb_ssip(regions, build_grid_graph(2, 2), nb=NbConfig(car_intercept=True),
                        run=RunSettings(300, seed=1), intercept=False)
    assert chain.meta["intercept_col"] is None
    assert np.std(chain.flat("level")) > 0


def test_ar1_prior_lag_one(rng):
    T, phi, v = 12, 0.7, 0.5
    Z = np.array([draw_temporal(T, phi, v, np.zeros(T), np.zeros(T), rng) for _ in range(20_000)])
    assert np.all(Z[:, 0] == 0)
    x, y = Z[:, 1:-1].ravel(), Z[:, 2:].ravel()
    slope = (x @ y) / (x @ x)
    assert abs(slope - phi) < 3 * math.sqrt(v / (x @ x))


def test_ar1_phi_zero_diagonal():
    Q = ar1_prior_precision(6, 0.0, 2.0)
    assert np.allclose(Q, np.eye(5) / 2.0)


def test_temporal_single_time_noop(rng):
    regions = [NbRegionData(np.ones((2, 1)), [1, 2], time_index=[0, 0])] * 2
    state = make_state(regions, 1)
    state.zeta_t = np.zeros(1)
    update_temporal_ar1(state, regions, rng, NbConfig(temporal=True))
    assert np.array_equal(state.zeta_t, [0.0])


def test_temporal_fit_runs():
    rng = np.random.default_rng(4)
    regions = [NbRegionData(np.ones((4, 1)), rng.poisson(3, 4), time_index=[0, 1, 2, 3])
               for _ in range(4)]
    chain = fit_nb_ssip(regions, build_grid_graph(2, 2),
                        nb=NbConfig(temporal=True, ar_update=True), run=RunSettings(300, seed=2))
    z = chain.flat("zeta_t")
    assert z.shape[1] == 4 and np.all(z[:, 0] == 0)
    assert np.all(np.abs(chain.flat("ar_coef")) < 1)


def test_nb_mean_recovery():
    rng = np.random.default_rng(7)
    h, psi = 2.0, 1.0
    p_success = 1 / (1 + math.exp(psi))  # numpy parameterisation
    regions = [NbRegionData(np.ones((200, 1)), rng.negative_binomial(h, p_success, 200))
               for _ in range(2)]
    chain = fit_nb_ssip(regions, from_edge_list(2, [(0, 1)]), nb=NbConfig(h=h),
                        run=RunSettings(2000, seed=3))
    est = (h * np.exp(chain.flat("beta")[:, :, 0])).mean(0)
    assert np.all(np.abs(est / (h * math.exp(psi)) - 1) < 0.15)


def test_slope_interval_calibration():
    """Coverage of the slope's 95% interval over 100 simulated data sets."""
    rng = np.random.default_rng(11)
    g = from_edge_list(2, [(0, 1)])
    hits = 0
    for rep in range(100):
        beta = np.array([0.5, 0.8])
        regions = []
        for _ in range(2):
            X = np.column_stack([np.ones(60), rng.standard_normal(60)])
            p_success = 1 / (1 + np.exp(X @ beta))
            regions.append(NbRegionData(X, rng.negative_binomial(1.0, p_success)))
        chain = fit_nb_ssip(regions, g, hyper=GaussianHyper(s0=4.0), forced_mask=np.ones((2, 2), bool),
                            run=RunSettings(500, seed=rep))
        lo, hi = chain.quantile("beta", [0.025, 0.975])[:, 0, 1]
        hits += lo <= beta[1] <= hi
    assert hits >= 90


def test_determinism():
    rng = np.random.default_rng(9)
    regions = [NbRegionData(np.column_stack([np.ones(4), rng.random(4)]), rng.poisson(2, 4))
               for _ in range(4)]
    run = RunSettings(100, seed=5, chains=2)
    a = fit_nb_ssip(regions, build_grid_graph(2, 2), nb=NbConfig(car_intercept=True), run=run)
    b = fit_nb_ssip(regions, build_grid_graph(2, 2), nb=NbConfig(car_intercept=True), run=run)
    assert a.equals(b)


def test_runaway_predictor_is_reported():
    # counts near 1000 put psi near log(1000) ~ 6.9, beyond a bound of 5
    regions = [NbRegionData(np.ones((3, 1)), [1000, 990, 1010])] * 2
    with pytest.raises(SamplerError, match="iteration .*max \\|psi\\|"):
        fit_nb_ssip(regions, from_edge_list(2, [(0, 1)]), hyper=GaussianHyper(s0=1e6),
                    nb=NbConfig(h=1.0, psi_bound=5.0), run=RunSettings(200, seed=0))

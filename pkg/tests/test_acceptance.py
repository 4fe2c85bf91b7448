"""Acceptance criteria. Each test records one PASS/FAIL line via ``criterion``.

The lines are printed in the terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from ssip.chain import RunSettings, batch_means_se
from ssip.crc import build_design
from ssip.gaussian import GaussianHyper, RegionData, fit_gaussian_ssip, log_marginal_likelihood
from ssip.graph import build_grid_graph, from_edge_list
from ssip.negbin import NbConfig, NbRegionData, fit_nb_ssip
from ssip.polyagamma import sample_pg
from ssip.prior import SsipConfig, sample_prior_field
from ssip.simulate import (CRC_STUDY, baseline_independent, run_crc_study, run_gaussian_study,
                           simulate_gaussian_grid)
from ssip.truncnorm import truncated_normal

pytestmark = pytest.mark.acceptance


# 1 ---------------------------------------------------------------------------------

def test_c1_polya_gamma_moments(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for b in (1, 2, 5, 17):
        for c in (0.0, 0.1, 1.0, 4.0):
            x = sample_pg(np.full(100_000, float(b)), c, rng)
            target = b / 4 if c == 0 else b / (2 * c) * math.tanh(c / 2)
            worst = max(worst, abs(x.mean() - target) / (x.std() / math.sqrt(x.size)))
    elapsed = time.perf_counter() - t0
    ok = worst < 3 and elapsed < 60
    criterion(1, "Polya-Gamma moments", ok, f"max |z| = {worst:.2f} over 16 (b, c); {elapsed:.1f} s")
    assert ok


# 2 ---------------------------------------------------------------------------------

def _likelihood_times_prior(X, Y, s2, mu, tau2):
    def f(*b):
        b = np.array(b)
        r = Y - X @ b
        lik = np.exp(-0.5 * (r @ r) / s2) / (2 * math.pi * s2) ** (len(Y) / 2)
        pri = np.exp(-0.5 * np.sum((b - mu) ** 2 / tau2)) / np.prod(np.sqrt(2 * math.pi * tau2))
        return lik * pri
    return f


def test_c2_marginal_likelihood_oracle(criterion):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst_rel, worst_z, n_quad, n_mc = 0.0, 0.0, 0, 0
    for k in range(50):
        m, p = int(rng.integers(1, 6)), int(rng.integers(1, 3))
        X = rng.uniform(-1.5, 1.5, (m, p))
        gamma = rng.integers(0, 2, p)
        mu = rng.normal(0, 1, p)
        tau2 = rng.uniform(0.2, 3.0, p)
        s2 = rng.uniform(0.3, 2.0)
        Y = X @ rng.normal(0, 1, p) + rng.normal(0, math.sqrt(s2), m)
        psi = math.exp(log_marginal_likelihood(RegionData(X, Y), gamma, mu, tau2, s2))
        a = np.flatnonzero(gamma)
        if a.size == 0:
            ref = np.prod(stats.norm.pdf(Y, 0.0, math.sqrt(s2)))
        elif k % 5 == 4:
            # Monte Carlo over the slab prior for every fifth instance
            draws = mu[a] + np.sqrt(tau2[a]) * rng.standard_normal((400_000, a.size))
            vals = stats.norm.pdf(Y, draws @ X[:, a].T, math.sqrt(s2)).prod(axis=1)
            worst_z = max(worst_z, abs(vals.mean() - psi) / (vals.std() / math.sqrt(vals.size)))
            n_mc += 1
            continue
        else:
            f = _likelihood_times_prior(X[:, a], Y, s2, mu[a], tau2[a])
            box = [(mu[j] - 12 * math.sqrt(tau2[j]), mu[j] + 12 * math.sqrt(tau2[j])) for j in a]
            ref, _ = integrate.nquad(f, box, opts={"epsabs": 0, "epsrel": 1e-11, "limit": 200})
        worst_rel = max(worst_rel, abs(psi / ref - 1))
        n_quad += 1
    elapsed = time.perf_counter() - t0
    ok = worst_rel < 1e-6 and worst_z < 3 and elapsed < 120
    criterion(2, "marginal-likelihood oracle", ok,
              f"{n_quad} exact/quadrature max rel err {worst_rel:.1e}; {n_mc} MC max |z| "
              f"{worst_z:.2f}; {elapsed:.1f} s")
    assert ok


# 3 ---------------------------------------------------------------------------------

def test_c3_prior_marginal_inclusion_half(criterion):
    rng = np.random.default_rng(303)
    g = build_grid_graph(3, 3)
    t0 = time.perf_counter()
    # columns of a prior field are independent CAR draws
    hits = np.zeros(9)
    for _ in range(100):
        hits += sample_prior_field(g, 0.9, 1000, rng).gamma.sum(axis=1)
    freq = hits / 100_000
    elapsed = time.perf_counter() - t0
    dev = np.abs(freq - 0.5).max()
    ok = dev <= 0.01 and elapsed < 120
    criterion(3, "prior marginal inclusion = 1/2", ok,
              f"per-cell P(gamma=1) in [{freq.min():.4f}, {freq.max():.4f}]; {elapsed:.1f} s")
    assert ok


# 4 ---------------------------------------------------------------------------------

GIR_SWEEPS = 20_000
GIR_RHO = 0.9


def _compare(sc: dict, mc: dict) -> tuple[float, str]:
    """Largest |z| between successive-conditional (batch means SE) and iid draws."""
    worst, where = 0.0, ""
    for name, a in sc.items():
        b = mc[name]
        se = np.sqrt(batch_means_se(a) ** 2 + (b.std(axis=0) / math.sqrt(b.shape[0])) ** 2)
        z = np.abs(a.mean(axis=0) - b.mean(axis=0)) / se
        if z.max() > worst:
            worst, where = float(z.max()), name
    return worst, where


def _moments(beta, Z, gamma, extra_name, extra) -> dict:
    n = beta.shape[0]
    return {"beta": beta.reshape(n, -1), "beta^2": beta.reshape(n, -1) ** 2,
            "Z": Z.reshape(n, -1), "Z^2": Z.reshape(n, -1) ** 2,
            "gamma": gamma.reshape(n, -1).astype(float),
            extra_name: extra.reshape(n, -1), extra_name + "^2": extra.reshape(n, -1) ** 2}


def _prior_draws(graph, hyper, p, N, rng):
    n = graph.n_regions
    mu = hyper.mu0 + math.sqrt(hyper.s0) * rng.standard_normal((N, p))
    tau2 = hyper.b_t / rng.gamma(hyper.a_t, size=(N, p))
    field = sample_prior_field(graph, GIR_RHO, p * N, rng)
    Z = field.Z.reshape(n, N, p).transpose(1, 0, 2)
    gamma = (Z > 0).astype(np.int8)
    beta = gamma * (mu[:, None, :] + np.sqrt(tau2)[:, None, :] * rng.standard_normal((N, n, p)))
    return beta, Z, gamma


def gir_gaussian(X_list, seed):
    graph = build_grid_graph(2, 2)
    n, p = graph.n_regions, 2
    hyper = GaussianHyper(mu0=0.5, s0=1.0, a_t=4.0, b_t=3.0, a=5.0, b=4.0)
    rng = np.random.default_rng(seed)
    beta, Z, gamma = _prior_draws(graph, hyper, p, GIR_SWEEPS, rng)
    sigma2 = hyper.b / rng.gamma(hyper.a, size=(GIR_SWEEPS, n))
    mc = _moments(beta, Z, gamma, "sigma2", sigma2)

    data_rng = np.random.default_rng(seed + 1)
    regions = [RegionData(X, X @ beta[0, i] + math.sqrt(sigma2[0, i]) * data_rng.standard_normal(len(X)))
               for i, X in enumerate(X_list)]

    def regenerate(it, state):
        for i, r in enumerate(regions):
            r.Y[:] = r.X @ state.beta[i] + math.sqrt(state.sigma2[i]) * data_rng.standard_normal(r.m)

    run = RunSettings(GIR_SWEEPS + 2000, burn_in=2000, seed=seed + 2)
    chain = fit_gaussian_ssip(regions, graph, hyper, SsipConfig(rho=GIR_RHO), run,
                              forced_mask=np.zeros((n, p), bool), intercept=False,
                              callback=regenerate)
    sc = _moments(chain.flat("beta"), chain.flat("Z"), chain.flat("gamma"), "sigma2",
                  chain.flat("sigma2"))
    return _compare(sc, mc)


def gir_negbin(X_list, seed):
    graph = build_grid_graph(2, 2)
    n, p, h = graph.n_regions, 2, 2.0
    hyper = GaussianHyper(mu0=0.0, s0=0.5, a_t=4.0, b_t=1.0)
    nb = NbConfig(h=h)
    rng = np.random.default_rng(seed)
    beta, Z, gamma = _prior_draws(graph, hyper, p, GIR_SWEEPS, rng)
    psi = np.stack([beta[:, i] @ X.T for i, X in enumerate(X_list)], axis=1)  # (N, n, m)
    Y = rng.negative_binomial(h, 1 / (1 + np.exp(psi)))
    omega_mean = sample_pg(Y + h, psi, rng).mean(axis=(1, 2))
    mc = _moments(beta, Z, gamma, "omega_mean", omega_mean)

    data_rng = np.random.default_rng(seed + 1)
    regions = [NbRegionData(X, Y[0, i]) for i, X in enumerate(X_list)]

    def regenerate(it, state):
        for i, r in enumerate(regions):
            r.Y[:] = data_rng.negative_binomial(h, 1 / (1 + np.exp(state.psi(regions, i))))

    run = RunSettings(GIR_SWEEPS + 2000, burn_in=2000, seed=seed + 2)
    chain = fit_nb_ssip(regions, graph, hyper, SsipConfig(rho=GIR_RHO), nb, run,
                        forced_mask=np.zeros((n, p), bool), intercept=False, callback=regenerate)
    sc = _moments(chain.flat("beta"), chain.flat("Z"), chain.flat("gamma"), "omega_mean",
                  chain.flat("omega_mean"))
    return _compare(sc, mc)


def test_c4_getting_it_right(criterion):
    rng = np.random.default_rng(404)
    X_list = [np.column_stack([np.ones(3), rng.uniform(-1, 1, 3)]) for _ in range(4)]
    t0 = time.perf_counter()
    zg, wg = gir_gaussian(X_list, 41)
    zn, wn = gir_negbin(X_list, 42)
    elapsed = time.perf_counter() - t0
    ok = zg < 3 and zn < 3 and elapsed < 600
    criterion(4, "getting-it-right joint tests", ok,
              f"Gaussian max |z| {zg:.2f} ({wg}); NB max |z| {zn:.2f} ({wn}); "
              f"{GIR_SWEEPS} sweeps each; {elapsed:.0f} s")
    assert ok


# 5 ---------------------------------------------------------------------------------

def test_c5_table1_direction(criterion):
    t0 = time.perf_counter()
    res = [run_gaussian_study(seed, iterations=10_000) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    ssip = np.array([r["ssip_mse"] for r in res])
    indep = np.array([r["independent_mse"] for r in res])
    aic = np.array([r["aic_mse"] for r in res])
    beats = float(np.mean(ssip < aic))
    ok = np.median(ssip) < np.median(indep) and beats >= 0.8 and elapsed < 1800
    criterion(5, "coefficient MSE direction", ok,
              f"median MSE SSIP {np.median(ssip):.3f}, rho=0 {np.median(indep):.3f}, "
              f"AIC {np.median(aic):.3f}; SSIP < AIC in {beats:.0%} of 20 seeds; {elapsed:.0f} s")
    assert ok


# 6 ---------------------------------------------------------------------------------

CRC_HELD_OUT_SEED = 2024  # fixed before evaluation; settings were tuned on seeds 0-2


def test_c6_crc_replication(criterion):
    t0 = time.perf_counter()
    res = run_crc_study(CRC_HELD_OUT_SEED, methods=("ssip",))
    elapsed = time.perf_counter() - t0
    m = res["ssip"]["metrics"]
    ok = (0.85 <= m["coverage"] <= 1.0 and m["correlation"] > 0.5 and m["all_finite"]
          and elapsed < 1800)
    criterion(6, "CRC replication properties", ok,
              f"coverage {m['coverage']:.2f}, correlation {m['correlation']:.3f}, RMSE "
              f"{m['rmse']:.1f}, finite intervals {m['all_finite']} (c={CRC_STUDY['c']:.0f}, "
              f"seed {CRC_HELD_OUT_SEED}); {elapsed:.0f} s")
    assert ok


# 7 ---------------------------------------------------------------------------------

def test_c7_rho_zero_collapse(criterion):
    t0 = time.perf_counter()
    regions, g, _ = simulate_gaussian_grid(7)
    run = RunSettings(3000, seed=77, chains=2)
    a = fit_gaussian_ssip(regions, g, ssip=SsipConfig(rho=0.0), run=run)
    b = baseline_independent(regions, g, run=run)
    identical = a.equals(b)
    # at rho = 0 neighbours carry no information: another graph gives the same beta and gamma
    path = from_edge_list(9, [(i, i + 1) for i in range(8)])
    c = fit_gaussian_ssip(regions, path, ssip=SsipConfig(rho=0.0), run=run)
    graph_free = np.array_equal(a["beta"], c["beta"]) and np.array_equal(a["gamma"], c["gamma"])
    elapsed = time.perf_counter() - t0
    ok = identical and graph_free and elapsed < 60
    criterion(7, "rho = 0 collapse", ok,
              f"bit-identical to baseline: {identical}; graph-invariant beta/gamma: {graph_free}; "
              f"{elapsed:.1f} s")
    assert ok


# 8 ---------------------------------------------------------------------------------

def test_c8_crc_design_counts(criterion):
    d = build_design(5, 4)
    ok = d.n_columns == 31 and d.n_unforced == 20
    criterion(8, "CRC design counts", ok,
              f"{d.n_columns} columns (want 31), {d.n_unforced} unforced (want 20) with "
              f"intercept and 5 main effects forced")
    assert ok


# 9 ---------------------------------------------------------------------------------

def test_c9_truncated_normal_ks(criterion):
    rng = np.random.default_rng(909)
    t0 = time.perf_counter()
    pvals = {}
    for a in (-6.0, -1.0, 0.0, 1.0, 6.0):
        # N(0, 1) restricted to x > a is a + N(-a, 1) restricted to the positive half
        lower = np.array([a + truncated_normal(-a, 1.0, True, rng) for _ in range(10_000)])
        upper = np.array([a + truncated_normal(-a, 1.0, False, rng) for _ in range(10_000)])
        pvals[(a, ">")] = stats.kstest(lower, stats.truncnorm(a, np.inf).cdf).pvalue
        pvals[(a, "<")] = stats.kstest(upper, stats.truncnorm(-np.inf, a).cdf).pvalue
    elapsed = time.perf_counter() - t0
    pmin = min(pvals.values())
    ok = pmin > 0.001 and elapsed < 60
    criterion(9, "truncated-normal KS", ok,
              f"min KS p = {pmin:.3g} over 10 one-sided truncations; {elapsed:.1f} s")
    assert ok

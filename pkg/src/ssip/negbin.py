"""Negative-binomial SSIP regression via Polya-Gamma augmentation.

Y ~ NB(h, p) with logit(p) = psi, so E[Y] = h exp(psi). Given
omega ~ PG(Y + h, psi) the pseudo-data (Y - h) / (2 omega) are
N(psi, 1/omega), and the Gaussian collapsed sweep runs on them unchanged.
Optional extensions: CAR (IAR) regional intercepts alpha_i and an AR(1)
temporal shift zeta_t anchored at zeta_0 = 0.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .chain import DrawRecorder, PosteriorChain, RunSettings, SamplerError, config_hash
from .gaussian import (GaussianHyper, RegionStats, default_forced_mask, draw_beta,
                       draw_slab_hyper, initial_field, sweep_gamma_z)
from .graph import AdjacencyGraph
from .polyagamma import DEFAULT_CONFIG, PgConfig, sample_pg
from .prior import LatentField, RhoSampler, SsipConfig, reflect_into


@dataclass
class NbRegionData:
    X: np.ndarray
    Y: np.ndarray
    time_index: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y)
        if Y.size and (np.any(Y < 0) or np.any(Y != np.round(Y))):
            raise ValueError("counts must be nonnegative integers")
        self.Y = Y.astype(float).ravel()
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y row counts differ")
        if self.Y.shape[0] < 1:
            raise ValueError("a region needs at least one observation")
        if self.time_index is not None:
            t = np.asarray(self.time_index)
            if t.shape != self.Y.shape or np.any(t < 0) or np.any(t != np.round(t)):
                raise ValueError("time_index must be nonnegative integers, one per row")
            self.time_index = t.astype(np.intp)

    @property
    def m(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class NbConfig:
    h: float = 1.0
    car_intercept: bool = False
    temporal: bool = False
    ar_coef: float = 0.9
    ar_update: bool = False
    ar_step: float = 0.1
    tau_alpha_shape: float = 2.0
    tau_alpha_rate: float = 1.0
    innov_shape: float = 2.0
    innov_scale: float = 1.0
    level_prior_var: float = 100.0
    psi_bound: float = 30.0
    pg: PgConfig = field(default_factory=lambda: DEFAULT_CONFIG)

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not -1.0 < self.ar_coef < 1.0:
            raise ValueError("ar_coef must lie in (-1, 1)")
        if self.ar_update and not self.ar_step > 0:
            raise ValueError("ar_step must be positive")


@dataclass
class NbState:
    beta: np.ndarray
    field: LatentField
    mu: np.ndarray
    tau2: np.ndarray
    omega: list
    alpha: np.ndarray
    tau_alpha: float
    zeta_t: np.ndarray
    ar_coef: float
    ar_innov_var: float
    h: float
    level: float = 0.0

    def offset(self, regions, i: int) -> np.ndarray:
        """Everything in psi except X beta: alpha_i + level + zeta_t."""
        off = np.full(regions[i].m, self.alpha[i] + self.level)
        if regions[i].time_index is not None and self.zeta_t.size:
            off += self.zeta_t[regions[i].time_index]
        return off

    def psi(self, regions, i: int) -> np.ndarray:
        return self.offset(regions, i) + regions[i].X @ self.beta[i]


def compute_pseudo_data(Y, omega, h: float) -> np.ndarray:
    omega = np.asarray(omega, float)
    if np.any(omega <= 0):
        raise ValueError("omega must be positive")
    return (np.asarray(Y, float) - h) / (2.0 * omega)


def _check_psi(psi: np.ndarray, bound: float, i: int) -> None:
    worst = float(np.max(np.abs(psi))) if psi.size else 0.0
    if not worst <= bound:
        raise FloatingPointError(
            f"linear predictor out of range in region {i}: max |psi| = {worst:.3g} > {bound}")


def sample_omega(state: NbState, regions, rng: np.random.Generator,
                 config: NbConfig | None = None) -> NbState:
    """omega_r ~ PG(Y_r + h, psi_r) for every observation, one vectorised call."""
    config = config or NbConfig(h=state.h)
    psis = []
    for i in range(len(regions)):
        psi = state.psi(regions, i)
        _check_psi(psi, config.psi_bound, i)
        psis.append(psi)
    sizes = [r.m for r in regions]
    b = np.concatenate([r.Y for r in regions]) + state.h
    draws = sample_pg(b, np.concatenate(psis), rng, config.pg)
    state.omega = np.split(draws, np.cumsum(sizes)[:-1])
    return state


def nb_region_stats(state: NbState, regions) -> list[RegionStats]:
    """Weighted statistics of the pseudo-data minus the non-slab offset."""
    out = []
    for i, r in enumerate(regions):
        z = compute_pseudo_data(r.Y, state.omega[i], state.h) - state.offset(regions, i)
        out.append(RegionStats.build(r.X, z, 1.0 / state.omega[i]))
    return out


# CAR regional intercepts ----------------------------------------------------------

def draw_alpha_sweep(alpha: np.ndarray, graph: AdjacencyGraph, tau_alpha: float,
                     lik_prec: np.ndarray, lik_lin: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Single-site pass: alpha_i | rest ~ N((lin_i + tau S_i) / P_i, 1 / P_i), P_i = prec_i + tau n_i."""
    alpha = alpha.copy()
    for i in range(graph.n_regions):
        s = alpha[graph.neighbors[i]].sum()
        prec = lik_prec[i] + tau_alpha * graph.degrees[i]
        alpha[i] = (lik_lin[i] + tau_alpha * s) / prec + rng.standard_normal() / math.sqrt(prec)
    return alpha


def iar_quadratic_form(alpha: np.ndarray, graph: AdjacencyGraph) -> float:
    e = graph.edges()
    return float(((alpha[e[:, 0]] - alpha[e[:, 1]]) ** 2).sum())


def draw_tau_alpha(alpha: np.ndarray, graph: AdjacencyGraph, shape: float, rate: float,
                   rng: np.random.Generator, n_components: int | None = None) -> float:
    """Gamma full conditional; the IAR rank is n - (number of connected components)."""
    ncomp = graph.n_components() if n_components is None else n_components
    post_shape = shape + 0.5 * (graph.n_regions - ncomp)
    post_rate = rate + 0.5 * iar_quadratic_form(alpha, graph)
    return float(rng.gamma(post_shape, 1.0 / post_rate))


def update_alpha_car(state: NbState, graph: AdjacencyGraph, regions, rng: np.random.Generator,
                     config: NbConfig, intercept_col: int | None = 0,
                     n_components: int | None = None) -> NbState:
    n = graph.n_regions
    prec = np.empty(n)
    lin = np.empty(n)
    for i, r in enumerate(regions):
        z = compute_pseudo_data(r.Y, state.omega[i], state.h)
        resid = z - (state.psi(regions, i) - state.alpha[i])
        prec[i] = state.omega[i].sum()
        lin[i] = state.omega[i] @ resid
    alpha = draw_alpha_sweep(state.alpha, graph, state.tau_alpha, prec, lin, rng)
    shift = alpha.mean()
    state.alpha = alpha - shift
    if intercept_col is not None:
        state.beta[:, intercept_col] += shift
    else:
        state.level += shift
    state.tau_alpha = draw_tau_alpha(state.alpha, graph, config.tau_alpha_shape,
                                     config.tau_alpha_rate, rng, n_components)
    return state


def update_level(state: NbState, regions, rng: np.random.Generator, prior_var: float) -> NbState:
    prec = 1.0 / prior_var
    lin = 0.0
    for i, r in enumerate(regions):
        z = compute_pseudo_data(r.Y, state.omega[i], state.h)
        resid = z - (state.psi(regions, i) - state.level)
        prec += state.omega[i].sum()
        lin += state.omega[i] @ resid
    state.level = lin / prec + rng.standard_normal() / math.sqrt(prec)
    return state


# AR(1) temporal shift -------------------------------------------------------------

def ar1_prior_precision(T: int, phi: float, innov_var: float) -> np.ndarray:
    """Precision of (zeta_1 .. zeta_{T-1}) given zeta_0 = 0."""
    k = T - 1
    Q = np.zeros((k, k))
    idx = np.arange(k)
    Q[idx, idx] = 1.0 + phi * phi
    Q[k - 1, k - 1] = 1.0
    Q[idx[:-1], idx[1:]] = -phi
    Q[idx[1:], idx[:-1]] = -phi
    return Q / innov_var


def draw_temporal(T: int, phi: float, innov_var: float, lik_prec: np.ndarray,
                  lik_lin: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Joint Gaussian draw of zeta (length T, zeta_0 = 0) under AR(1) prior plus likelihood."""
    zeta = np.zeros(T)
    if T < 2:
        return zeta
    P = ar1_prior_precision(T, phi, innov_var)
    P[np.diag_indices(T - 1)] += lik_prec[1:]
    L = np.linalg.cholesky(P)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, lik_lin[1:]))
    zeta[1:] = mean + np.linalg.solve(L.T, rng.standard_normal(T - 1))
    return zeta


def ar1_innovations(zeta: np.ndarray, phi: float) -> np.ndarray:
    return zeta[1:] - phi * zeta[:-1]


def update_temporal_ar1(state: NbState, regions, rng: np.random.Generator,
                        config: NbConfig) -> NbState:
    T = state.zeta_t.size
    if T < 2:
        state.zeta_t[:] = 0.0
        return state
    prec = np.zeros(T)
    lin = np.zeros(T)
    for i, r in enumerate(regions):
        if r.time_index is None:
            continue
        z = compute_pseudo_data(r.Y, state.omega[i], state.h)
        resid = z - (state.psi(regions, i) - state.zeta_t[r.time_index])
        np.add.at(prec, r.time_index, state.omega[i])
        np.add.at(lin, r.time_index, state.omega[i] * resid)
    state.zeta_t = draw_temporal(T, state.ar_coef, state.ar_innov_var, prec, lin, rng)
    e = ar1_innovations(state.zeta_t, state.ar_coef)
    shape = config.innov_shape + 0.5 * e.size
    scale = config.innov_scale + 0.5 * float(e @ e)
    state.ar_innov_var = scale / rng.gamma(shape)
    if config.ar_update:
        state.ar_coef = _ar_coef_mh(state.zeta_t, state.ar_coef, state.ar_innov_var,
                                    config.ar_step, rng)
    return state


def _ar_coef_mh(zeta, phi, v, step, rng) -> float:
    # uniform prior on (-1, 1); reflected random walk keeps the proposal symmetric
    prop = reflect_into(phi + step * rng.standard_normal(), -1.0 + 1e-6, 1.0 - 1e-6)

    def logp(f):
        e = ar1_innovations(zeta, f)
        return -0.5 * float(e @ e) / v

    return prop if math.log(rng.random()) < logp(prop) - logp(phi) else phi


# driver ---------------------------------------------------------------------------

def _n_times(regions) -> int:
    ts = [r.time_index for r in regions if r.time_index is not None]
    if not ts:
        return 0
    allt = np.unique(np.concatenate(ts))
    if not np.array_equal(allt, np.arange(allt.size)):
        raise ValueError("time indices must be contiguous from 0")
    return int(allt.size)


def fit_nb_ssip(regions, graph: AdjacencyGraph, hyper: GaussianHyper | None = None,
                ssip: SsipConfig | None = None, nb: NbConfig | None = None,
                run: RunSettings | None = None, *, forced_mask=None, intercept: bool = True,
                callback=None) -> PosteriorChain:
    """Run the Polya-Gamma NB SSIP Gibbs sampler.

    The slab hyperparameters (mu0, s0, a_t, b_t) come from ``hyper``; its
    error-variance fields are unused. With ``car_intercept`` the recentred
    alpha mean moves into column 0 when that column is a forced intercept,
    otherwise into a separate global level.
    """
    hyper = hyper or GaussianHyper()
    ssip = ssip or SsipConfig()
    nb = nb or NbConfig()
    run = run or RunSettings()
    if len(regions) != graph.n_regions:
        raise ValueError(f"{len(regions)} regions supplied for a {graph.n_regions}-region graph")
    ps = {r.p for r in regions}
    if len(ps) != 1:
        raise ValueError("regions disagree on the covariate count p")
    p = ps.pop()
    n = graph.n_regions
    forced = default_forced_mask(n, p, intercept) if forced_mask is None else np.asarray(forced_mask, bool)
    if forced.shape != (n, p):
        raise ValueError("forced_mask shape must be (n_regions, p)")
    T = _n_times(regions) if nb.temporal else 0
    if nb.temporal and T == 0:
        raise ValueError("temporal effect requested but no time_index supplied")
    intercept_col = 0 if (p and forced[:, 0].all()
                          and all(np.all(r.X[:, 0] == 1.0) for r in regions)) else None
    ncomp = graph.n_components()

    recorders, timings, rho_acc = [], [], []
    for rng in run.chain_rngs():
        fld = initial_field(graph, forced, rng)
        state = NbState(
            beta=np.where(fld.gamma == 1, 1e-3, 0.0),
            field=fld,
            mu=np.full(p, hyper.mu0),
            tau2=np.full(p, hyper.b_t / max(hyper.a_t - 1.0, 0.5)),
            omega=[np.ones(r.m) for r in regions],
            alpha=np.zeros(n),
            tau_alpha=1.0,
            zeta_t=np.zeros(T),
            ar_coef=nb.ar_coef,
            ar_innov_var=1.0,
            h=nb.h,
        )
        rho = ssip.rho
        rho_sampler = RhoSampler(graph, ssip.rho_step) if ssip.rho_update == "metropolis" else None
        rec = DrawRecorder(run.n_kept)
        t0 = time.perf_counter()
        for it in range(run.iterations):
            try:
                sample_omega(state, regions, rng, nb)
                stats = nb_region_stats(state, regions)
                sweep_gamma_z(state.field, graph, stats, state.mu, state.tau2, rho, rng)
                for i, st in enumerate(stats):
                    state.beta[i] = draw_beta(st, state.field.gamma[i], state.mu, state.tau2, rng)
                if nb.car_intercept:
                    update_alpha_car(state, graph, regions, rng, nb, intercept_col, ncomp)
                    if intercept_col is None:
                        update_level(state, regions, rng, nb.level_prior_var)
                if nb.temporal:
                    update_temporal_ar1(state, regions, rng, nb)
                state.mu, state.tau2 = draw_slab_hyper(state.beta, state.field.gamma, hyper,
                                                       state.mu, state.tau2, rng)
                if rho_sampler is not None:
                    rho = rho_sampler(state.field, rho, rng)
            except FloatingPointError as exc:
                raise SamplerError(f"iteration {it}: {exc}") from exc
            if callback is not None:
                callback(it, state)
            if run.keep(it):
                rec.record(beta=state.beta, gamma=state.field.gamma, Z=state.field.Z,
                           mu=state.mu, tau2=state.tau2, rho=rho,
                           omega_mean=np.mean(np.concatenate(state.omega)),
                           alpha=state.alpha, tau_alpha=state.tau_alpha, level=state.level,
                           zeta_t=state.zeta_t, ar_coef=state.ar_coef,
                           ar_innov_var=state.ar_innov_var)
        timings.append((time.perf_counter() - t0) / run.iterations)
        if rho_sampler is not None:
            rho_acc.append(rho_sampler.n_accepted / max(rho_sampler.n_proposed, 1))
        recorders.append(rec)

    nb_meta = asdict(nb)
    meta = {
        "engine": "nb",
        "hyper": {k: v for k, v in asdict(hyper).items() if k in ("mu0", "s0", "a_t", "b_t")},
        "ssip": asdict(ssip),
        "nb": nb_meta,
        "run": asdict(run),
        "intercept_col": intercept_col,
        "identifiability": "alpha recentred to sum zero; zeta_0 = 0",
        "n_regions": n,
        "p": p,
        "n_times": T,
    }
    meta["config_hash"] = config_hash(meta)
    meta["sweep_seconds"] = timings
    if rho_acc:
        meta["rho_acceptance"] = rho_acc
    return PosteriorChain.from_recorders(recorders, meta)

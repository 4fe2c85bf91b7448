"""Collapsed Gibbs sampler for regional Gaussian regressions under the SSIP prior.

The (gamma, Z) update integrates the slab coefficients out of each region's
likelihood. It works on weighted sufficient statistics so the negative
binomial engine can reuse it unchanged on Polya-Gamma pseudo-data.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .chain import DrawRecorder, PosteriorChain, RunSettings, SamplerError, config_hash
from .graph import AdjacencyGraph
from .prior import (LatentField, RhoSampler, SsipConfig, log_inclusion_odds_prior,
                    sample_z_given_gamma)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class RegionData:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y row counts differ")
        if self.Y.shape[0] < 1:
            raise ValueError("a region needs at least one observation")

    @property
    def m(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GaussianHyper:
    mu0: float = 0.0
    s0: float = 100.0
    a_t: float = 2.0
    b_t: float = 1.0
    a: float = 2.0
    b: float = 1.0

    def __post_init__(self):
        for name in ("s0", "a_t", "b_t", "a", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class GaussianState:
    beta: np.ndarray
    sigma2: np.ndarray
    mu: np.ndarray
    tau2: np.ndarray
    field: LatentField

    def check(self) -> None:
        self.field.check()
        if np.any((self.beta != 0) != self.field.gamma.astype(bool)):
            raise AssertionError("beta nonzero pattern differs from gamma")
        if np.any(self.sigma2 <= 0) or np.any(self.tau2 <= 0):
            raise AssertionError("non-positive variance")


# weighted sufficient statistics ------------------------------------------------

@dataclass
class RegionStats:
    """Statistics of y ~ N(X beta, diag(v)): G = X'WX, b = X'Wy, yWy, sum log v."""

    G: np.ndarray
    b: np.ndarray
    yWy: float
    log_var_sum: float
    m: int

    @classmethod
    def build(cls, X, y, var) -> "RegionStats":
        X = np.asarray(X, float)
        y = np.asarray(y, float)
        var = np.broadcast_to(np.asarray(var, float), y.shape)
        w = 1.0 / var
        Xw = X * w[:, None]
        return cls(Xw.T @ X, Xw.T @ y, float(y @ (w * y)), float(np.log(var).sum()), y.shape[0])

    @classmethod
    def empty(cls, p: int) -> "RegionStats":
        """Zero-information likelihood: the marginal likelihood is identically 1."""
        return cls(np.zeros((p, p)), np.zeros(p), 0.0, 0.0, 0)


def log_marginal_from_stats(stats: RegionStats, active: np.ndarray, mu: np.ndarray,
                            tau2: np.ndarray) -> float:
    """log N(y; X_a mu_a, diag(v) + X_a T_a X_a') via the Woodbury identity."""
    base = stats.m * LOG_2PI + stats.log_var_sum
    out = _kernels.log_marginal(stats.G, stats.b, stats.yWy, base,
                                active.astype(np.int64), mu, tau2)
    if not math.isfinite(out):
        raise FloatingPointError("non-finite marginal likelihood")
    return float(out)


def log_marginal_likelihood(region: RegionData, gamma_i, mu, tau2, sigma2_i: float) -> float:
    """Log likelihood of region i's response with active slab coefficients integrated out."""
    if not sigma2_i > 0:
        raise ValueError("sigma2 must be positive")
    stats = RegionStats.build(region.X, region.Y, sigma2_i)
    active = np.flatnonzero(np.asarray(gamma_i))
    return log_marginal_from_stats(stats, active, np.asarray(mu, float), np.asarray(tau2, float))


def inclusion_probability(log_w: float, log_1mw: float, log_psi1: float, log_psi0: float) -> float:
    """p = w Psi1 / (w Psi1 + (1 - w) Psi0), computed on the log-odds scale."""
    log_odds = (log_w + log_psi1) - (log_1mw + log_psi0)
    if log_odds >= 0:
        return 1.0 / (1.0 + math.exp(-log_odds))
    e = math.exp(log_odds)
    return e / (1.0 + e)


def sweep_gamma_z(field: LatentField, graph: AdjacencyGraph, stats: list[RegionStats],
                  mu: np.ndarray, tau2: np.ndarray, rho: float, rng: np.random.Generator) -> None:
    """One row-major pass of the collapsed (gamma_ij, Z_ij) update, in place."""
    n, p = field.shape
    Z, gamma, forced = field.Z, field.gamma, field.forced_mask
    for i in range(n):
        nb = graph.neighbors[i]
        n_i = int(graph.degrees[i])
        g = gamma[i].astype(bool)
        cur = None
        for j in range(p):
            if not forced[i, j]:
                if cur is None:
                    cur = log_marginal_from_stats(stats[i], np.flatnonzero(g), mu, tau2)
                g[j] = not g[j]
                other = log_marginal_from_stats(stats[i], np.flatnonzero(g), mu, tau2)
                g[j] = not g[j]
                if g[j]:
                    l1, l0 = cur, other
                else:
                    l1, l0 = other, cur
                s = float(Z[nb, j].sum())
                log_w, log_1mw = log_inclusion_odds_prior(s, n_i, rho)
                new = rng.random() < inclusion_probability(log_w, log_1mw, l1, l0)
                if new != g[j]:
                    g[j] = new
                    cur = other
                gamma[i, j] = new
            sample_z_given_gamma(field, graph, i, j, rho, rng)


def draw_beta(stats: RegionStats, gamma_i: np.ndarray, mu: np.ndarray, tau2: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    """Active block from N(M^-1 m, M^-1); inactive entries exactly zero."""
    beta = np.zeros(gamma_i.shape[0])
    active = np.flatnonzero(gamma_i)
    if active.size == 0:
        return beta
    draw = _kernels.beta_draw(stats.G, stats.b, active.astype(np.int64), mu, tau2,
                              rng.standard_normal(active.size))
    if draw.size != active.size or not np.all(np.isfinite(draw)):
        raise FloatingPointError("beta update: Cholesky failed")
    # an exact zero would break the beta/gamma pattern invariant
    draw[draw == 0.0] = np.finfo(float).tiny
    beta[active] = draw
    return beta


def draw_slab_hyper(beta: np.ndarray, gamma: np.ndarray, hyper, mu: np.ndarray,
                    tau2: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """mu_j then tau2_j from their conjugate full conditionals over the active set A_j."""
    p = beta.shape[1]
    mu = mu.copy()
    tau2 = tau2.copy()
    for j in range(p):
        act = gamma[:, j].astype(bool)
        k = int(act.sum())
        bj = beta[act, j]
        prec = 1.0 / hyper.s0 + k / tau2[j]
        mean = (hyper.mu0 / hyper.s0 + bj.sum() / tau2[j]) / prec
        mu[j] = mean + rng.standard_normal() / math.sqrt(prec)
        shape = hyper.a_t + 0.5 * k
        scale = hyper.b_t + 0.5 * float(((bj - mu[j]) ** 2).sum())
        tau2[j] = scale / rng.gamma(shape)
    return mu, tau2


# state-level updates -----------------------------------------------------------

def _gaussian_stats(regions, sigma2, p: int | None = None) -> list[RegionStats]:
    return [RegionStats.empty(p) if r is None else RegionStats.build(r.X, r.Y, s2)
            for r, s2 in zip(regions, sigma2)]


def gibbs_update_gamma_z(state: GaussianState, graph: AdjacencyGraph, regions, hyper, rho: float,
                         rng: np.random.Generator) -> GaussianState:
    stats = _gaussian_stats(regions, state.sigma2, state.beta.shape[1])
    sweep_gamma_z(state.field, graph, stats, state.mu, state.tau2, rho, rng)
    state.beta[state.field.gamma == 0] = 0.0
    return state


def gibbs_update_beta(state: GaussianState, regions, hyper, rng: np.random.Generator,
                      stats: list[RegionStats] | None = None) -> GaussianState:
    if stats is None:
        stats = _gaussian_stats(regions, state.sigma2, state.beta.shape[1])
    for i, st in enumerate(stats):
        state.beta[i] = draw_beta(st, state.field.gamma[i], state.mu, state.tau2, rng)
    return state


def gibbs_update_sigma2(state: GaussianState, regions, hyper, rng: np.random.Generator,
                        pooled: bool = False) -> GaussianState:
    """1/sigma2_i ~ Gamma(a + m_i/2, rate = b + RSS_i/2); one shared draw if pooled."""
    shapes = np.empty(len(regions))
    rates = np.empty(len(regions))
    for i, r in enumerate(regions):
        if r is None:
            shapes[i], rates[i] = 0.0, 0.0
            continue
        if r.m < 1:
            raise ValueError(f"region {i} has no observations")
        resid = r.Y - r.X @ state.beta[i]
        shapes[i] = 0.5 * r.m
        rates[i] = 0.5 * float(resid @ resid)
    if pooled:
        prec = rng.gamma(hyper.a + shapes.sum(), 1.0 / (hyper.b + rates.sum()))
        state.sigma2[:] = 1.0 / prec
    else:
        prec = rng.gamma(hyper.a + shapes, 1.0 / (hyper.b + rates))
        state.sigma2[:] = 1.0 / prec
    return state


def gibbs_update_hyper(state: GaussianState, hyper, rng: np.random.Generator) -> GaussianState:
    state.mu, state.tau2 = draw_slab_hyper(state.beta, state.field.gamma, hyper, state.mu,
                                           state.tau2, rng)
    return state


# driver -------------------------------------------------------------------------

def default_forced_mask(n: int, p: int, intercept: bool = True) -> np.ndarray:
    mask = np.zeros((n, p), bool)
    if intercept:
        mask[:, 0] = True
    return mask


def initial_field(graph: AdjacencyGraph, forced: np.ndarray, rng: np.random.Generator) -> LatentField:
    n, p = forced.shape
    Z = rng.standard_normal((n, p)) / np.sqrt(graph.degrees)[:, None]
    Z[forced] = np.abs(Z[forced]) + np.finfo(float).tiny
    return LatentField.from_z(Z, forced)


def _check_regions(regions, graph: AdjacencyGraph, allow_empty: bool) -> int:
    if len(regions) != graph.n_regions:
        raise ValueError(f"{len(regions)} regions supplied for a {graph.n_regions}-region graph")
    ps = {r.p for r in regions if r is not None}
    if len(ps) != 1:
        raise ValueError("regions disagree on the covariate count p")
    if not allow_empty and any(r is None for r in regions):
        raise ValueError("empty region supplied outside prior-only mode")
    return ps.pop()


def fit_gaussian_ssip(regions, graph: AdjacencyGraph, hyper: GaussianHyper | None = None,
                      ssip: SsipConfig | None = None, run: RunSettings | None = None, *,
                      forced_mask=None, intercept: bool = True, pooled_sigma2: bool = False,
                      prior_only: bool = False, p: int | None = None,
                      callback=None) -> PosteriorChain:
    """Run the Gaussian SSIP Gibbs sampler.

    ``regions`` is a list of RegionData, one per graph region. With
    ``prior_only=True`` the entries may be None (pass ``p``) and every
    region gets a zero-information likelihood, so the chain targets the
    prior. ``callback(it, state)``, if given, runs after each sweep.
    """
    hyper = hyper or GaussianHyper()
    ssip = ssip or SsipConfig()
    run = run or RunSettings()
    if prior_only:
        if p is None:
            p = _check_regions(regions, graph, allow_empty=True)
        regions = [None] * graph.n_regions
    else:
        p = _check_regions(regions, graph, allow_empty=False)
    n = graph.n_regions
    forced = default_forced_mask(n, p, intercept) if forced_mask is None else np.asarray(forced_mask, bool)
    if forced.shape != (n, p):
        raise ValueError("forced_mask shape must be (n_regions, p)")

    recorders = []
    timings = []
    rho_acc = []
    for rng in run.chain_rngs():
        field = initial_field(graph, forced, rng)
        state = GaussianState(
            beta=np.where(field.gamma == 1, hyper.mu0 if hyper.mu0 != 0 else 1e-3, 0.0),
            sigma2=np.ones(n),
            mu=np.full(p, hyper.mu0),
            tau2=np.full(p, hyper.b_t / max(hyper.a_t - 1.0, 0.5)),
            field=field,
        )
        rho = ssip.rho
        rho_sampler = RhoSampler(graph, ssip.rho_step) if ssip.rho_update == "metropolis" else None
        rec = DrawRecorder(run.n_kept)
        t0 = time.perf_counter()
        for it in range(run.iterations):
            try:
                stats = _gaussian_stats(regions, state.sigma2, p)
                sweep_gamma_z(state.field, graph, stats, state.mu, state.tau2, rho, rng)
                gibbs_update_beta(state, regions, hyper, rng, stats=stats)
                if not prior_only:
                    gibbs_update_sigma2(state, regions, hyper, rng, pooled=pooled_sigma2)
                else:
                    state.sigma2[:] = 1.0 / rng.gamma(hyper.a, 1.0 / hyper.b, n)
                gibbs_update_hyper(state, hyper, rng)
                if rho_sampler is not None:
                    rho = rho_sampler(state.field, rho, rng)
            except FloatingPointError as exc:
                raise SamplerError(f"iteration {it}: {exc}") from exc
            if callback is not None:
                callback(it, state)
            if run.keep(it):
                rec.record(beta=state.beta, gamma=state.field.gamma, Z=state.field.Z,
                           sigma2=state.sigma2, mu=state.mu, tau2=state.tau2, rho=rho)
        timings.append((time.perf_counter() - t0) / run.iterations)
        if rho_sampler is not None:
            rho_acc.append(rho_sampler.n_accepted / max(rho_sampler.n_proposed, 1))
        recorders.append(rec)

    meta = {
        "engine": "gaussian",
        "hyper": asdict(hyper),
        "ssip": asdict(ssip),
        "run": asdict(run),
        "intercept_forced": bool(forced[:, 0].all()) if p else False,
        "pooled_sigma2": pooled_sigma2,
        "prior_only": prior_only,
        "n_regions": n,
        "p": p,
    }
    meta["config_hash"] = config_hash(meta)
    meta["sweep_seconds"] = timings
    if rho_acc:
        meta["rho_acceptance"] = rho_acc
    return PosteriorChain.from_recorders(recorders, meta)

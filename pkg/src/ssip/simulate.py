"""Simulation studies and comparator fits.

Two generators: regional Gaussian regressions on a 3 x 3 grid with
inclusion probabilities increasing in region index, and a spatial
capture-recapture population drawn from an inhomogeneous Poisson process
with four spatially varying, partly dependent lists.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from .chain import PosteriorChain, RunSettings
from .crc import build_intersection_table
from .gaussian import GaussianHyper, RegionData, fit_gaussian_ssip
from .graph import AdjacencyGraph, build_grid_graph
from .negbin import NbConfig, fit_nb_ssip
from .prior import SsipConfig

# beta_j ~ N(mean, var) for the two simulated covariates
COEF_PRIORS = ((5.0, 0.25), (3.0, 1.0))
XI_BETA = (2.0, 2.0)


@dataclass
class GaussianSimTruth:
    gamma_true: np.ndarray  # (9, 2)
    beta_true: np.ndarray  # (9, 3): intercept + 2 covariates
    xi: np.ndarray  # (9, 2), sorted ascending down each column
    seed: int


def simulate_gaussian_grid(seed: int, obs_per_region: int = 4, noise_var: float = 1.0,
                           intercept_sd: float = 1.0):
    """Returns (regions, graph, truth) for the 3 x 3 grid study."""
    rng = np.random.default_rng(seed)
    graph = build_grid_graph(3, 3)
    n = graph.n_regions
    xi = np.sort(rng.beta(*XI_BETA, size=(n, 2)), axis=0)
    gamma = (rng.random((n, 2)) < xi).astype(np.int8)
    beta = np.zeros((n, 3))
    beta[:, 0] = intercept_sd * rng.standard_normal(n)
    for j, (m, v) in enumerate(COEF_PRIORS):
        draws = m + math.sqrt(v) * rng.standard_normal(n)
        beta[:, j + 1] = np.where(gamma[:, j] == 1, draws, 0.0)
    regions = []
    for i in range(n):
        X = np.column_stack([np.ones(obs_per_region), rng.random((obs_per_region, 2))])
        Y = X @ beta[i] + math.sqrt(noise_var) * rng.standard_normal(obs_per_region)
        regions.append(RegionData(X, Y))
    return regions, graph, GaussianSimTruth(gamma, beta, xi, seed)


# capture-recapture ----------------------------------------------------------------

@dataclass
class CrcSimTruth:
    locations: np.ndarray  # (N, 2), all simulated points
    capture_patterns: np.ndarray  # (N, 4) 0/1
    cell: np.ndarray  # (N,) region index
    unseen_true: np.ndarray  # (grid_side**2,)
    intensity_scale: float
    seed: int


def crc_intensity(s: np.ndarray, c: float) -> np.ndarray:
    """lambda(s) = c (sqrt(2)/2 - ||s - 0.5||) on the unit square."""
    return c * (math.sqrt(2) / 2 - np.linalg.norm(np.asarray(s) - 0.5, axis=-1))


def capture_probabilities(x, y, l1=None) -> np.ndarray:
    """Per-list capture probabilities at (x, y); lists 2 and 3 depend on list 1."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    l1 = np.zeros_like(x) if l1 is None else np.asarray(l1, float)
    p1 = (x + y) ** 3 / 8.0
    p2 = 3.0 / 16.0 * y ** 3 + 1.0 / 16.0 + 0.5 * l1 * (x < 0.4)
    p3 = 3.0 / 16.0 * x ** 2 + 1.0 / 16.0 + 0.5 * l1 * (x > 0.4)
    p4 = 3.0 / 16.0 * x ** 2 + 1.0 / 16.0
    return np.stack([p1, p2, p3, p4], axis=-1)


def unseen_probability(x, y) -> np.ndarray:
    """Probability that an individual at (x, y) is caught by no list."""
    p = capture_probabilities(x, y)
    # lists 2 and 3 only depend on list 1 through L1 = 1, so condition on L1 = 0
    return (1 - p[..., 0]) * (1 - p[..., 1]) * (1 - p[..., 2]) * (1 - p[..., 3])


def expected_unseen(c: float, grid_side: int = 5) -> np.ndarray:
    """Expected unseen count per cell, by 2-D quadrature of lambda(s) Pr(unseen | s)."""
    out = np.empty(grid_side * grid_side)
    for row in range(grid_side):
        for col in range(grid_side):
            val, _ = integrate.dblquad(
                lambda y, x: crc_intensity(np.array([x, y]), c) * unseen_probability(x, y),
                col / grid_side, (col + 1) / grid_side, row / grid_side, (row + 1) / grid_side)
            out[row * grid_side + col] = val
    return out


def calibrate_crc_intensity(target_total_unseen: float, grid_side: int = 5) -> float:
    """Intensity scale c whose expected total unseen count equals the target (linear in c)."""
    return float(target_total_unseen / expected_unseen(1.0, grid_side).sum())


def simulate_crc(seed: int, c: float = 2000.0, grid_side: int = 5):
    """Returns (CaptureTable, graph, truth); strata are (cell, 0)."""
    if not c > 0:
        raise ValueError("intensity scale c must be positive")
    rng = np.random.default_rng(seed)
    bound = c * math.sqrt(2) / 2
    n_prop = rng.poisson(bound)
    pts = rng.random((n_prop, 2))
    keep = rng.random(n_prop) * bound < crc_intensity(pts, c)
    pts = pts[keep]
    x, y = pts[:, 0], pts[:, 1]
    l1 = (rng.random(x.size) < capture_probabilities(x, y)[:, 0]).astype(int)
    probs = capture_probabilities(x, y, l1)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("capture probability outside [0, 1]")
    caps = np.column_stack([l1, (rng.random((x.size, 3)) < probs[:, 1:]).astype(int)])
    col = np.minimum((x * grid_side).astype(int), grid_side - 1)
    row = np.minimum((y * grid_side).astype(int), grid_side - 1)
    cell = row * grid_side + col
    seen = caps.any(axis=1)
    n_cells = grid_side * grid_side
    unseen = np.bincount(cell[~seen], minlength=n_cells)
    histories = [(int(cl), 0, "".join(map(str, cp))) for cl, cp in zip(cell[seen], caps[seen])]
    table = build_intersection_table(histories, K=4, regions=range(n_cells), times=[0])
    graph = build_grid_graph(grid_side, grid_side)
    return table, graph, CrcSimTruth(pts, caps, cell, unseen, c, seed)


# comparators ------------------------------------------------------------------------

def baseline_independent(regions, graph: AdjacencyGraph, hyper=None, run: RunSettings | None = None,
                         engine: str = "gaussian", **kwargs) -> PosteriorChain:
    """The same sampler with rho = 0: no spatial sharing of inclusion."""
    ssip = SsipConfig(rho=0.0, rho_update="off")
    if engine == "gaussian":
        return fit_gaussian_ssip(regions, graph, hyper, ssip, run, **kwargs)
    return fit_nb_ssip(regions, graph, hyper, ssip, kwargs.pop("nb", None), run, **kwargs)


def _ls_fit(X, Y):
    coef, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank < X.shape[1]:
        return None
    resid = Y - X @ coef
    return coef, float(resid @ resid)


def gaussian_aic(X, Y):
    """AIC of the least-squares fit, counting the error variance as a parameter."""
    fit = _ls_fit(X, Y)
    if fit is None:
        return None
    coef, rss = fit
    m, k = X.shape
    if rss <= 0:
        return coef, -math.inf
    return coef, m * math.log(2 * math.pi * rss / m) + m + 2 * (k + 1)


def nb_loglik(coef, X, Y, h):
    psi = X @ coef
    # log NB(y; h, logistic(psi)) = lgamma(y+h) - lgamma(h) - lgamma(y+1) + y psi - (y+h) log(1+e^psi)
    return float(np.sum(gammaln(Y + h) - gammaln(h) - gammaln(Y + 1)
                        + Y * psi - (Y + h) * np.logaddexp(0.0, psi)))


def nb_mle(X, Y, h: float):
    def nll(b):
        return -nb_loglik(b, X, Y, h)

    def grad(b):
        psi = X @ b
        return -X.T @ (Y - (Y + h) / (1.0 + np.exp(-psi)))

    x0 = np.zeros(X.shape[1])
    res = optimize.minimize(nll, x0, jac=grad, method="BFGS")
    if not np.all(np.isfinite(res.x)):
        return None
    return res.x, -res.fun


def nb_aic(X, Y, h: float):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        return None
    fit = nb_mle(X, Y, h)
    if fit is None:
        return None
    coef, ll = fit
    return coef, -2.0 * ll + 2.0 * X.shape[1]


def baseline_aic(region, forced_mask, family: str = "gaussian", h: float = 1.0,
                 return_coef: bool = False):
    """Exhaustive best-AIC subset over the unforced columns.

    Ties go to fewer columns, then to the lexicographically smallest subset.
    Rank-deficient fits are skipped; if none succeed the forced-only model
    is returned. With ``return_coef`` also returns the refit coefficients
    (zeros for excluded columns) and whether every fit failed.
    """
    forced = np.asarray(forced_mask, bool)
    p = forced.size
    free = np.flatnonzero(~forced)
    if free.size > 20:
        raise ValueError("exhaustive AIC search limited to 20 unforced columns")
    scorer = gaussian_aic if family == "gaussian" else (lambda X, Y: nb_aic(X, Y, h))
    best = None
    for size in range(free.size + 1):
        for subset in itertools.combinations(free.tolist(), size):
            gamma = forced.copy()
            gamma[list(subset)] = True
            cols = np.flatnonzero(gamma)
            if cols.size == 0:
                continue
            res = scorer(region.X[:, cols], region.Y)
            if res is None:
                continue
            coef, aic = res
            key = (aic, size, subset)
            if best is None or key < best[0]:
                full = np.zeros(p)
                full[cols] = coef
                best = (key, gamma.astype(np.int8), full)
    if best is None:
        if return_coef:
            return forced.astype(np.int8), np.zeros(p), True
        return forced.astype(np.int8)
    if return_coef:
        return best[1], best[2], False
    return best[1]


def evaluate_beta_mse(estimate, beta_true) -> float:
    """Mean squared error over all (region, coefficient) entries.

    ``estimate`` is an array or a PosteriorChain (posterior mean of beta).
    """
    if isinstance(estimate, PosteriorChain):
        estimate = estimate.mean("beta")
    estimate = np.asarray(estimate, float)
    beta_true = np.asarray(beta_true, float)
    if estimate.shape != beta_true.shape:
        raise ValueError("estimate and truth shapes differ")
    return float(np.mean((estimate - beta_true) ** 2))


def aic_beta_estimates(regions, forced_mask, family="gaussian", h=1.0) -> np.ndarray:
    return np.vstack([baseline_aic(r, forced_mask[i], family, h, return_coef=True)[1]
                      for i, r in enumerate(regions)])


def inclusion_entropy(prob: np.ndarray) -> float:
    """Mean binary entropy (nats) of inclusion probabilities; 0 for certain maps."""
    p = np.clip(np.asarray(prob, float), 1e-12, 1 - 1e-12)
    return float(np.mean(-(p * np.log(p) + (1 - p) * np.log1p(-p))))


def aic_unseen_estimate(table_row: np.ndarray, design, gamma: np.ndarray, coef: np.ndarray,
                        h: float, failed: bool) -> dict:
    """Plug-in NB predictive at the AIC fit; infinite interval when the fit diverged."""
    if failed or not np.all(np.isfinite(coef)) or coef[0] > 30:
        return {"mean": math.inf, "median": math.inf, "ci_low": 0.0, "ci_high": math.inf}
    from scipy.stats import nbinom

    p_success = 1.0 / (1.0 + math.exp(coef[0]))
    dist = nbinom(h, p_success)
    return {"mean": float(dist.mean()), "median": float(dist.median()),
            "ci_low": float(dist.ppf(0.025)), "ci_high": float(dist.ppf(0.975))}


# study drivers ----------------------------------------------------------------------

# Settings for the capture-recapture study; c matches an expected 1373 unseen in total
CRC_STUDY = {"c": 7197.0, "max_order": 2, "h": 10.0, "s0": 4.0, "iterations": 5000}


def run_gaussian_study(seed: int, iterations: int = 10_000, rho: float = 0.9) -> dict:
    """Coefficient MSE of SSIP, the rho = 0 baseline and exhaustive AIC on one data set."""
    regions, graph, truth = simulate_gaussian_grid(seed)
    run = RunSettings(iterations=iterations, seed=seed)
    ssip = fit_gaussian_ssip(regions, graph, ssip=SsipConfig(rho=rho), run=run)
    indep = baseline_independent(regions, graph, run=run)
    forced = np.zeros((graph.n_regions, 3), bool)
    forced[:, 0] = True
    return {
        "ssip_mse": evaluate_beta_mse(ssip, truth.beta_true),
        "independent_mse": evaluate_beta_mse(indep, truth.beta_true),
        "aic_mse": evaluate_beta_mse(aic_beta_estimates(regions, forced), truth.beta_true),
        "ssip_entropy": inclusion_entropy(ssip.inclusion_prob()[:, 1:]),
        "independent_entropy": inclusion_entropy(indep.inclusion_prob()[:, 1:]),
    }


def run_crc_study(seed: int, settings: dict | None = None, methods=("ssip", "independent", "aic")) -> dict:
    """Unseen-count evaluation per method on one simulated capture-recapture data set."""
    from .crc import build_design, estimate_unseen, evaluate_crc, table_to_regions

    cfg = dict(CRC_STUDY, **(settings or {}))
    table, graph, truth = simulate_crc(seed, c=cfg["c"])
    design = build_design(4, cfg["max_order"])
    regions, _, _ = table_to_regions(table, design)
    forced = np.tile(design.forced, (graph.n_regions, 1))
    hyper = GaussianHyper(s0=cfg["s0"])
    nb = NbConfig(h=cfg["h"], car_intercept=True)
    run = RunSettings(iterations=cfg["iterations"], seed=seed)
    out = {"truth": truth.unseen_true}
    for method in methods:
        if method == "aic":
            est = []
            for i, r in enumerate(regions):
                gamma, coef, failed = baseline_aic(r, design.forced, "nb", cfg["h"], return_coef=True)
                est.append(aic_unseen_estimate(table.counts[i], design, gamma, coef, cfg["h"], failed))
        else:
            rho = 0.9 if method == "ssip" else 0.0
            chain = fit_nb_ssip(regions, graph, hyper, SsipConfig(rho=rho), nb, run, forced_mask=forced)
            rng = np.random.default_rng(seed)
            est = [estimate_unseen(chain, i, None, rng) for i in range(graph.n_regions)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out[method] = {"estimates": est, "metrics": evaluate_crc(est, truth.unseen_true)}
    return out

"""Latent-probit SSIP prior on covariate inclusion indicators.

Each covariate column of the latent field Z follows a CAR Gaussian with
precision D - rho W; inclusion is gamma = 1[Z > 0]. The conditional of a
single Z_ij given its neighbours is N(rho * S_ij / n_i, 1 / n_i), where
S_ij is the neighbour sum of column j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .graph import AdjacencyGraph, car_logdet, car_precision, normalized_adjacency_eigenvalues
from .truncnorm import truncated_normal

RHO_EPS = 1e-6


class ConfigError(ValueError):
    pass


@dataclass
class LatentField:
    """Latent Gaussians ``Z`` (n_regions x p), indicators and forced entries.

    Unforced entries satisfy gamma = 1[Z > 0]; forced entries always have
    gamma = 1 and Z > 0.
    """

    Z: np.ndarray
    gamma: np.ndarray
    forced_mask: np.ndarray

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=np.int8)
        self.forced_mask = np.asarray(self.forced_mask, dtype=bool)
        if not (self.Z.shape == self.gamma.shape == self.forced_mask.shape):
            raise ValueError("Z, gamma and forced_mask shapes differ")

    @classmethod
    def from_z(cls, Z, forced_mask=None) -> "LatentField":
        Z = np.asarray(Z, dtype=float)
        forced = np.zeros(Z.shape, bool) if forced_mask is None else np.asarray(forced_mask, bool)
        return cls(Z, (Z > 0).astype(np.int8), forced)

    @property
    def shape(self):
        return self.Z.shape

    def copy(self) -> "LatentField":
        return LatentField(self.Z.copy(), self.gamma.copy(), self.forced_mask.copy())

    def check(self) -> None:
        """Raise AssertionError if the sign-consistency invariant is broken."""
        if not np.array_equal(self.gamma.astype(bool), self.Z > 0):
            raise AssertionError("gamma != 1[Z > 0]")
        if not np.all(self.gamma[self.forced_mask] == 1):
            raise AssertionError("forced entry excluded")


@dataclass(frozen=True)
class SsipConfig:
    rho: float = 0.9
    rho_update: str = "off"  # "off" | "metropolis"
    rho_step: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.rho_update not in ("off", "metropolis"):
            raise ConfigError(f"unknown rho_update {self.rho_update!r}")
        if self.rho_update == "metropolis":
            if not self.rho_step > 0:
                raise ConfigError("metropolis step must be positive")
            if self.rho > 1.0 - RHO_EPS:
                raise ConfigError("rho must be < 1 when it is updated")


def conditional_mean_sd(Z_col_sum: float, n_i: int, rho: float) -> tuple[float, float]:
    return rho * Z_col_sum / n_i, 1.0 / math.sqrt(n_i)


def conditional_inclusion_prob(field: LatentField, graph: AdjacencyGraph, i: int, j: int,
                               rho: float) -> float:
    """w_ij = Phi(rho * S_ij / sqrt(n_i)) = P(Z_ij > 0 | neighbours)."""
    s = float(field.Z[graph.neighbors[i], j].sum())
    return float(ndtr(rho * s / math.sqrt(graph.degrees[i])))


def log_inclusion_odds_prior(s: float, n_i: int, rho: float) -> tuple[float, float]:
    """(log w, log(1 - w)) for neighbour sum ``s``; stable in both tails."""
    x = rho * s / math.sqrt(n_i)
    return float(log_ndtr(x)), float(log_ndtr(-x))


def sample_z_given_gamma(field: LatentField, graph: AdjacencyGraph, i: int, j: int, rho: float,
                         rng: np.random.Generator) -> float:
    """Redraw Z_ij from its neighbour conditional truncated to the side fixed by gamma_ij."""
    n_i = int(graph.degrees[i])
    s = float(field.Z[graph.neighbors[i], j].sum())
    mean, sd = conditional_mean_sd(s, n_i, rho)
    z = truncated_normal(mean, sd, bool(field.gamma[i, j]), rng)
    field.Z[i, j] = z
    return z


def _car_cholesky_factor(graph: AdjacencyGraph, rho: float) -> np.ndarray:
    Q = car_precision(graph, rho).toarray()
    return np.linalg.cholesky(Q)


def sample_prior_field(graph: AdjacencyGraph, rho: float, p: int, rng: np.random.Generator,
                       forced_mask=None, forced_sweeps: int = 50) -> LatentField:
    """Draw p independent CAR columns and threshold them.

    Forced entries are then moved to the positive half by ``forced_sweeps``
    Gibbs passes of the truncated conditional, which approximates the CAR
    law conditioned on those entries being positive.
    """
    if rho >= 1.0:
        raise ConfigError("joint prior draws need rho < 1 (the IAR limit is improper)")
    L = _car_cholesky_factor(graph, rho)
    eps = rng.standard_normal((graph.n_regions, p))
    # Q = L L^T  =>  Z = L^-T eps has covariance Q^-1
    Z = np.linalg.solve(L.T, eps)
    field = LatentField.from_z(Z, forced_mask)
    if field.forced_mask.any():
        idx = np.argwhere(field.forced_mask)
        field.gamma[field.forced_mask] = 1
        field.Z[field.forced_mask] = np.abs(field.Z[field.forced_mask])
        for _ in range(forced_sweeps):
            for i, j in idx:
                sample_z_given_gamma(field, graph, int(i), int(j), rho, rng)
    return field


def car_log_density(Z: np.ndarray, graph: AdjacencyGraph, rho: float, eigenvalues=None) -> float:
    """Joint log density (up to 2 pi) of the columns of Z under CAR(rho)."""
    Q = car_precision(graph, rho)
    Z = np.asarray(Z, float).reshape(graph.n_regions, -1)
    quad = float(np.einsum("ij,ij->", Z, Q @ Z))
    return 0.5 * Z.shape[1] * car_logdet(graph, rho, eigenvalues) - 0.5 * quad


def reflect_into(x: float, lo: float, hi: float) -> float:
    while x < lo or x > hi:
        x = 2 * lo - x if x < lo else 2 * hi - x
    return x


class RhoSampler:
    """Random-walk Metropolis for rho under a uniform prior on [0, 1 - eps].

    Proposals are reflected at both ends, which keeps the proposal kernel
    symmetric. The target is the joint CAR density of all latent columns.
    """

    def __init__(self, graph: AdjacencyGraph, step: float):
        if not step > 0:
            raise ConfigError("metropolis step must be positive")
        self.graph = graph
        self.step = step
        self.eigenvalues = normalized_adjacency_eigenvalues(graph)
        self.n_proposed = 0
        self.n_accepted = 0

    def __call__(self, field: LatentField, rho: float, rng: np.random.Generator) -> float:
        prop = reflect_into(rho + self.step * rng.standard_normal(), 0.0, 1.0 - RHO_EPS)
        cur = car_log_density(field.Z, self.graph, rho, self.eigenvalues)
        new = car_log_density(field.Z, self.graph, prop, self.eigenvalues)
        self.n_proposed += 1
        if math.log(rng.random()) < new - cur:
            self.n_accepted += 1
            return prop
        return rho


def update_rho_mh(field: LatentField, graph: AdjacencyGraph, config: SsipConfig,
                  rng: np.random.Generator) -> float:
    if config.rho_update != "metropolis":
        raise ConfigError("rho update is switched off in this config")
    return RhoSampler(graph, config.rho_step)(field, config.rho, rng)

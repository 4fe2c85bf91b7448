"""Run settings, draw storage and posterior summaries."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np


class SamplerError(RuntimeError):
    """A numerical failure inside a sweep; the message carries the iteration."""


@dataclass(frozen=True)
class RunSettings:
    iterations: int = 1000
    burn_in: int | None = None  # default: 10% of iterations
    thin: int = 1
    seed: int = 0
    chains: int = 1

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations // 10)
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def keep(self, it: int) -> bool:
        return it >= self.burn_in and (it - self.burn_in) % self.thin == 0

    def chain_rngs(self) -> list[np.random.Generator]:
        seqs = np.random.SeedSequence(self.seed).spawn(self.chains)
        return [np.random.default_rng(s) for s in seqs]


class DrawRecorder:
    """Preallocated per-chain storage; ``record`` copies the given arrays."""

    def __init__(self, n_kept: int):
        self.n_kept = n_kept
        self.pos = 0
        self.store: dict[str, np.ndarray] = {}

    def record(self, **values) -> None:
        for name, v in values.items():
            v = np.asarray(v)
            if name not in self.store:
                self.store[name] = np.empty((self.n_kept,) + v.shape, dtype=v.dtype)
            self.store[name][self.pos] = v
        self.pos += 1


def batch_means_se(x, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of the mean of a correlated series (axis 0)."""
    x = np.asarray(x, float)
    size = x.shape[0] // n_batches
    if size < 1:
        raise ValueError("series shorter than the number of batches")
    means = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    return str(o)


@dataclass
class PosteriorChain:
    """Stored draws keyed by quantity, each shaped (chains, draws, ...)."""

    draws: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_recorders(cls, recorders: list[DrawRecorder], meta: dict) -> "PosteriorChain":
        names = recorders[0].store.keys()
        draws = {n: np.stack([r.store[n] for r in recorders]) for n in names}
        return cls(draws, meta)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.draws[name]

    def __contains__(self, name: str) -> bool:
        return name in self.draws

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    def flat(self, name: str) -> np.ndarray:
        """Pool chains: shape (chains * draws, ...)."""
        a = self.draws[name]
        return a.reshape((-1,) + a.shape[2:])

    def mean(self, name: str) -> np.ndarray:
        return self.flat(name).mean(axis=0)

    def quantile(self, name: str, q) -> np.ndarray:
        return np.quantile(self.flat(name), q, axis=0)

    def inclusion_prob(self) -> np.ndarray:
        return self.flat("gamma").mean(axis=0)

    def summary_rows(self, region_labels=None, covariate_labels=None) -> list[dict]:
        """One row per region x covariate: inclusion probability and beta summary."""
        incl = self.inclusion_prob()
        bmean = self.mean("beta")
        lo, hi = self.quantile("beta", [0.025, 0.975])
        n, p = incl.shape
        rl = region_labels or [str(i) for i in range(n)]
        cl = covariate_labels or [f"x{j}" for j in range(p)]
        return [
            {"region_id": rl[i], "covariate": cl[j], "inclusion_prob": incl[i, j],
             "beta_mean": bmean[i, j], "beta_lo95": lo[i, j], "beta_hi95": hi[i, j]}
            for i in range(n) for j in range(p)
        ]

    def equals(self, other: "PosteriorChain") -> bool:
        if self.draws.keys() != other.draws.keys():
            return False
        return all(np.array_equal(self.draws[k], other.draws[k]) for k in self.draws)

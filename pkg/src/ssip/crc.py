"""Capture-recapture tables, log-linear designs and unseen-population estimates."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .chain import PosteriorChain
from .negbin import NbRegionData


def all_patterns(K: int) -> list[str]:
    """Every nonzero K-bit capture pattern, ordered by its binary value."""
    return [format(v, f"0{K}b") for v in range(1, 2 ** K)]


def pattern_index(pattern: str) -> int:
    return int(pattern, 2) - 1


@dataclass
class CaptureTable:
    """Counts per (region, time) stratum over the 2^K - 1 observable patterns.

    ``counts[s, q]`` is the number of individuals in stratum ``strata[s]``
    whose capture pattern is ``all_patterns(K)[q]``.
    """

    K: int
    strata: list[tuple]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(len(self.strata), 2 ** self.K - 1)

    @property
    def patterns(self) -> list[str]:
        return all_patterns(self.K)

    def count(self, region, time, pattern: str) -> int:
        return int(self.counts[self.strata.index((region, time)), pattern_index(pattern)])

    def total(self) -> int:
        return int(self.counts.sum())

    def regions(self) -> list:
        return list(dict.fromkeys(r for r, _ in self.strata))

    def times(self) -> list:
        return list(dict.fromkeys(t for _, t in self.strata))

    def sparse_strata(self) -> np.ndarray:
        return self.counts.sum(axis=1) == 0


def build_intersection_table(histories, K: int | None = None, regions=None,
                             times=None) -> CaptureTable:
    """Count individuals per (region, time, pattern).

    ``histories`` yields (region, time, pattern) with pattern a 0/1 string.
    ``regions``/``times`` fix the stratum grid so that strata with no
    captures are kept as all-zero rows.
    """
    rows = [(r, t, str(pat).strip()) for r, t, pat in histories]
    for r, t, pat in rows:
        if K is None:
            K = len(pat)
        if len(pat) != K:
            raise ValueError(f"pattern {pat!r} does not have K={K} lists")
        if set(pat) - {"0", "1"}:
            raise ValueError(f"pattern {pat!r} is not a 0/1 string")
        if "1" not in pat:
            raise ValueError("all-zero pattern: an individual on no list cannot be observed")
    if K is None:
        raise ValueError("K is required when there are no histories")
    region_list = list(regions) if regions is not None else list(dict.fromkeys(r for r, _, _ in rows))
    time_list = list(times) if times is not None else list(dict.fromkeys(t for _, t, _ in rows))
    if not time_list:
        time_list = [0]
    strata = [(r, t) for r in region_list for t in time_list]
    where = {s: k for k, s in enumerate(strata)}
    counts = np.zeros((len(strata), 2 ** K - 1), dtype=np.int64)
    for r, t, pat in rows:
        if (r, t) not in where:
            raise ValueError(f"stratum {(r, t)} not in the supplied region/time grid")
        counts[where[(r, t)], pattern_index(pat)] += 1
    return CaptureTable(K, strata, counts)


@dataclass
class CrcDesign:
    K: int
    max_order: int
    X: np.ndarray
    columns: list[str]
    subsets: list[tuple]
    forced: np.ndarray

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    @property
    def n_unforced(self) -> int:
        return int((~self.forced).sum())


def build_design(K: int, max_order: int) -> CrcDesign:
    """Intercept, main effects d_k and interaction products up to ``max_order``.

    Rows follow ``all_patterns(K)``; the intercept and main effects are forced.
    """
    if K < 1 or not 1 <= max_order <= K:
        raise ValueError(f"need 1 <= max_order <= K, got K={K}, max_order={max_order}")
    D = np.array([[int(ch) for ch in pat] for pat in all_patterns(K)], dtype=float)
    subsets = [()]
    for r in range(1, max_order + 1):
        subsets += list(itertools.combinations(range(K), r))
    cols = [np.prod(D[:, list(s)], axis=1) if s else np.ones(D.shape[0]) for s in subsets]
    names = ["intercept" if not s else ":".join(f"d{k + 1}" for k in s) for s in subsets]
    forced = np.array([len(s) <= 1 for s in subsets])
    return CrcDesign(K, max_order, np.column_stack(cols), names, subsets, forced)


def table_to_regions(table: CaptureTable, design: CrcDesign) -> tuple[list, list, list]:
    """One NbRegionData per region, stacking its time strata.

    Returns (regions, region_labels, time_labels); time indices are positions
    in ``time_labels``.
    """
    if design.K != table.K:
        raise ValueError("design and table disagree on K")
    rlabels = table.regions()
    tlabels = table.times()
    tpos = {t: k for k, t in enumerate(tlabels)}
    out = []
    for r in rlabels:
        rows = [k for k, (rr, _) in enumerate(table.strata) if rr == r]
        Y = np.concatenate([table.counts[k] for k in rows])
        X = np.vstack([design.X] * len(rows))
        tidx = np.concatenate([np.full(design.X.shape[0], tpos[table.strata[k][1]]) for k in rows])
        out.append(NbRegionData(X, Y, tidx))
    return out, rlabels, tlabels


def unseen_linear_predictor(chain: PosteriorChain, region: int, time: int | None = None) -> np.ndarray:
    """psi at the all-zeros cell for every stored draw (pooled over chains)."""
    n = chain.meta.get("n_regions")
    if n is not None and not 0 <= region < n:
        raise KeyError(f"region {region} not in chain")
    psi = np.zeros(chain.n_chains * chain.n_draws)
    if chain.meta.get("intercept_col") is not None:
        psi += chain.flat("beta")[:, region, chain.meta["intercept_col"]]
    if "alpha" in chain:
        psi += chain.flat("alpha")[:, region] + chain.flat("level")
    if time is not None and "zeta_t" in chain and chain["zeta_t"].shape[-1]:
        T = chain["zeta_t"].shape[-1]
        if not 0 <= time < T:
            raise KeyError(f"time {time} not in chain")
        psi += chain.flat("zeta_t")[:, time]
    return psi


def _summarise(y0: np.ndarray, expected: float, plugin: float) -> dict:
    lo, med, hi = np.quantile(y0, [0.025, 0.5, 0.975])
    return {
        "mean": float(y0.mean()),
        "median": float(med),
        "ci_low": float(lo),
        "ci_high": float(hi),
        "expected": float(expected),
        "plugin": float(plugin),
    }


def estimate_unseen(chain: PosteriorChain, region: int, time: int | None = None,
                    rng: np.random.Generator | None = None, h: float | None = None) -> dict:
    """Posterior predictive of the all-zeros count Y_0 ~ NB(h, logistic(psi_0)).

    Each stored draw contributes one predictive draw, so the result is the
    model average over every visited inclusion pattern.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    h = chain.meta.get("nb", {}).get("h", 1.0) if h is None else h
    # sorting makes the result a function of the draw multiset, not its order
    psi0 = np.sort(unseen_linear_predictor(chain, region, time))
    # numpy's success probability is 1 - p in the (h, p = logistic(psi)) convention
    y0 = rng.negative_binomial(h, 1.0 / (1.0 + np.exp(psi0)))
    return _summarise(y0, np.mean(h * np.exp(psi0)), h * math.exp(psi0.mean()))


def estimate_unseen_total(chain: PosteriorChain, regions, time: int | None = None,
                          rng: np.random.Generator | None = None, h: float | None = None) -> dict:
    """Predictive of the summed unseen count over several regions, draw by draw."""
    rng = np.random.default_rng(0) if rng is None else rng
    h = chain.meta.get("nb", {}).get("h", 1.0) if h is None else h
    psi = np.stack([unseen_linear_predictor(chain, r, time) for r in regions])
    y0 = rng.negative_binomial(h, 1.0 / (1.0 + np.exp(psi))).sum(axis=0)
    return _summarise(y0, np.mean(h * np.exp(psi).sum(axis=0)),
                      float((h * np.exp(psi.mean(axis=1))).sum()))


def evaluate_crc(estimates, truth) -> dict:
    """Coverage, RMSE and mean |median - truth| of point estimates, plus Pearson r.

    ``estimates`` is a sequence of dicts with ``median``, ``ci_low`` and ``ci_high``.
    """
    truth = np.asarray(truth, float)
    if len(estimates) != truth.size:
        raise ValueError("estimates and truth have different lengths")
    med = np.array([e["median"] for e in estimates], float)
    lo = np.array([e["ci_low"] for e in estimates], float)
    hi = np.array([e["ci_high"] for e in estimates], float)
    coverage = float(np.mean((lo <= truth) & (truth <= hi)))
    err = med - truth
    if np.std(truth) == 0 or np.std(med) == 0 or not np.all(np.isfinite(med)):
        warnings.warn("correlation undefined for constant or non-finite inputs", RuntimeWarning)
        corr = float("nan")
    else:
        corr = float(np.corrcoef(truth, med)[0, 1])
    return {
        "coverage": coverage,
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "mean_median_abs_diff": float(np.mean(np.abs(err))),
        "correlation": corr,
        "all_finite": bool(np.all(np.isfinite(hi))),
    }


def independent_lists_estimate(table_row: np.ndarray, K: int) -> float:
    """Closed-form e^alpha from the Poisson log-linear independence model.

    Under independence the cell means factorise as N prod_k q_k^d_k (1 - q_k)^(1 - d_k),
    so the all-zeros mean solves a fixed point in (N, q). Iterative
    proportional fitting over the observed cells.
    """
    D = np.array([[int(ch) for ch in pat] for pat in all_patterns(K)], dtype=float)
    y = np.asarray(table_row, float)
    n_obs = y.sum()
    if n_obs == 0:
        return 0.0
    N = 2.0 * n_obs
    for _ in range(10_000):
        q = np.clip((D * y[:, None]).sum(axis=0) / N, 1e-12, 1 - 1e-12)
        p0 = float(np.prod(1 - q))
        N_new = n_obs / (1.0 - p0)
        if abs(N_new - N) < 1e-10 * N:
            N = N_new
            break
        N = N_new
    return N - n_obs

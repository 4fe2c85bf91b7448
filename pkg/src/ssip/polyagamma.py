"""Polya-Gamma PG(b, c) sampling.

PG(1, c) uses Devroye's exact alternating-series rejection sampler as laid
out by Polson, Scott & Windle. Integer b is a sum of b unit draws; a
fractional remainder uses a truncated sum-of-gammas series whose omitted
tail is replaced by its expectation. Very large b is sampled from a
moment-matched normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

TRUNC = 0.64
PI2 = math.pi ** 2


@dataclass(frozen=True)
class PgParams:
    b: float
    c: float = 0.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("PG shape b must be positive")


@dataclass(frozen=True)
class PgConfig:
    """Crossover and truncation constants, exposed for sensitivity checks."""

    gaussian_above: float = 170.0
    series_terms: int = 200


DEFAULT_CONFIG = PgConfig()


def pg_mean(b, c):
    """E PG(b, c) = b tanh(c/2) / (2c); b/4 in the c -> 0 limit."""
    b = np.asarray(b, float)
    c = np.abs(np.asarray(c, float))
    small = c < 1e-8
    cs = np.where(small, 1.0, c)
    out = np.where(small, b / 4.0, b / (2.0 * cs) * np.tanh(cs / 2.0))
    return out if out.ndim else float(out)


def pg_var(b, c):
    """Var PG(b, c) = b (sinh c - c) / (4 c^3 cosh^2(c/2)); b/24 as c -> 0."""
    b = np.asarray(b, float)
    c = np.abs(np.asarray(c, float))
    small = c < 1e-3
    cs = np.where(small, 1.0, c)
    big = b * (np.sinh(cs) - cs) / (4.0 * cs ** 3 * np.cosh(cs / 2.0) ** 2)
    # series about 0: b/24 - b c^2 / 240 + O(c^4)
    out = np.where(small, b / 24.0 - b * c * c / 240.0, big)
    return out if out.ndim else float(out)


# exact PG(1, c) -----------------------------------------------------------------

def _a_coef(n, x):
    """Piecewise coefficient a_n(x) of the Jacobi-type series."""
    k = (n + 0.5) * math.pi
    out = np.empty_like(x)
    right = x > TRUNC
    out[right] = k * np.exp(-0.5 * k * k * x[right])
    xl = x[~right]
    out[~right] = np.exp(-1.5 * (math.log(0.5 * math.pi) + np.log(xl)) + math.log(k)
                         - 2.0 * (n + 0.5) ** 2 / xl)
    return out


def _mass_texpon(z):
    """Probability of proposing from the exponential (right) piece."""
    t = TRUNC
    fz = PI2 / 8.0 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    xb = x0 - z + log_ndtr(b)
    xa = x0 + z + log_ndtr(a)
    qdivp = 4.0 / math.pi * (np.exp(xb) + np.exp(xa))
    return 1.0 / (1.0 + qdivp)


def _rtigauss(z, rng):
    """Inverse-Gaussian(1/z, 1) truncated to (0, TRUNC), vectorised over z."""
    t = TRUNC
    out = np.empty_like(z)
    small = z < 1.0 / t  # mean 1/z beyond the truncation point
    idx = np.flatnonzero(small)
    while idx.size:
        e1 = rng.exponential(size=idx.size)
        e2 = rng.exponential(size=idx.size)
        ok = e1 * e1 <= 2.0 * e2 / t
        cand = t / (1.0 + e1 * t) ** 2
        alpha = np.exp(-0.5 * z[idx] ** 2 * cand)
        ok &= rng.random(idx.size) <= alpha
        out[idx[ok]] = cand[ok]
        idx = idx[~ok]
    idx = np.flatnonzero(~small)
    while idx.size:
        mu = 1.0 / z[idx]
        y = rng.standard_normal(idx.size) ** 2
        muy = mu * y
        x = mu + 0.5 * mu * muy - 0.5 * mu * np.sqrt(4.0 * muy + muy * muy)
        flip = rng.random(idx.size) > mu / (mu + x)
        x = np.where(flip, mu * mu / x, x)
        ok = x < t
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def sample_pg1(c, rng: np.random.Generator) -> np.ndarray:
    """Exact PG(1, c) draws, one per entry of ``c``."""
    z = 0.5 * np.abs(np.asarray(c, float)).ravel()
    out = np.empty_like(z)
    fz = PI2 / 8.0 + 0.5 * z * z
    p_exp = _mass_texpon(z)
    todo = np.arange(z.size)
    while todo.size:
        zz = z[todo]
        use_exp = rng.random(todo.size) < p_exp[todo]
        x = np.empty(todo.size)
        ne = int(use_exp.sum())
        x[use_exp] = TRUNC + rng.exponential(size=ne) / fz[todo][use_exp]
        if ne < todo.size:
            x[~use_exp] = _rtigauss(zz[~use_exp], rng)
        s = _a_coef(0, x)
        y = rng.random(todo.size) * s
        accepted = np.zeros(todo.size, bool)
        live = np.ones(todo.size, bool)
        n = 0
        while live.any():
            n += 1
            li = np.flatnonzero(live)
            an = _a_coef(n, x[li])
            if n % 2 == 1:
                s[li] -= an
                acc = y[li] <= s[li]
                accepted[li[acc]] = True
                live[li[acc]] = False
            else:
                s[li] += an
                rej = y[li] > s[li]
                live[li[rej]] = False
        out[todo[accepted]] = 0.25 * x[accepted]
        todo = todo[~accepted]
    return out.reshape(np.shape(c))


# general b ------------------------------------------------------------------------

def sample_pg_series(b, c, rng: np.random.Generator, terms: int = 200) -> np.ndarray:
    """Truncated sum-of-gammas PG(b, c) with the omitted tail replaced by its mean."""
    b = np.atleast_1d(np.asarray(b, float))
    c = np.atleast_1d(np.asarray(c, float))
    k = np.arange(1, terms + 1)
    d = (k - 0.5) ** 2 + (c[:, None] ** 2) / (4.0 * PI2)
    g = rng.standard_gamma(np.broadcast_to(b[:, None], d.shape))
    partial = (g / d).sum(axis=1) / (2.0 * PI2)
    tail_mean = pg_mean(b, c) - b * (1.0 / d).sum(axis=1) / (2.0 * PI2)
    return partial + np.maximum(tail_mean, 0.0)


def sample_pg(b, c, rng: np.random.Generator, config: PgConfig = DEFAULT_CONFIG):
    """Draw PG(b, c) elementwise; scalars in, scalar out."""
    scalar = np.ndim(b) == 0 and np.ndim(c) == 0
    b, c = np.broadcast_arrays(np.asarray(b, float), np.asarray(c, float))
    shape = b.shape
    b = b.ravel()
    c = c.ravel()
    if np.any(~(b > 0)):
        raise ValueError("PG shape b must be positive")
    out = np.zeros(b.size)

    big = b > config.gaussian_above
    if big.any():
        m = pg_mean(b[big], c[big])
        sd = np.sqrt(pg_var(b[big], c[big]))
        draw = m + sd * rng.standard_normal(int(big.sum()))
        out[big] = np.maximum(draw, np.finfo(float).tiny)

    small = np.flatnonzero(~big)
    if small.size:
        nint = np.floor(b[small]).astype(np.int64)
        frac = b[small] - nint
        total = int(nint.sum())
        if total:
            cc = np.repeat(c[small], nint)
            unit = sample_pg1(cc, rng)
            owner = np.repeat(np.arange(small.size), nint)
            out[small] += np.bincount(owner, weights=unit, minlength=small.size)
        has_frac = frac > 1e-12
        if has_frac.any():
            fi = small[has_frac]
            out[fi] += sample_pg_series(frac[has_frac], c[fi], rng, config.series_terms)
    out = out.reshape(shape)
    return float(out) if scalar else out

"""Half-line truncated normal sampling.

Inverse-CDF on the survival scale for moderate truncation points and
Robert's (1995) translated-exponential rejection once the bound is more
than ``TAIL_SWITCH`` standard deviations past the mean.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, ndtri

TAIL_SWITCH = 5.0


def _robert_tail(a: float, rng: np.random.Generator) -> float:
    # a > 0: draw x >= a from the standard normal tail
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        x = a + rng.exponential(1.0 / alpha)
        if math.log(rng.random()) <= -0.5 * (x - alpha) ** 2:
            return x


def std_lower_truncated(a: float, rng: np.random.Generator) -> float:
    """One draw of X ~ N(0, 1) conditioned on X > a."""
    if a > TAIL_SWITCH:
        return _robert_tail(a, rng)
    # X = -Phi^-1(U * Phi(-a)) keeps precision for large positive a
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return float(-ndtri(u * ndtr(-a)))


def std_lower_truncated_many(a, rng: np.random.Generator, size=None) -> np.ndarray:
    """Vectorised X > a draws; ``a`` broadcasts against ``size``."""
    a = np.asarray(a, dtype=float)
    shape = a.shape if size is None else size
    a = np.broadcast_to(a, shape)
    out = np.empty(shape)
    tail = a > TAIL_SWITCH
    body = ~tail
    if body.any():
        u = rng.random(int(body.sum()))
        u = np.where(u == 0.0, np.finfo(float).tiny, u)
        out[body] = -ndtri(u * ndtr(-a[body]))
    if tail.any():
        at = a[tail]
        alpha = 0.5 * (at + np.sqrt(at * at + 4.0))
        res = np.empty_like(at)
        todo = np.arange(at.size)
        while todo.size:
            x = at[todo] + rng.exponential(1.0, todo.size) / alpha[todo]
            ok = np.log(rng.random(todo.size)) <= -0.5 * (x - alpha[todo]) ** 2
            res[todo[ok]] = x[ok]
            todo = todo[~ok]
        out[tail] = res
    return out


def truncated_normal(mean: float, sd: float, positive: bool, rng: np.random.Generator) -> float:
    """Draw from N(mean, sd^2) restricted to (0, inf) if ``positive`` else (-inf, 0].

    A returned 0.0 on the positive side is nudged up to the smallest
    positive float so the sign convention gamma = 1[Z > 0] always holds.
    """
    if positive:
        x = mean + sd * std_lower_truncated(-mean / sd, rng)
        return x if x > 0.0 else np.nextafter(0.0, 1.0)
    x = mean - sd * std_lower_truncated(mean / sd, rng)
    return min(x, 0.0)


def truncated_normal_many(mean, sd, positive, rng: np.random.Generator, size=None) -> np.ndarray:
    mean, sd, positive = np.broadcast_arrays(
        np.asarray(mean, float), np.asarray(sd, float), np.asarray(positive, bool))
    if size is not None:
        mean, sd, positive = (np.broadcast_to(v, size) for v in (mean, sd, positive))
    sign = np.where(positive, 1.0, -1.0)
    x = mean + sign * sd * std_lower_truncated_many(-sign * mean / sd, rng)
    return np.where(positive, np.maximum(x, np.nextafter(0.0, 1.0)), np.minimum(x, 0.0))

"""Deterministic quasi-random sample generators (scrambled Halton)."""

import numpy as np
from scipy.stats import norm, qmc


def halton(n, d, seed=0):
    """Return ``n`` scrambled Halton points in the unit cube ``[0, 1)^d``."""
    if n <= 0 or d <= 0:
        return np.zeros((max(n, 0), max(d, 0)))
    return qmc.Halton(d=d, scramble=True, seed=seed).random(n)


def unit_directions(n, d, seed=0):
    """Euclidean unit vectors from Halton points pushed through the normal quantile."""
    u = np.clip(halton(n, d, seed), 1e-12, 1 - 1e-12)
    g = norm.ppf(u)
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    return g / nrm


def ball_points(n, d, radius, seed=0):
    """Points in the Euclidean ball of the given radius (uniform in volume)."""
    if n <= 0:
        return np.zeros((0, d))
    dirs = unit_directions(n, d, seed)
    r = halton(n, 1, seed + 7919)[:, 0] ** (1.0 / d)
    return radius * dirs * r[:, None]


def box_points(n, lows, highs, seed=0):
    """Points in the axis-aligned box ``[lows, highs]``."""
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    return lows + halton(n, lows.size, seed) * (highs - lows)

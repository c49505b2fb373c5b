"""Independent brute-force oracles for the allocation problem.

They never use the closed forms under test: only direct evaluation of the
ratio alpha.mu / sqrt(alpha' Sigma alpha) and generic search.
"""
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy import optimize


def ratio(a, mu, sigma):
    a = np.atleast_2d(a)
    return (a @ mu) / np.sqrt(np.einsum("ij,jk,ik->i", a, sigma, a))


def sphere_min(mu, sigma, rng, starts=6):
    """Minimum of the ratio over R^n minus 0, by restarted quasi-Newton search."""
    n = mu.size
    if n == 1:
        return float(min(ratio(np.array([[1.0], [-1.0]]), mu, sigma)))

    # the ratio is scale free; the norm penalty pins the scale without moving the minimum
    def f(a):
        s = sigma @ a
        q = a @ s
        pen = a @ a - 1.0
        val = (a @ mu) / np.sqrt(q) + pen * pen
        return val, mu / np.sqrt(q) - (a @ mu) * s / q ** 1.5 + 4.0 * pen * a

    best = np.inf
    for _ in range(starts):
        r = optimize.minimize(f, rng.normal(size=n), jac=True, method="BFGS", options={"gtol": 1e-12})
        best = min(best, float(ratio(r.x, mu, sigma)[0]))
    return best


@lru_cache(maxsize=None)
def simplex_grid(n, steps):
    """All points of the n-simplex with coordinates in multiples of 1/steps (stars and bars)."""
    if n == 1:
        return np.ones((1, 1))
    rows = []
    for bars in combinations(range(steps + n - 1), n - 1):
        edges = (-1, *bars, steps + n - 1)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(n)])
    return np.array(rows, dtype=np.int16)


def simplex_grid_min(mu, sigma, steps=100, chunk=200_000):
    g = simplex_grid(mu.size, steps)
    best = np.inf
    for s in range(0, g.shape[0], chunk):
        a = g[s:s + chunk].astype(float) / steps
        best = min(best, float(np.min(ratio(a, mu, sigma))))
    return best

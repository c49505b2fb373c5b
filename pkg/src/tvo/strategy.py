"""Allocation strategies and the worst-case allocation solvers.

The allocation objective is the zero-homogeneous ratio ``alpha.mu / |alpha.nu|``.
Calls are priced under its minimizer and puts under its maximizer. Asset
indices are 0-based; ties go to the lowest index.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import optimize

from .market import MarketData, build_nu, covariance, integrate_curve

Direction = Literal["min", "max"]

# |alpha.nu| below this is a degenerate allocation
NORM_FLOOR = 1e-12


class DegenerateAllocationError(ArithmeticError):
    pass


class RankError(np.linalg.LinAlgError):
    pass


def direction_for(payoff: str) -> Direction:
    """Calls need the minimal local drift, puts the maximal one."""
    if payoff == "call":
        return "min"
    if payoff == "put":
        return "max"
    raise ValueError(f"unknown payoff {payoff!r}")


def diffusion_norm(alpha: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """|alpha . nu| for alpha (..., n) and nu (..., n, n)."""
    u = np.einsum("...i,...ij->...j", alpha, nu)
    return np.sqrt(np.sum(u * u, axis=-1))


def allocation_objective(alpha, mu, nu) -> np.ndarray:
    norm = diffusion_norm(np.asarray(alpha, dtype=float), nu)
    if np.any(norm < NORM_FLOOR):
        raise DegenerateAllocationError("allocation has zero diffusion norm")
    return np.sum(np.asarray(alpha) * mu, axis=-1) / norm


def local_drift(alpha, market: MarketData, t: float, sigma_bar: float, spots=None):
    """sigma_bar * alpha.mu(t) / |alpha.nu(t[, S])|."""
    nu = build_nu(market, t, spots)
    return sigma_bar * allocation_objective(alpha, market.mu(t), nu)


def _inv_sigma_mu(mu, sigma):
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise RankError("covariance matrix is singular or not positive definite") from exc
    return np.linalg.solve(chol.T, np.linalg.solve(chol, mu))


def min_drift_value(mu, sigma) -> float:
    """Minimum of the unconstrained objective, -sqrt(mu' Sigma^-1 mu)."""
    mu = np.asarray(mu, dtype=float)
    x = _inv_sigma_mu(mu, np.asarray(sigma, dtype=float))
    return -math.sqrt(max(float(mu @ x), 0.0))


@dataclass(frozen=True)
class FreeSolution:
    alpha: np.ndarray
    objective: float
    degenerate: bool = False


def optimal_free(mu, nu, direction: Direction = "min") -> FreeSolution:
    """Closed-form unconstrained optimum, scaled to unit diffusion norm.

    With ``mu == 0`` every allocation gives objective 0; the returned vector
    is then an arbitrary unit-diffusion direction with ``degenerate=True``.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    sigma = nu @ nu.T
    x = _inv_sigma_mu(mu, sigma)
    if not np.any(mu):
        e = np.zeros_like(mu)
        e[0] = 1.0
        return FreeSolution(e / diffusion_norm(e, nu), 0.0, degenerate=True)
    sign = -1.0 if direction == "min" else 1.0
    alpha = sign * x / diffusion_norm(x, nu)
    return FreeSolution(alpha, sign * math.sqrt(float(mu @ x)))


def optimal_free_batch(mu, nu, direction: Direction = "min") -> np.ndarray:
    """Vectorized closed-form optimum for nu of shape (P, n, n)."""
    sigma = nu @ np.swapaxes(nu, -1, -2)
    x = np.linalg.solve(sigma, np.broadcast_to(mu, sigma.shape[:-1])[..., None])[..., 0]
    norm = diffusion_norm(x, nu)
    if not np.any(mu):
        e = np.zeros(nu.shape[:-1])
        e[..., 0] = 1.0
        return e / diffusion_norm(e, nu)[..., None]
    sign = -1.0 if direction == "min" else 1.0
    return sign * x / norm[..., None]


def optimal_bang_bang(mu, sigma) -> tuple[int, np.ndarray]:
    """Long-only optimum for nonnegative carries: all weight on argmin mu_i / sqrt(Sigma_ii)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(mu < 0):
        raise ValueError("bang-bang solution requires nonnegative carries")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise RankError("covariance matrix is not positive definite") from exc
    ratios = mu / np.sqrt(np.diag(sigma))
    i = int(np.argmin(ratios))
    alpha = np.zeros_like(mu)
    alpha[i] = 1.0
    return i, alpha


@dataclass(frozen=True)
class BoxConstraint:
    """Componentwise bounds on alpha; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def free(cls, n: int) -> "BoxConstraint":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def long_only(cls, n: int) -> "BoxConstraint":
        return cls(np.zeros(n), np.full(n, np.inf))

    @property
    def is_free(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))


def _candidate_points(box: BoxConstraint, n: int, rng: np.random.Generator) -> np.ndarray:
    # unbounded sides are cut to a unit-scale window: only directions matter there
    fin_lo, fin_hi = np.isfinite(box.lower), np.isfinite(box.upper)
    lo = np.where(fin_lo, box.lower, np.where(fin_hi, box.upper - 2.0, -1.0))
    hi = np.where(fin_hi, box.upper, np.where(fin_lo, lo + 2.0, 1.0))
    levels = 41 if n == 1 else max(3, int(4000 ** (1.0 / n)))
    axes = [np.linspace(lo[i], hi[i], levels) for i in range(n)]
    grid = np.array(list(itertools.product(*axes)))
    rand = lo + (hi - lo) * rng.random((2000, n))
    return np.vstack([grid, rand])


def optimal_constrained(mu, nu, constraint: BoxConstraint | str = "free",
                        direction: Direction = "min") -> FreeSolution:
    """Numeric optimum of alpha.mu / |alpha.nu| over a box: grid scan, then local refinement."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    n = mu.size
    if isinstance(constraint, str):
        constraint = {"free": BoxConstraint.free, "long-only": BoxConstraint.long_only}[constraint](n)
    lo, hi = constraint.lower, constraint.upper
    if np.any(lo > hi) or (np.all(lo == 0) and np.all(hi == 0)):
        raise ValueError("constraint set is empty after excluding the zero allocation")
    sign = 1.0 if direction == "min" else -1.0

    sigma = nu @ nu.T

    def f(a):
        norm = math.sqrt(a @ sigma @ a)
        val = sign * (a @ mu) / norm
        grad = sign * (mu / norm - (a @ mu) * (sigma @ a) / norm ** 3)
        return val, grad

    pts = _candidate_points(constraint, n, np.random.default_rng(12345))
    norms = diffusion_norm(pts, nu)
    ok = norms > 1e-9
    if not np.any(ok):
        raise ValueError("constraint set contains no usable allocation")
    vals = np.where(ok, sign * (pts @ mu) / np.where(ok, norms, 1.0), np.inf)
    order = np.argsort(vals)[:5]
    bounds = [(None if np.isneginf(l) else l, None if np.isposinf(h) else h) for l, h in zip(lo, hi)]
    best_x, best_f = pts[order[0]], vals[order[0]]
    for j in order:
        x0 = pts[j]
        # keep the start at unit diffusion scale when the box allows rescaling
        if constraint.is_free:
            x0 = x0 / diffusion_norm(x0, nu)
        res = optimize.minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        if np.isfinite(res.fun) and res.fun < best_f and diffusion_norm(res.x, nu) > 1e-9:
            best_x, best_f = res.x, float(res.fun)
    alpha = best_x / diffusion_norm(best_x, nu)
    return FreeSolution(alpha, sign * float(best_f))


# -- strategies ----------------------------------------------------------------

class AllocationStrategy:
    """Maps (fixing index, fixing time, spots, index level) to weights.

    ``spots`` has shape (P, n) and ``level`` shape (P,); either may be None
    for strategies flagged ``deterministic`` (functions of time only).
    """

    deterministic = True
    kind = "custom"

    def __call__(self, k: int, t: float, spots=None, level=None) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


class ConstantStrategy(AllocationStrategy):
    kind = "constant"

    def __init__(self, alpha):
        self.alpha = np.asarray(alpha, dtype=float)

    def __call__(self, k, t, spots=None, level=None):
        return self.alpha

    def describe(self):
        return {"kind": self.kind, "alpha": self.alpha.tolist()}


class TimetableStrategy(AllocationStrategy):
    """One weight vector per fixing interval."""

    kind = "timetable"

    def __init__(self, grid, weights, label: str | None = None):
        self.grid = np.asarray(grid, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape[0] != self.grid.size - 1:
            raise ValueError("timetable needs one weight vector per fixing interval")
        self.label = label

    def __call__(self, k, t, spots=None, level=None):
        return self.weights[k]

    def describe(self):
        d = {"kind": self.kind, "grid": self.grid.tolist(), "weights": self.weights.tolist()}
        if self.label:
            d["label"] = self.label
        return d


class OptimalFreeStrategy(AllocationStrategy):
    """Closed-form unconstrained optimum, re-solved at each fixing from the current state.

    Under local volatility this is the pathwise baseline strategy.
    """

    kind = "closed-form-free"

    def __init__(self, market: MarketData, direction: Direction = "min"):
        self.market = market
        self.direction = direction
        self.deterministic = not market.is_local_vol

    def __call__(self, k, t, spots=None, level=None):
        mu = self.market.mu(t)
        if not self.market.is_local_vol:
            return optimal_free(mu, build_nu(self.market, t), self.direction).alpha
        return optimal_free_batch(mu, build_nu(self.market, t, spots), self.direction)

    def describe(self):
        return {"kind": self.kind, "direction": self.direction}


class BangBangStrategy(AllocationStrategy):
    kind = "bang-bang"

    def __init__(self, market: MarketData):
        if market.is_local_vol:
            raise ValueError("bang-bang strategy needs a Black-Scholes market")
        self.market = market

    def __call__(self, k, t, spots=None, level=None):
        return optimal_bang_bang(self.market.mu(t), covariance(self.market, t))[1]

    def describe(self):
        return {"kind": self.kind}


class ConstrainedStrategy(AllocationStrategy):
    kind = "constrained"

    def __init__(self, market: MarketData, constraint="long-only", direction: Direction = "min"):
        if market.is_local_vol:
            raise ValueError("constrained strategy needs a Black-Scholes market")
        self.market = market
        self.constraint = constraint
        self.direction = direction
        self._cache: dict[float, np.ndarray] = {}

    def __call__(self, k, t, spots=None, level=None):
        key = float(t)
        if key not in self._cache:
            nu = build_nu(self.market, t)
            self._cache[key] = optimal_constrained(self.market.mu(t), nu, self.constraint,
                                                   self.direction).alpha
        return self._cache[key]

    def describe(self):
        c = self.constraint if isinstance(self.constraint, str) else "box"
        return {"kind": self.kind, "constraint": c, "direction": self.direction}


def _one_hot(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


def baseline(variant: str, market: MarketData, grid) -> TimetableStrategy:
    """The intuitive one-hot allocations S_A, S_B, S_C on a fixing grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ValueError("grid must contain at least two fixings")
    n = market.n
    T = float(grid[-1])
    rows = []
    if variant == "S_A":
        fwd = market.spot * np.exp(integrate_curve(market.rate, 0.0, T) - market.carry_integral(0.0, T))
        rows = [_one_hot(n, int(np.argmax(fwd)))] * (grid.size - 1)
    elif variant in ("S_B", "S_C"):
        if market.is_local_vol and variant == "S_C":
            raise ValueError("S_C needs deterministic vols")
        for t in grid[:-1]:
            score = market.mu(t)
            if variant == "S_C":
                score = score / market.vols(t)
            rows.append(_one_hot(n, int(np.argmin(score))))
    else:
        raise ValueError(f"unknown baseline variant {variant!r}")
    return TimetableStrategy(grid, np.array(rows), label=variant)


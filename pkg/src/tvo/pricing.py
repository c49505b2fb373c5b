"""European options on the target-volatility index: closed form and Monte Carlo."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .market import MarketData, build_nu, covariance, discount, integrate_curve
from .strategy import (
    NORM_FLOOR,
    AllocationStrategy,
    DegenerateAllocationError,
    diffusion_norm,
    direction_for,
    min_drift_value,
    optimal_bang_bang,
    optimal_constrained,
)
from .simulator import PathSet, SimConfig, UnsupportedModeError, simulate_tvs

Z99 = 2.576


@dataclass(frozen=True)
class TvoSpec:
    I0: float = 1.0
    K: float = 1.0
    T: float = 2.0
    sigma_bar: float = 0.05
    payoff: str = "call"

    def __post_init__(self):
        if not (self.I0 > 0 and self.K > 0 and self.T > 0):
            raise ValueError("I0, K and T must be positive")
        if self.sigma_bar < 0:
            raise ValueError("target volatility must be >= 0")
        if self.payoff not in ("call", "put"):
            raise ValueError("payoff must be 'call' or 'put'")

    def intrinsic(self, level):
        level = np.asarray(level, dtype=float)
        if self.payoff == "call":
            return np.maximum(level - self.K, 0.0)
        return np.maximum(self.K - level, 0.0)

    def describe(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class McResult:
    price: float
    std_error: float
    paths: int

    @property
    def ci99(self) -> tuple[float, float]:
        return (self.price - Z99 * self.std_error, self.price + Z99 * self.std_error)

    def describe(self) -> dict:
        return {"price": self.price, "std_error": self.std_error, "ci99": list(self.ci99),
                "paths": self.paths}


def black_formula(F, K, T, sigma, D, payoff: str = "call"):
    """Discounted Black price; zero total vol collapses to discounted intrinsic.

    Accepts scalars or broadcastable arrays; scalars in, float out.
    """
    F, K, T, sigma, D = (np.asarray(v, dtype=float) for v in (F, K, T, sigma, D))
    if np.any(F <= 0) or np.any(K <= 0) or np.any(D <= 0) or np.any(T < 0) or np.any(sigma < 0):
        raise ValueError("black_formula needs F, K, D > 0 and T, sigma >= 0")
    if payoff not in ("call", "put"):
        raise ValueError(f"unknown payoff {payoff!r}")
    s = sigma * np.sqrt(T)
    safe = np.where(s > 0, s, 1.0)
    d1 = (np.log(F / K) + 0.5 * safe * safe) / safe
    call = np.where(s > 0, F * ndtr(d1) - K * ndtr(d1 - safe), np.maximum(F - K, 0.0))
    out = D * call if payoff == "call" else D * (call - (F - K))
    return float(out) if out.ndim == 0 else out


def _pieces(market: MarketData, t: float, T: float, grid=None) -> np.ndarray:
    pts = [np.array([t, T]), market.pillar_times()]
    if grid is not None:
        pts.append(np.asarray(grid, dtype=float))
    pts = np.unique(np.concatenate(pts))
    return pts[(pts >= t) & (pts <= T)]


def optimal_objective(market: MarketData, u: float, payoff: str, constraint="free") -> float:
    """Best achievable alpha.mu / |alpha.nu| at time u (min for calls, max for puts)."""
    mu = market.mu(u)
    sigma = covariance(market, u)
    direction = direction_for(payoff)
    if constraint == "free":
        v = -min_drift_value(mu, sigma)
        return -v if direction == "min" else v
    if constraint == "long-only" and direction == "min" and np.all(mu >= 0):
        i, _ = optimal_bang_bang(mu, sigma)
        return float(mu[i] / math.sqrt(sigma[i, i]))
    return optimal_constrained(mu, build_nu(market, u), constraint, direction).objective


def drift_adjustment_integral(market: MarketData, tvo: TvoSpec, strategy, t: float, T: float,
                              grid=None, constraint="free") -> float:
    """Exact integral of the local drift over [t, T].

    ``strategy`` is ``"auto"`` (optimal at every instant) or a deterministic
    AllocationStrategy refreshed on ``grid`` (defaults to the strategy's own grid).
    """
    if market.is_local_vol:
        raise UnsupportedModeError("closed-form pricing needs a Black-Scholes market")
    if grid is None:
        grid = getattr(strategy, "grid", None)
    pts = _pieces(market, t, T, grid)
    fix = None if grid is None else np.asarray(grid, dtype=float)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if strategy == "auto":
            obj = optimal_objective(market, a, tvo.payoff, constraint)
            total += tvo.sigma_bar * obj * (b - a)
            continue
        if not getattr(strategy, "deterministic", False):
            raise UnsupportedModeError("closed form needs a time-only strategy")
        if fix is None:
            k, t_k = 0, a
        else:
            k = int(np.clip(np.searchsorted(fix, a + 1e-12, side="right") - 1, 0, fix.size - 2))
            t_k = float(fix[k])
        alpha = np.asarray(strategy(k, t_k), dtype=float)
        norm = float(diffusion_norm(alpha, build_nu(market, a)))
        if norm < NORM_FLOOR:
            raise DegenerateAllocationError("allocation has zero diffusion norm")
        total += tvo.sigma_bar * float(alpha @ market.carry_integral(a, b)) / norm
    return total


def tvs_forward(market: MarketData, tvo: TvoSpec, strategy="auto", t: float = 0.0,
                T: float | None = None, level: float | None = None, grid=None,
                constraint="free") -> float:
    """I_t * exp(int_t^T (r - phi - local drift))."""
    T = tvo.T if T is None else T
    level = tvo.I0 if level is None else level
    growth = integrate_curve(market.rate, t, T) - integrate_curve(market.fee, t, T)
    adj = drift_adjustment_integral(market, tvo, strategy, t, T, grid, constraint)
    return level * math.exp(growth - adj)


def bs_closed_price(market: MarketData, tvo: TvoSpec, strategy="auto", grid=None,
                    constraint="free") -> float:
    F = tvs_forward(market, tvo, strategy, 0.0, tvo.T, tvo.I0, grid, constraint)
    return black_formula(F, tvo.K, tvo.T, tvo.sigma_bar, discount(market, 0.0, tvo.T), tvo.payoff)


def mc_price(paths: PathSet, tvo: TvoSpec, market: MarketData) -> McResult:
    """Discounted mean payoff with its standard error."""
    if paths.paths == 0:
        raise ValueError("empty path set")
    if abs(paths.maturity - tvo.T) > 1e-12:
        raise ValueError("paths do not end at the option maturity")
    D = discount(market, 0.0, tvo.T)
    pay = tvo.intrinsic(paths.terminal)
    se = D * float(np.std(pay, ddof=1)) / math.sqrt(pay.size) if pay.size > 1 else 0.0
    return McResult(D * float(np.mean(pay)), se, int(pay.size))


def mc_price_run(market: MarketData, strategy: AllocationStrategy, tvo: TvoSpec,
                 config: SimConfig) -> McResult:
    return mc_price(simulate_tvs(market, strategy, tvo, config), tvo, market)


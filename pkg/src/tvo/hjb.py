"""Crank-Nicolson solver for the reduced (Black-Scholes) HJB equation in log-index space.

With x = log I the equation reads

    V_t + (r - phi - sigma_bar * s - sigma_bar^2 / 2) V_x + sigma_bar^2 / 2 V_xx - zeta V = 0,

where ``s`` is the allocation objective chosen by the control. In monotone
mode ``s`` is the per-time optimum (min for calls, max for puts). In
pointwise mode it is picked node by node from the sign of V_x at the previous
time level, which is the explicit treatment of the nonlinearity.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .market import MarketData, integrate_curve
from .pricing import TvoSpec, optimal_objective
from .simulator import UnsupportedModeError


class HjbModeError(ValueError):
    pass


@dataclass(frozen=True)
class PdeGrid:
    n_space: int = 400
    n_time: int = 400
    width_sd: float = 6.0       # half-width in units of sigma_bar * sqrt(T)
    rannacher_pairs: int = 1

    def __post_init__(self):
        if self.n_space < 50 or self.n_time < 50:
            raise ValueError("grid counts must be >= 50")
        if self.width_sd <= 5.0:
            raise ValueError("domain half-width must exceed 5 standard deviations")


@dataclass
class HjbResult:
    value: float
    x: np.ndarray
    times: np.ndarray
    surface: np.ndarray           # (n_time + 1, n_space + 1), row j is V(times[j], .)
    diagnostics: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "I", "V"])
            levels = np.exp(self.x)
            for j, t in enumerate(self.times):
                for i, lvl in enumerate(levels):
                    w.writerow([repr(float(t)), repr(float(lvl)), repr(float(self.surface[j, i]))])


def _operator(a: float, b: np.ndarray, c: float, dx: float) -> sparse.csc_matrix:
    """Discrete a V_xx + b V_x - c V with zero-gamma (V_xx = V_x) rows at both ends."""
    N = b.size
    lower = a / dx ** 2 - b / (2 * dx)
    diag = np.full(N, -2 * a / dx ** 2 - c)
    upper = a / dx ** 2 + b / (2 * dx)
    A = sparse.lil_matrix((N, N))
    idx = np.arange(1, N - 1)
    A[idx, idx - 1] = lower[1:-1]
    A[idx, idx] = diag[1:-1]
    A[idx, idx + 1] = upper[1:-1]
    # boundary: (a + b) V_x - c V with second-order one-sided V_x
    g0, gN = (a + b[0]) / (2 * dx), (a + b[-1]) / (2 * dx)
    A[0, 0], A[0, 1], A[0, 2] = -3 * g0 - c, 4 * g0, -g0
    A[N - 1, N - 1], A[N - 1, N - 2], A[N - 1, N - 3] = 3 * gN - c, -4 * gN, gN
    return A.tocsc()


def solve_reduced_hjb(market: MarketData, tvo: TvoSpec, grid: PdeGrid = PdeGrid(),
                      mode: str = "monotone", constraint: str = "free",
                      payoff_fn: Callable[[np.ndarray], np.ndarray] | None = None,
                      fixed_objective: float | None = None) -> HjbResult:
    """Backward sweep from the payoff at T to V(0, I0).

    ``fixed_objective`` replaces the control by a constant objective value,
    which gives the value of one fixed (suboptimal) allocation.
    """
    if market.is_local_vol:
        raise UnsupportedModeError("the reduced HJB equation needs a Black-Scholes market")
    if mode not in ("monotone", "pointwise"):
        raise HjbModeError(f"unknown mode {mode!r}")
    sb, T = tvo.sigma_bar, tvo.T
    if sb <= 0:
        raise ValueError("the PDE needs a positive target volatility")
    x0 = math.log(tvo.I0)
    half = grid.width_sd * sb * math.sqrt(T)
    # centre the window on the risk-neutral drift so both tails get equal room
    shift = integrate_curve(market.rate, 0.0, T) - integrate_curve(market.fee, 0.0, T)
    x = np.linspace(x0 + shift - half, x0 + shift + half, grid.n_space + 1)
    dx = x[1] - x[0]
    # slide the grid so the payoff kink sits on a node
    kink = math.log(tvo.K)
    x = x + (kink - x[np.argmin(np.abs(x - kink))])
    levels = np.exp(x)
    V = payoff_fn(levels) if payoff_fn is not None else tvo.intrinsic(levels)
    V = np.asarray(V, dtype=float)
    diags: list[str] = []
    if mode == "monotone" and fixed_objective is None:
        d = np.diff(V)
        if not (np.all(d >= -1e-14) or np.all(d <= 1e-14)):
            raise HjbModeError("monotone mode needs a monotone payoff")
    increasing = bool(np.all(np.diff(V) >= -1e-14))
    a = 0.5 * sb * sb
    if a / dx ** 2 * (T / grid.n_time) > 50:
        diags.append("large diffusion number: time step coarse relative to space step")

    times = np.linspace(0.0, T, grid.n_time + 1)
    surface = np.empty((grid.n_time + 1, x.size))
    surface[-1] = V
    eye = sparse.identity(x.size, format="csc")
    cache: dict = {}

    pillars = market.pillar_times()

    def avg_objective(t_lo, t_hi, payoff):
        # exact time average of the piecewise-constant optimum over the step
        pts = np.unique(np.concatenate([[t_lo, t_hi], pillars[(pillars > t_lo) & (pillars < t_hi)]]))
        vals = [optimal_objective(market, u, payoff, constraint) for u in pts[:-1]]
        return float(np.dot(vals, np.diff(pts)) / (t_hi - t_lo))

    def step(V, t_lo, t_hi, theta):
        dt = t_hi - t_lo
        mid = 0.5 * (t_lo + t_hi)
        r = integrate_curve(market.rate, t_lo, t_hi) / dt
        phi = integrate_curve(market.fee, t_lo, t_hi) / dt
        zeta = r + integrate_curve(market.funding_spread, t_lo, t_hi) / dt
        if fixed_objective is not None:
            s = np.full(x.size, fixed_objective)
        elif mode == "monotone":
            s = np.full(x.size, avg_objective(t_lo, t_hi, "call" if increasing else "put"))
        else:
            vx = np.gradient(V, dx)
            s = np.where(vx >= 0, avg_objective(t_lo, t_hi, "call"), avg_objective(t_lo, t_hi, "put"))
        b = r - phi - sb * s - a
        if np.max(np.abs(b)) * dx / (2 * a) > 1:
            diags.append(f"cell Peclet number above 1 at t={mid:.4g}")
        key = (round(dt, 15), theta, a, r, zeta, b.tobytes())
        if key not in cache:
            A = _operator(a, b, zeta, dx)
            cache.clear()
            cache[key] = (splu((eye - theta * dt * A).tocsc()), (eye + (1 - theta) * dt * A).tocsc())
        lu, rhs = cache[key]
        return lu.solve(rhs @ V)

    for j in range(grid.n_time, 0, -1):
        t_hi, t_lo = times[j], times[j - 1]
        if grid.n_time - j < grid.rannacher_pairs:
            t_mid = 0.5 * (t_lo + t_hi)
            V = step(V, t_mid, t_hi, 1.0)
            V = step(V, t_lo, t_mid, 1.0)
        else:
            V = step(V, t_lo, t_hi, 0.5)
        surface[j - 1] = V
    value = float(CubicSpline(x, V)(x0))
    for msg in sorted(set(diags)):
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return HjbResult(value, x, times, surface, sorted(set(diags)))

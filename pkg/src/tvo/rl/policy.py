"""Observation states, neural allocation policies and episode rewards."""
from __future__ import annotations

import math

import numpy as np

from ..market import MarketData, build_nu, discount, integrate_curve
from ..pricing import TvoSpec, black_formula, drift_adjustment_integral
from ..strategy import (
    NORM_FLOOR,
    AllocationStrategy,
    DegenerateAllocationError,
    diffusion_norm,
    direction_for,
    optimal_free,
    optimal_free_batch,
)
from ..nn import Network


def normalize_state(spots, level, t: float, market: MarketData, tvo: TvoSpec) -> np.ndarray:
    """Rows [log(S_i / F_i(0, t))..., I / I0, t] for spots (P, n) and level (P,)."""
    spots = np.atleast_2d(np.asarray(spots, dtype=float))
    level = np.atleast_1d(np.asarray(level, dtype=float))
    fwd = market.forward(t)
    if np.any(spots <= 0) or np.any(fwd <= 0):
        raise ValueError("spots and forwards must be positive")
    P = spots.shape[0]
    return np.column_stack([np.log(spots / fwd), level / tvo.I0, np.full(P, float(t))])


def lemma_allocation(market: MarketData, t: float, spots, payoff: str) -> np.ndarray:
    """Closed-form free optimum at the current state, one row per path."""
    direction = direction_for(payoff)
    if market.is_local_vol:
        return optimal_free_batch(market.mu(t), build_nu(market, t, spots), direction)
    alpha = optimal_free(market.mu(t), build_nu(market, t), direction).alpha
    return np.broadcast_to(alpha, np.shape(spots))


class NeuralPolicy(AllocationStrategy):
    """Network-driven allocation.

    In ``baseline`` mode the network output is added to the closed-form free
    optimum evaluated at the current state. In stochastic mode Gaussian noise
    with standard deviation ``exp(log_std)`` is added to every component.
    """

    kind = "neural"
    deterministic = False

    def __init__(self, net: Network, market: MarketData, tvo: TvoSpec, mode: str = "free",
                 stochastic: bool = False, log_std: float = -1.0, rng=None, record: bool = False):
        if mode not in ("free", "baseline"):
            raise ValueError("mode must be 'free' or 'baseline'")
        if net.sizes[0] != market.n + 2 or net.sizes[-1] != market.n:
            raise ValueError(f"network must map {market.n + 2} inputs to {market.n} outputs")
        self.net = net
        self.market = market
        self.tvo = tvo
        self.mode = mode
        self.stochastic = stochastic
        self.log_std = log_std
        self.rng = rng
        self.record = record
        self.trace: list[dict] = []

    def mean_action(self, k, t, spots, level):
        state = normalize_state(spots, level, t, self.market, self.tvo)
        out, cache = self.net.forward(state)
        base = None
        if self.mode == "baseline":
            base = lemma_allocation(self.market, t, spots, self.tvo.payoff)
            out = out + base
        return state, out, cache, base

    def __call__(self, k, t, spots=None, level=None):
        if spots is None or level is None:
            raise ValueError("neural policy needs the current spots and index level")
        state, mean, cache, base = self.mean_action(k, t, spots, level)
        action = mean
        if self.stochastic:
            std = math.exp(self.log_std)
            action = mean + std * self.rng.standard_normal(mean.shape)
            nu = build_nu(self.market, t, spots if self.market.is_local_vol else None)
            bad = diffusion_norm(action, nu) < NORM_FLOOR
            if np.any(bad):
                action[bad] = mean[bad] + std * self.rng.standard_normal(mean[bad].shape)
                if np.any(diffusion_norm(action, nu) < NORM_FLOOR):
                    raise DegenerateAllocationError("sampled allocation is degenerate after resampling")
        if self.record:
            self.trace.append({"k": k, "t": t, "state": state, "mean": mean, "action": action,
                               "cache": cache, "base": base, "level": np.asarray(level, dtype=float)})
        return action

    def describe(self):
        return {"kind": self.kind, "mode": self.mode, "sizes": list(self.net.sizes),
                "activation": self.net.activation}


def terminal_rewards(index: np.ndarray, tvo: TvoSpec) -> np.ndarray:
    """(P, m) rewards: intrinsic value on the last transition, zero elsewhere."""
    P, m1 = index.shape
    r = np.zeros((P, m1 - 1))
    r[:, -1] = tvo.intrinsic(index[:, -1])
    return r


def residual_bs_values(market: MarketData, tvo: TvoSpec, grid, spots: np.ndarray,
                       index: np.ndarray) -> np.ndarray:
    """Residual-price proxy V_BS(T_k) per path and fixing, with V_BS(T_0) = 0.

    The forward carries the closed-form optimal drift from T_k to T. Under
    local vol the vols are frozen at (T_k, S_{T_k}) while carries follow
    their curves. At maturity the proxy equals the intrinsic value.
    """
    grid = np.asarray(grid, dtype=float)
    P, m1 = index.shape
    T = tvo.T
    sign = -1.0 if tvo.payoff == "call" else 1.0
    pillars = np.unique(np.concatenate([c.times for c in market.carry]))
    out = np.zeros((P, m1))
    out[:, -1] = tvo.intrinsic(index[:, -1])
    for k in range(1, m1 - 1):
        tk = grid[k]
        if not market.is_local_vol:
            adj = drift_adjustment_integral(market, tvo, "auto", tk, T)
        else:
            nu = build_nu(market, tk, spots[:, k])
            sigma = nu @ np.swapaxes(nu, -1, -2)
            pts = np.unique(np.concatenate([[tk, T], pillars[(pillars > tk) & (pillars < T)]]))
            adj = np.zeros(P)
            for a, b in zip(pts[:-1], pts[1:]):
                mu = np.broadcast_to(market.mu(a), (P, market.n))
                q = np.sum(np.linalg.solve(sigma, mu[..., None])[..., 0] * mu, axis=1)
                adj = adj + tvo.sigma_bar * sign * np.sqrt(np.maximum(q, 0.0)) * (b - a)
        growth = integrate_curve(market.rate, tk, T) - integrate_curve(market.fee, tk, T)
        fwd = index[:, k] * np.exp(growth - adj)
        out[:, k] = black_formula(fwd, tvo.K, T - tk, tvo.sigma_bar, discount(market, tk, T),
                                  tvo.payoff)
    return out


def shaped_rewards(values: np.ndarray, gamma: float) -> np.ndarray:
    """r_{k+1} = gamma^k (V_BS(T_{k+1}) - V_BS(T_k))."""
    m = values.shape[1] - 1
    return (gamma ** np.arange(m)) * np.diff(values, axis=1)


def reward(kind: str, market: MarketData, tvo: TvoSpec, grid, spots, index, gamma: float = 1.0):
    if kind == "terminal":
        return terminal_rewards(index, tvo)
    if kind == "shaped":
        return shaped_rewards(residual_bs_values(market, tvo, grid, spots, index), gamma)
    raise ValueError(f"unknown reward kind {kind!r}")

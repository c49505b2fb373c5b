"""Monte Carlo paths of the assets and the target-volatility index.

Between fixings the allocation is frozen; each fixing interval is split into
``substeps`` log-Euler steps driven by shared standard normal draws.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import rng as rngmod
from .market import MarketData, build_nu, integrate_curve
from .strategy import NORM_FLOOR, AllocationStrategy, DegenerateAllocationError

if TYPE_CHECKING:
    from .pricing import TvoSpec


class SimulationError(ArithmeticError):
    pass


class UnsupportedModeError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    paths: int
    grid: tuple
    substeps: int = 1
    seed: int = 0
    stream: str = "sim"
    block_size: int = 8192
    cap_omega: bool = False
    threads: int = 1

    def __post_init__(self):
        grid = tuple(float(x) for x in self.grid)
        object.__setattr__(self, "grid", grid)
        if self.paths <= 0 or self.substeps <= 0 or self.block_size <= 0:
            raise ValueError("path, substep and block counts must be positive")
        if len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("fixing grid must start at 0 and be strictly increasing")

    @property
    def maturity(self) -> float:
        return self.grid[-1]

    def describe(self) -> dict:
        return {
            "paths": self.paths, "grid": list(self.grid), "substeps": self.substeps,
            "seed": self.seed, "stream": self.stream, "block_size": self.block_size,
            "cap_omega": self.cap_omega,
        }


def fixing_grid(T: float, per_year: int = 4, market: MarketData | None = None) -> tuple:
    """Regular grid on [0, T], merged with the market's curve pillars when given."""
    steps = max(1, int(round(T * per_year)))
    pts = np.linspace(0.0, T, steps + 1)
    if market is not None and not market.is_local_vol:
        extra = market.pillar_times()
        pts = np.concatenate([pts, extra[(extra > 0) & (extra < T)]])
    pts = np.unique(np.round(pts, 12))
    return tuple(float(x) for x in pts)


@dataclass
class PathSet:
    grid: np.ndarray
    index: np.ndarray             # (P, m+1)
    omega: np.ndarray             # (P, m+1), scaling applied over each interval
    qv: np.ndarray                # (P,) quadratic variation of log I over substeps
    spots: np.ndarray | None = None   # (P, m+1, n); absent for projection paths
    seed: int = 0
    stream: str = ""
    substeps: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.index.shape[0]

    @property
    def maturity(self) -> float:
        return float(self.grid[-1])

    @property
    def terminal(self) -> np.ndarray:
        return self.index[:, -1]

    def to_csv(self, path) -> None:
        n = 0 if self.spots is None else self.spots.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "fixing", "t", *[f"S_{i + 1}" for i in range(n)], "I", "omega"])
            for p in range(self.paths):
                for k, t in enumerate(self.grid):
                    s = [] if self.spots is None else [repr(float(x)) for x in self.spots[p, k]]
                    w.writerow([p, k, repr(float(t)), *s, repr(float(self.index[p, k])),
                                repr(float(self.omega[p, k]))])


def omega(alpha, nu, sigma_bar: float, cap: bool = False):
    """Volatility-targeting scale sigma_bar / |alpha.nu|, optionally capped at 1."""
    u = np.einsum("...i,...ij->...j", np.asarray(alpha, dtype=float), np.asarray(nu, dtype=float))
    norm = np.sqrt(np.sum(u * u, axis=-1))
    if np.any(norm < NORM_FLOOR):
        raise DegenerateAllocationError("allocation has zero diffusion norm")
    w = sigma_bar / norm
    if cap:
        w = np.minimum(1.0, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class _Substep:
    k: int
    t: float
    dt: float
    int_r_phi: float      # int (r - phi)
    int_r: float
    int_mu: np.ndarray    # int mu_i


def _schedule(market: MarketData, grid, substeps: int) -> list[_Substep]:
    out = []
    for k in range(len(grid) - 1):
        a, b = grid[k], grid[k + 1]
        edges = np.linspace(a, b, substeps + 1)
        for j in range(substeps):
            t0, t1 = float(edges[j]), float(edges[j + 1])
            ir = integrate_curve(market.rate, t0, t1)
            out.append(_Substep(k, t0, t1 - t0, ir - integrate_curve(market.fee, t0, t1), ir,
                                market.carry_integral(t0, t1)))
    return out


def _as_rows(alpha, P: int, n: int) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if a.shape == (n,):
        return np.broadcast_to(a, (P, n))
    if a.shape != (P, n):
        raise ValueError(f"strategy returned shape {a.shape}, expected ({n},) or ({P}, {n})")
    return a


def run_block(market: MarketData, strategy: AllocationStrategy, tvo: "TvoSpec", grid,
              schedule: list[_Substep], normals, P: int, cap: bool = False,
              tape: list | None = None, block: int = 0):
    """Simulate P joint paths; ``normals(j)`` returns the (P, n) draws of substep j.

    When ``tape`` is a list, per-substep inputs needed for pathwise
    differentiation are appended to it.
    """
    n = market.n
    L = market.correlation.cholesky
    m = len(grid) - 1
    log_s = np.broadcast_to(np.log(market.spot), (P, n)).copy()
    log_i = np.full(P, math.log(tvo.I0))
    spots = np.empty((P, m + 1, n))
    index = np.empty((P, m + 1))
    om = np.empty((P, m + 1))
    qv = np.zeros(P)
    spots[:, 0] = np.exp(log_s)
    index[:, 0] = tvo.I0
    sb = tvo.sigma_bar
    alpha = None
    for j, st in enumerate(schedule):
        if j == 0 or schedule[j - 1].k != st.k:
            alpha = _as_rows(strategy(st.k, st.t, spots[:, st.k], index[:, st.k]), P, n)
            if tape is not None:
                tape.append(("fix", st.k, alpha))
        z = normals(j)
        vols = market.vols(st.t, np.exp(log_s)) if market.is_local_vol else \
            np.broadcast_to(market.vols(st.t), (P, n))
        u = (alpha * vols) @ L
        norm = np.sqrt(np.sum(u * u, axis=1))
        bad = norm < NORM_FLOOR
        if np.any(bad):
            p = int(np.argmax(bad))
            raise DegenerateAllocationError(
                f"degenerate allocation at path {block}:{p}, fixing {st.k}, t={st.t:.6g}")
        w = sb / norm
        if cap:
            w = np.minimum(1.0, w)
        sq = math.sqrt(st.dt)
        lz = z @ L.T
        log_s += (st.int_r - st.int_mu - 0.5 * vols * vols * st.dt) + vols * lz * sq
        vol_i = w * norm
        d_log_i = (st.int_r_phi - w * (alpha @ st.int_mu) - 0.5 * vol_i * vol_i * st.dt
                   + w * np.sum(u * z, axis=1) * sq)
        if not np.all(np.isfinite(d_log_i)):
            raise SimulationError(f"non-finite index increment at fixing {st.k}, t={st.t:.6g}")
        log_i += d_log_i
        qv += d_log_i * d_log_i
        if tape is not None:
            tape.append(("sub", st, vols, z))
        last = j + 1 == len(schedule) or schedule[j + 1].k != st.k
        if last:
            spots[:, st.k + 1] = np.exp(log_s)
            index[:, st.k + 1] = np.exp(log_i)
            om[:, st.k] = w
    om[:, m] = om[:, m - 1]
    return spots, index, om, qv


def _blocks(paths: int, size: int):
    starts = range(0, paths, size)
    return [(b, s, min(size, paths - s)) for b, s in enumerate(starts)]


def _merge(parts):
    return [np.concatenate(x, axis=0) for x in zip(*parts)]


def simulate_tvs(market: MarketData, strategy: AllocationStrategy, tvo: "TvoSpec",
                 config: SimConfig, normals: np.ndarray | None = None) -> PathSet:
    """Joint (S, I) paths. ``normals`` (P, steps, n) overrides the seeded draws."""
    grid = config.grid
    if abs(grid[-1] - tvo.T) > 1e-12:
        raise ValueError("fixing grid must end at the option maturity")
    schedule = _schedule(market, grid, config.substeps)
    n = market.n
    if normals is not None:
        normals = np.asarray(normals, dtype=float)
        if normals.shape != (config.paths, len(schedule), n):
            raise ValueError(f"normals must have shape {(config.paths, len(schedule), n)}")
        parts = [run_block(market, strategy, tvo, grid, schedule, lambda j: normals[:, j],
                           config.paths, config.cap_omega)]
    else:
        def work(item):
            b, _, size = item
            gen = rngmod.generator(config.seed, config.stream, b)
            return run_block(market, strategy, tvo, grid, schedule,
                             lambda j: gen.standard_normal((size, n)), size,
                             config.cap_omega, block=b)

        items = _blocks(config.paths, config.block_size)
        if config.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(config.threads) as ex:
                parts = list(ex.map(work, items))
        else:
            parts = [work(it) for it in items]
    spots, index, om, qv = _merge(parts)
    return PathSet(np.array(grid), index, om, qv, spots, config.seed, config.stream,
                   config.substeps, {"mode": "lv" if market.is_local_vol else "bs"})


def simulate_projection(market: MarketData, strategy: AllocationStrategy, tvo: "TvoSpec",
                        config: SimConfig) -> PathSet:
    """1-D index paths with diffusion sigma_bar and drift r - phi - local drift."""
    if market.is_local_vol:
        raise UnsupportedModeError("Markovian projection needs deterministic (BS) vols")
    grid = config.grid
    schedule = _schedule(market, grid, config.substeps)
    sb = tvo.sigma_bar
    nus = [build_nu(market, st.t) for st in schedule]
    m = len(grid) - 1

    def work(item):
        b, _, P = item
        gen = rngmod.generator(config.seed, config.stream, b)
        log_i = np.full(P, math.log(tvo.I0))
        index = np.empty((P, m + 1))
        om = np.empty((P, m + 1))
        qv = np.zeros(P)
        index[:, 0] = tvo.I0
        alpha = None
        for j, st in enumerate(schedule):
            if j == 0 or schedule[j - 1].k != st.k:
                alpha = _as_rows(strategy(st.k, st.t, None, index[:, st.k]), P, market.n)
            norm = np.sqrt(np.sum((alpha @ nus[j]) ** 2, axis=1))
            if np.any(norm < NORM_FLOOR):
                raise DegenerateAllocationError(f"degenerate allocation at fixing {st.k}")
            drift_adj = sb * (alpha @ st.int_mu) / norm
            z = gen.standard_normal(P)
            d = st.int_r_phi - drift_adj - 0.5 * sb * sb * st.dt + sb * math.sqrt(st.dt) * z
            log_i += d
            qv += d * d
            if j + 1 == len(schedule) or schedule[j + 1].k != st.k:
                index[:, st.k + 1] = np.exp(log_i)
                om[:, st.k] = sb / norm
        om[:, m] = om[:, m - 1]
        return index, om, qv

    items = _blocks(config.paths, config.block_size)
    if config.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            parts = list(ex.map(work, items))
    else:
        parts = [work(it) for it in items]
    index, om, qv = _merge(parts)
    return PathSet(np.array(grid), index, om, qv, None, config.seed, config.stream,
                   config.substeps, {"mode": "projection"})


def realized_vol(paths: PathSet) -> np.ndarray:
    """Per-path sqrt(QV(log I) / T) from substep increments."""
    if paths.grid.size < 2:
        raise ValueError("need at least two fixings")
    return np.sqrt(paths.qv / paths.maturity)

"""Deterministic market inputs: curves, volatility models, correlation.

Curves are piecewise constant on ``[t_i, t_{i+1})`` with flat extrapolation,
so every time integral is exact. Local volatility surfaces are keyed by
log-moneyness ``log(S / F(0, t))``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

# pillar lookups snap times this close to a pillar onto it
_TIME_EPS = 1e-12


class MarketDataError(ValueError):
    """Invalid market data; the message carries a field path."""


class NonPositiveDefiniteError(MarketDataError):
    pass


@dataclass(frozen=True)
class TermStructure:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if times.size == 0:
            raise MarketDataError("term structure needs at least one pillar")
        if times.shape != values.shape:
            raise MarketDataError("pillar times and values differ in length")
        if np.any(times < 0):
            raise MarketDataError("pillar times must be >= 0")
        if np.any(np.diff(times) <= 0):
            raise MarketDataError("pillar times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise MarketDataError("pillar values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def flat(cls, value: float) -> "TermStructure":
        return cls(np.array([0.0]), np.array([float(value)]))

    @classmethod
    def from_pillars(cls, pillars: Sequence[Sequence[float]]) -> "TermStructure":
        arr = np.asarray(pillars, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise MarketDataError("pillars must be a list of [time, value] pairs")
        return cls(arr[:, 0], arr[:, 1])

    def pillars(self) -> list[list[float]]:
        return [[float(t), float(v)] for t, v in zip(self.times, self.values)]

    def index(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float) + _TIME_EPS, side="right") - 1
        return np.clip(idx, 0, self.times.size - 1)

    def __call__(self, t):
        """Value in force at time ``t`` (left-continuous pillars, flat outside)."""
        out = self.values[self.index(t)]
        return float(out) if np.ndim(out) == 0 else out

    def integral(self, t1: float, t2: float) -> float:
        return integrate_curve(self, t1, t2)


def integrate_curve(curve: TermStructure, t1: float, t2: float) -> float:
    """Exact integral of a piecewise-constant curve over ``[t1, t2]``."""
    if t2 < t1:
        raise MarketDataError(f"integration bounds reversed: t1={t1} > t2={t2}")
    if t1 < 0:
        raise MarketDataError("integration bounds must be >= 0")
    if t2 == t1:
        return 0.0
    # piece i spans [times[i], times[i+1]); the first piece extends back to 0
    edges = np.concatenate([[0.0], curve.times[1:], [np.inf]])
    lo = np.clip(edges[:-1], t1, t2)
    hi = np.clip(edges[1:], t1, t2)
    total = np.dot(curve.values, hi - lo)
    return float(total)


@dataclass(frozen=True)
class CorrelationMatrix:
    entries: np.ndarray
    cholesky: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rho = np.array(self.entries, dtype=float)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise MarketDataError("correlation: must be a square matrix")
        if not np.all(np.isfinite(rho)):
            raise MarketDataError("correlation: entries must be finite")
        if np.any(np.abs(rho) > 1.0):
            raise MarketDataError("correlation: entries must lie in [-1, 1]")
        if not np.array_equal(rho, rho.T):
            raise MarketDataError("correlation: matrix must be symmetric")
        if not np.all(np.diag(rho) == 1.0):
            raise MarketDataError("correlation: diagonal must be exactly 1")
        try:
            chol = np.linalg.cholesky(rho)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveDefiniteError("correlation: matrix is not positive definite") from exc
        rho.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "entries", rho)
        object.__setattr__(self, "cholesky", chol)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class LocalVolSurface:
    """Vol grid over (time, log-moneyness): bilinear inside, flat outside."""

    times: np.ndarray
    log_moneyness: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        k = np.asarray(self.log_moneyness, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float)
        if times.size == 0 or k.size == 0:
            raise MarketDataError("times: surface axes must be nonempty")
        if np.any(np.diff(times) <= 0):
            raise MarketDataError("times: surface axis must be strictly increasing")
        if np.any(np.diff(k) <= 0):
            raise MarketDataError("log_moneyness: surface axis must be strictly increasing")
        if vals.shape != (times.size, k.size):
            raise MarketDataError(
                f"values: expected shape {(times.size, k.size)}, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise MarketDataError("values: local vols must be finite and > 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "log_moneyness", k)
        object.__setattr__(self, "values", vals)

    @classmethod
    def flat(cls, vol: float) -> "LocalVolSurface":
        return cls(np.array([0.0]), np.array([0.0]), np.array([[float(vol)]]))

    @staticmethod
    def _bracket(axis: np.ndarray, x):
        x = np.clip(x, axis[0], axis[-1])
        if axis.size == 1:
            zero = np.zeros(np.shape(x), dtype=int)
            return zero, zero, np.zeros(np.shape(x))
        hi = np.clip(np.searchsorted(axis, x, side="right"), 1, axis.size - 1)
        lo = hi - 1
        w = (x - axis[lo]) / (axis[hi] - axis[lo])
        return lo, hi, w

    def __call__(self, t: float, log_moneyness):
        i0, i1, wt = self._bracket(self.times, float(t))
        j0, j1, wk = self._bracket(self.log_moneyness, np.asarray(log_moneyness, dtype=float))
        # a + w * (b - a) keeps a constant surface exactly constant
        v = self.values
        lo = v[i0, j0] + wk * (v[i0, j1] - v[i0, j0])
        hi = v[i1, j0] + wk * (v[i1, j1] - v[i1, j0])
        return lo + wt * (hi - lo)


@dataclass(frozen=True)
class MarketData:
    spot: np.ndarray
    rate: TermStructure
    fee: TermStructure
    funding_spread: TermStructure
    carry: tuple[TermStructure, ...]
    correlation: CorrelationMatrix
    bs_vols: tuple[TermStructure, ...] | None = None
    lv_surfaces: tuple[LocalVolSurface, ...] | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        spot = np.asarray(self.spot, dtype=float).reshape(-1)
        n = spot.size
        if n == 0:
            raise MarketDataError("assets: at least one asset is required")
        if np.any(~np.isfinite(spot)) or np.any(spot <= 0):
            raise MarketDataError("assets: spots must be positive")
        if len(self.carry) != n:
            raise MarketDataError("assets: carry curves do not match asset count")
        if self.correlation.n != n:
            raise MarketDataError("correlation: dimension does not match asset count")
        if (self.bs_vols is None) == (self.lv_surfaces is None):
            raise MarketDataError("assets: exactly one volatility model is required")
        vols = self.bs_vols if self.bs_vols is not None else self.lv_surfaces
        if len(vols) != n:
            raise MarketDataError("assets: volatility entries do not match asset count")
        if self.bs_vols is not None:
            for i, curve in enumerate(self.bs_vols):
                if np.any(curve.values < 0):
                    raise MarketDataError(f"assets[{i}].vol.pillars: vols must be >= 0")
        names = tuple(self.names) or tuple(f"asset{i + 1}" for i in range(n))
        if len(names) != n:
            raise MarketDataError("assets: names do not match asset count")
        spot.setflags(write=False)
        object.__setattr__(self, "spot", spot)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "carry", tuple(self.carry))

    @property
    def n(self) -> int:
        return self.spot.size

    @property
    def is_local_vol(self) -> bool:
        return self.lv_surfaces is not None

    def mu(self, t: float) -> np.ndarray:
        return np.array([c(t) for c in self.carry])

    def carry_integral(self, t1: float, t2: float) -> np.ndarray:
        return np.array([integrate_curve(c, t1, t2) for c in self.carry])

    def forward(self, t: float) -> np.ndarray:
        """Asset forwards F_i(0, t) = S_0 exp(int_0^t (r - mu_i))."""
        drift = integrate_curve(self.rate, 0.0, t) - self.carry_integral(0.0, t)
        return self.spot * np.exp(drift)

    def vols(self, t: float, spots=None) -> np.ndarray:
        """Instantaneous vols, shape (n,) in BS mode or (..., n) given spots in LV mode."""
        if self.bs_vols is not None:
            sig = np.array([c(t) for c in self.bs_vols])
            if spots is None:
                return sig
            return np.broadcast_to(sig, np.shape(spots))
        if spots is None:
            raise MarketDataError("local-vol market: spots are required to evaluate vols")
        spots = np.asarray(spots, dtype=float)
        k = np.log(spots / self.forward(t))
        out = np.empty(k.shape)
        for i, surf in enumerate(self.lv_surfaces):
            out[..., i] = surf(t, k[..., i])
        return out

    def pillar_times(self) -> np.ndarray:
        """Every curve breakpoint (BS mode); used to align fixing grids."""
        curves = [self.rate, self.fee, self.funding_spread, *self.carry]
        if self.bs_vols is not None:
            curves.extend(self.bs_vols)
        return np.unique(np.concatenate([c.times for c in curves]))

    def digest(self) -> str:
        payload = json.dumps(market_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def build_nu(market: MarketData, t: float, spots=None) -> np.ndarray:
    """Diffusion matrix diag(sigma) @ L; batched over leading axes of ``spots``."""
    if t < 0:
        raise MarketDataError("t must be >= 0")
    sig = market.vols(t, spots)
    return sig[..., :, None] * market.correlation.cholesky


def covariance(market: MarketData, t: float, spots=None) -> np.ndarray:
    nu = build_nu(market, t, spots)
    return nu @ np.swapaxes(nu, -1, -2)


def discount(market: MarketData, t1: float, t2: float) -> float:
    """exp(-int (r + funding spread)) over [t1, t2]."""
    rate = integrate_curve(market.rate, t1, t2) + integrate_curve(market.funding_spread, t1, t2)
    return math.exp(-rate)


# -- file format -------------------------------------------------------------

def _pillars(doc, path: str) -> TermStructure:
    if not isinstance(doc, list) or not doc:
        raise MarketDataError(f"{path}: expected a nonempty list of [time, value] pairs")
    for j, p in enumerate(doc):
        if not (isinstance(p, list) and len(p) == 2 and all(isinstance(x, (int, float)) for x in p)):
            raise MarketDataError(f"{path}[{j}]: expected [time, value]")
    try:
        return TermStructure.from_pillars(doc)
    except MarketDataError as exc:
        raise MarketDataError(f"{path}: {exc}") from None


def market_from_dict(doc: dict) -> MarketData:
    if not isinstance(doc, dict):
        raise MarketDataError("<root>: expected a JSON object")
    for key in ("assets", "rate_pillars", "correlation"):
        if key not in doc:
            raise MarketDataError(f"{key}: missing required key")
    assets = doc["assets"]
    if not isinstance(assets, list) or not assets:
        raise MarketDataError("assets: expected a nonempty list")
    names, spots, carry, bs, lv = [], [], [], [], []
    for i, a in enumerate(assets):
        p = f"assets[{i}]"
        if not isinstance(a, dict):
            raise MarketDataError(f"{p}: expected an object")
        for key in ("spot", "carry_pillars", "vol"):
            if key not in a:
                raise MarketDataError(f"{p}.{key}: missing required key")
        name = str(a.get("name", f"asset{i + 1}"))
        names.append(name)
        if not isinstance(a["spot"], (int, float)) or a["spot"] <= 0:
            raise MarketDataError(f"{p}.spot: must be a positive number")
        spots.append(float(a["spot"]))
        carry.append(_pillars(a["carry_pillars"], f"{p}.carry_pillars"))
        vol = a["vol"]
        kind = vol.get("type") if isinstance(vol, dict) else None
        if kind == "bs":
            curve = _pillars(vol.get("pillars"), f"{p}.vol.pillars")
            if np.any(curve.values < 0):
                raise MarketDataError(f"{p}.vol.pillars: vols must be >= 0")
            bs.append(curve)
        elif kind == "lv":
            for axis in ("times", "log_moneyness", "values"):
                if axis not in vol:
                    raise MarketDataError(f"{p} ({name}).vol.{axis}: missing required key")
            try:
                lv.append(LocalVolSurface(vol["times"], vol["log_moneyness"], vol["values"]))
            except (MarketDataError, ValueError) as exc:
                raise MarketDataError(f"{p} ({name}).vol.{exc}") from None
        else:
            raise MarketDataError(f"{p}.vol.type: expected 'bs' or 'lv'")
    if bs and lv:
        raise MarketDataError("assets: mixing 'bs' and 'lv' vol types is not supported")
    try:
        rho = CorrelationMatrix(np.asarray(doc["correlation"], dtype=float))
    except MarketDataError:
        raise
    except (TypeError, ValueError) as exc:
        raise MarketDataError(f"correlation: {exc}") from None
    zero = [[0.0, 0.0]]
    return MarketData(
        spot=np.array(spots),
        rate=_pillars(doc["rate_pillars"], "rate_pillars"),
        fee=_pillars(doc.get("fee_pillars", zero), "fee_pillars"),
        funding_spread=_pillars(doc.get("funding_spread_pillars", zero), "funding_spread_pillars"),
        carry=tuple(carry),
        correlation=rho,
        bs_vols=tuple(bs) if bs else None,
        lv_surfaces=tuple(lv) if lv else None,
        names=tuple(names),
    )


def market_to_dict(market: MarketData) -> dict:
    assets = []
    for i in range(market.n):
        if market.bs_vols is not None:
            vol = {"type": "bs", "pillars": market.bs_vols[i].pillars()}
        else:
            s = market.lv_surfaces[i]
            vol = {
                "type": "lv",
                "times": s.times.tolist(),
                "log_moneyness": s.log_moneyness.tolist(),
                "values": s.values.tolist(),
            }
        assets.append({
            "name": market.names[i],
            "spot": float(market.spot[i]),
            "carry_pillars": market.carry[i].pillars(),
            "vol": vol,
        })
    return {
        "assets": assets,
        "rate_pillars": market.rate.pillars(),
        "fee_pillars": market.fee.pillars(),
        "funding_spread_pillars": market.funding_spread.pillars(),
        "correlation": market.correlation.entries.tolist(),
    }


def load_market(path) -> MarketData:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MarketDataError(f"<root>: invalid JSON ({exc})") from None
    return market_from_dict(doc)


def save_market(market: MarketData, path) -> None:
    Path(path).write_text(json.dumps(market_to_dict(market), indent=2), encoding="utf-8")


def bundled_market(name: str) -> MarketData:
    """Load one of the synthetic markets shipped in ``tvo/data``."""
    ref = resources.files("tvo") / "data" / f"{name}.json"
    return market_from_dict(json.loads(ref.read_text(encoding="utf-8")))

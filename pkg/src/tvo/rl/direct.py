"""Direct policy search: gradient ascent on the discounted mean payoff.

The loss is differentiated pathwise through the simulated index. Asset paths
do not depend on the allocation, so only the log-index increments carry
gradient, and the index feeds back into later actions through the I / I0
component of the observation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import rng as rngmod
from ..market import MarketData, discount
from ..nn import Network, Optimizer, TrainingError, init
from ..pricing import TvoSpec
from ..simulator import _schedule, fixing_grid, run_block
from .curve import LearningCurve
from .policy import NeuralPolicy


@dataclass(frozen=True)
class DirectPolicyConfig:
    hidden: tuple = (20, 15, 5)
    activation: str = "tanh"
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_episodes: int = 1024
    restarts: int = 4
    action_mode: str = "free"
    fixings_per_year: int = 4
    substeps: int = 1
    select_window: int = 100     # epochs averaged when ranking restarts

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min(self.epochs, self.batch_episodes, self.restarts, self.substeps,
               self.fixings_per_year, self.select_window) <= 0:
            raise ValueError("direct-policy counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.action_mode not in ("free", "baseline"):
            raise ValueError("action mode must be 'free' or 'baseline'")

    def describe(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class DirectResult:
    policy: NeuralPolicy
    curve: LearningCurve
    restart_scores: list
    best_restart: int
    grid: tuple


def _alpha_gradient(alpha, vols, z, L, st, sigma_bar):
    """d(log-index increment)/d(alpha) for one substep, per path."""
    u = (alpha * vols) @ L
    N = np.sqrt(np.sum(u * u, axis=1))[:, None]
    dN = vols * (u @ L.T) / N
    am = (alpha @ st.int_mu)[:, None]
    uz = np.sum(u * z, axis=1)[:, None]
    drift = -sigma_bar * (st.int_mu / N - am * dN / N ** 2)
    noise = sigma_bar * math.sqrt(st.dt) * (vols * (z @ L.T) / N - uz * dN / N ** 2)
    return drift + noise


def direct_loss_and_grad(policy: NeuralPolicy, grid, schedule, normals: np.ndarray):
    """Discounted mean payoff over frozen draws (P, steps, n) and its parameter gradient."""
    market, tvo, net = policy.market, policy.tvo, policy.net
    P = normals.shape[0]
    policy.trace, policy.record = [], True
    tape: list = []
    try:
        _, index, _, _ = run_block(market, policy, tvo, grid, schedule, lambda j: normals[:, j],
                                   P, False, tape)
    finally:
        policy.record = False
    D = discount(market, 0.0, tvo.T)
    IT = index[:, -1]
    loss = D * float(np.mean(tvo.intrinsic(IT)))
    # subgradient 0 exactly at the kink
    slope = (IT > tvo.K).astype(float) if tvo.payoff == "call" else -(IT < tvo.K).astype(float)
    adj = D * slope * IT / P                       # dL / d log I, propagated backwards
    subs: dict[int, list] = {}
    for item in tape:
        if item[0] == "sub":
            subs.setdefault(item[1].k, []).append(item[1:])
    L = market.correlation.cholesky
    grad = np.zeros(net.n_params)
    n = market.n
    for rec in reversed(policy.trace):
        k = rec["k"]
        alpha = rec["action"]
        g_alpha = sum(_alpha_gradient(alpha, vols, z, L, st, tvo.sigma_bar)
                      for st, vols, z in subs[k])
        pgrad, xgrad = net.backprop(rec["cache"], adj[:, None] * g_alpha)
        grad += pgrad
        adj = adj + xgrad[:, n] * index[:, k] / tvo.I0
    policy.trace = []
    return loss, grad


def _sizes(market: MarketData, config: DirectPolicyConfig) -> tuple:
    return (market.n + 2, *config.hidden, market.n)


def train_direct(market: MarketData, tvo: TvoSpec, config: DirectPolicyConfig = DirectPolicyConfig(),
                 seed: int = 0, log=None) -> DirectResult:
    """Best-of-restarts deterministic policy and the per-epoch loss curve of that restart."""
    grid = fixing_grid(tvo.T, config.fixings_per_year, market)
    schedule = _schedule(market, grid, config.substeps)
    steps = len(schedule)
    best = None
    scores = []
    for r in range(config.restarts):
        net = init(_sizes(market, config), config.activation, seed, f"direct-init-{r}")
        policy = NeuralPolicy(net, market, tvo, config.action_mode)
        opt = Optimizer(config.optimizer, net.n_params, config.learning_rate)
        curve = LearningCurve("epoch")
        for epoch in range(config.epochs):
            gen = rngmod.generator(seed, "direct-train", r, epoch)
            normals = gen.standard_normal((config.batch_episodes, steps, market.n))
            loss, grad = direct_loss_and_grad(policy, grid, schedule, normals)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at restart {r}, epoch {epoch}")
            curve.append(epoch, loss)
            net.params = opt.step(net.params, grad, ascend=True)
            if log is not None and (epoch + 1) % 100 == 0:
                log(f"restart {r} epoch {epoch + 1}: loss {curve.tail_mean(100):.6g}")
        score = curve.tail_mean(config.select_window)
        scores.append(score)
        if best is None or score > best[0]:
            best = (score, r, policy, curve)
    _, r, policy, curve = best
    return DirectResult(policy, curve, scores, r, grid)

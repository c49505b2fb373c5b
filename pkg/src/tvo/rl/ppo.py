"""Clipped-surrogate PPO with a Gaussian allocation policy and GAE advantages.

The policy's log standard deviation is not learned; it follows a linear
schedule across updates, so the entropy bonus has no gradient.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import rng as rngmod
from ..market import MarketData
from ..nn import Network, Optimizer, TrainingError, init
from ..pricing import TvoSpec
from ..simulator import _schedule, fixing_grid, run_block
from .curve import LearningCurve
from .policy import NeuralPolicy, reward

LOG_2PI = math.log(2.0 * math.pi)
CI98 = 2.326


@dataclass(frozen=True)
class PpoConfig:
    hidden: tuple = (8, 8, 8, 8, 8)
    activation: str = "tanh"
    gamma: float = 1.0
    lam: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.7
    entropy_coef: float = 0.0
    learning_rate: float = 3e-4
    minibatch_episodes: int = 2048
    n_minibatches: int = 4
    epochs_per_update: int = 10
    updates: int = 146             # about 3e5 episodes at 2048 per update
    log_std_start: float = -1.0
    log_std_end: float = -3.0
    reward_kind: str = "terminal"
    action_mode: str = "free"
    fixings_per_year: int = 4
    substeps: int = 1
    curve_window: int = 100_000   # episodes in the moving average
    head_scale: float = 0.01      # policy output layer init scale; small means start unbiased

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not (0 <= self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if self.clip <= 0 or self.learning_rate <= 0:
            raise ValueError("clip and learning rate must be positive")
        if min(self.minibatch_episodes, self.n_minibatches, self.epochs_per_update, self.updates,
               self.fixings_per_year, self.substeps, self.curve_window) <= 0:
            raise ValueError("PPO counts must be positive")
        if self.reward_kind not in ("terminal", "shaped"):
            raise ValueError("reward kind must be 'terminal' or 'shaped'")
        if self.action_mode not in ("free", "baseline"):
            raise ValueError("action mode must be 'free' or 'baseline'")

    def log_std(self, update: int) -> float:
        if self.updates == 1:
            return self.log_std_start
        f = update / (self.updates - 1)
        return self.log_std_start + f * (self.log_std_end - self.log_std_start)

    def describe(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class PpoResult:
    policy: NeuralPolicy
    value_net: Network
    curve: LearningCurve
    grid: tuple


@dataclass
class Batch:
    """Flattened transitions of a set of episodes (episode-major order)."""

    states: np.ndarray        # (B, n+2)
    actions: np.ndarray       # (B, n)
    base: np.ndarray | None   # (B, n) closed-form part of the mean, baseline mode only
    logp: np.ndarray          # (B,) log-density under the collecting policy
    advantages: np.ndarray    # (B,)
    returns: np.ndarray       # (B,) value targets
    episode_returns: np.ndarray   # (P,) undiscounted reward sums


def gaussian_logp(actions, mean, log_std: float) -> np.ndarray:
    z = (actions - mean) * math.exp(-log_std)
    n = actions.shape[1]
    return -0.5 * np.sum(z * z, axis=1) - n * (log_std + 0.5 * LOG_2PI)


def gaussian_entropy(n: int, log_std: float) -> float:
    return n * (0.5 + 0.5 * LOG_2PI + log_std)


def gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Advantages for (P, m) rewards and (P, m) values; the terminal value is 0."""
    P, m = rewards.shape
    adv = np.zeros((P, m))
    nxt = np.zeros(P)
    run = np.zeros(P)
    for k in range(m - 1, -1, -1):
        delta = rewards[:, k] + gamma * nxt - values[:, k]
        run = delta + gamma * lam * run
        adv[:, k] = run
        nxt = values[:, k]
    return adv


def ratio(logp_new, logp_old) -> np.ndarray:
    """Probability ratio evaluated in log space."""
    return np.exp(np.minimum(logp_new - logp_old, 50.0))


def clipped_surrogate(rho, adv, clip: float):
    """Per-sample min(rho A, clip(rho) A) and the mask where the unclipped term is active."""
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - clip, 1.0 + clip) * adv
    active = unclipped <= clipped
    return np.where(active, unclipped, clipped), active


def collect(policy: NeuralPolicy, value_net: Network, grid, schedule, config: PpoConfig,
            gen: np.random.Generator, P: int) -> Batch:
    market, tvo = policy.market, policy.tvo
    policy.rng, policy.stochastic, policy.record, policy.trace = gen, True, True, []
    try:
        spots, index, _, _ = run_block(market, policy, tvo, grid, schedule,
                                       lambda j: gen.standard_normal((P, market.n)), P)
    finally:
        policy.stochastic, policy.record = False, False
    trace, policy.trace = policy.trace, []
    m = len(grid) - 1
    rewards = reward(config.reward_kind, market, tvo, grid, spots, index, config.gamma)
    states = np.stack([rec["state"] for rec in trace], axis=1)          # (P, m, n+2)
    actions = np.stack([rec["action"] for rec in trace], axis=1)
    means = np.stack([rec["mean"] for rec in trace], axis=1)
    base = None
    if policy.mode == "baseline":
        base = np.stack([np.broadcast_to(rec["base"], (P, market.n)) for rec in trace], axis=1)
    values = value_net(states.reshape(P * m, -1))[:, 0].reshape(P, m)
    adv = gae(rewards, values, config.gamma, config.lam)
    logp = gaussian_logp(actions.reshape(P * m, -1), means.reshape(P * m, -1), policy.log_std)
    return Batch(states.reshape(P * m, -1), actions.reshape(P * m, -1),
                 None if base is None else base.reshape(P * m, -1), logp,
                 adv.ravel(), (adv + values).ravel(), rewards.sum(axis=1))


def policy_mean(net: Network, states, base):
    out, cache = net.forward(states)
    return (out if base is None else out + base), cache


def ppo_gradients(policy_net: Network, value_net: Network, batch: Batch, idx, log_std: float,
                  config: PpoConfig):
    """Surrogate ascent gradient, value-loss descent gradient and diagnostics on rows ``idx``."""
    states = batch.states[idx]
    base = None if batch.base is None else batch.base[idx]
    adv = batch.advantages[idx]
    if adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    mean, pcache = policy_mean(policy_net, states, base)
    logp = gaussian_logp(batch.actions[idx], mean, log_std)
    rho = ratio(logp, batch.logp[idx])
    surr, active = clipped_surrogate(rho, adv, config.clip)
    B = idx.size
    # d logp / d mean = (a - mean) / sigma^2
    dmean = (active * rho * adv / B)[:, None] * (batch.actions[idx] - mean) * math.exp(-2 * log_std)
    pgrad, _ = policy_net.backprop(pcache, dmean)
    v, vcache = value_net.forward(states)
    err = v[:, 0] - batch.returns[idx]
    vgrad, _ = value_net.backprop(vcache, (2.0 * config.value_coef * err / B)[:, None])
    objective = (float(surr.mean()) - config.value_coef * float(np.mean(err * err))
                 + config.entropy_coef * gaussian_entropy(mean.shape[1], log_std))
    return pgrad, vgrad, {"objective": objective, "ratio": rho}


def train_ppo(market: MarketData, tvo: TvoSpec, config: PpoConfig = PpoConfig(), seed: int = 0,
              log=None) -> PpoResult:
    n = market.n
    grid = fixing_grid(tvo.T, config.fixings_per_year, market)
    schedule = _schedule(market, grid, config.substeps)
    policy_net = init((n + 2, *config.hidden, n), config.activation, seed, "ppo-policy-init")
    value_net = init((n + 2, *config.hidden, 1), config.activation, seed, "ppo-value-init")
    W, b = policy_net.layers()[-1]
    W *= config.head_scale
    policy = NeuralPolicy(policy_net, market, tvo, config.action_mode)
    popt = Optimizer("nadam", policy_net.n_params, config.learning_rate)
    vopt = Optimizer("nadam", value_net.n_params, config.learning_rate)
    curve = LearningCurve("episodes")
    recent: list[np.ndarray] = []
    episodes = 0
    P = config.minibatch_episodes
    for update in range(config.updates):
        log_std = config.log_std(update)
        policy.log_std = log_std
        gen = rngmod.generator(seed, "ppo-episodes", update)
        batch = collect(policy, value_net, grid, schedule, config, gen, P)
        episodes += P
        recent.append(batch.episode_returns)
        while sum(r.size for r in recent) - recent[0].size >= config.curve_window:
            recent.pop(0)
        window = np.concatenate(recent)[-config.curve_window:]
        ci = CI98 * float(np.std(window, ddof=1)) / math.sqrt(window.size) if window.size > 1 else 0.0
        curve.append(episodes, float(np.mean(window)), ci)
        shuffle = rngmod.generator(seed, "ppo-shuffle", update)
        rows = batch.states.shape[0]
        for _ in range(config.epochs_per_update):
            for idx in np.array_split(shuffle.permutation(rows), config.n_minibatches):
                pgrad, vgrad, info = ppo_gradients(policy_net, value_net, batch, idx, log_std, config)
                if not math.isfinite(info["objective"]):
                    raise TrainingError(f"non-finite PPO objective at update {update}")
                policy_net.params = popt.step(policy_net.params, pgrad, ascend=True)
                value_net.params = vopt.step(value_net.params, vgrad)
        if log is not None and (update + 1) % 10 == 0:
            log(f"update {update + 1}: episodes {episodes}, reward {curve.value[-1]:.6g}")
    return PpoResult(policy, value_net, curve, grid)

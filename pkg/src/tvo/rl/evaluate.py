"""Out-of-sample evaluation of allocation policies."""
from __future__ import annotations

from ..market import MarketData
from ..pricing import McResult, TvoSpec, mc_price
from ..simulator import SimConfig, simulate_tvs
from ..strategy import AllocationStrategy
from .policy import NeuralPolicy

# evaluation draws come from their own named stream, disjoint from every training stream
EVAL_STREAM = "evaluate"


def evaluate_policy(policy: AllocationStrategy, market: MarketData, tvo: TvoSpec, paths: int,
                    seed: int, grid, substeps: int = 1, threads: int = 1) -> McResult:
    """Price under the policy's deterministic actions on fresh scenarios."""
    if isinstance(policy, NeuralPolicy):
        policy = NeuralPolicy(policy.net, policy.market, policy.tvo, policy.mode)
    config = SimConfig(paths, grid, substeps, seed, EVAL_STREAM, threads=threads)
    return mc_price(simulate_tvs(market, policy, tvo, config), tvo, market)

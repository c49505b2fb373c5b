"""Policy training: direct pathwise search, PPO, and out-of-sample evaluation."""
from .curve import LearningCurve
from .direct import DirectPolicyConfig, DirectResult, direct_loss_and_grad, train_direct
from .evaluate import EVAL_STREAM, evaluate_policy
from .policy import (
    NeuralPolicy,
    lemma_allocation,
    normalize_state,
    residual_bs_values,
    reward,
    shaped_rewards,
    terminal_rewards,
)
from .ppo import PpoConfig, PpoResult, clipped_surrogate, gae, gaussian_logp, ratio, train_ppo

__all__ = [
    "LearningCurve", "DirectPolicyConfig", "DirectResult", "direct_loss_and_grad", "train_direct",
    "EVAL_STREAM", "evaluate_policy", "NeuralPolicy", "lemma_allocation", "normalize_state",
    "residual_bs_values", "reward", "shaped_rewards", "terminal_rewards", "PpoConfig", "PpoResult",
    "clipped_surrogate", "gae", "gaussian_logp", "ratio", "train_ppo",
]

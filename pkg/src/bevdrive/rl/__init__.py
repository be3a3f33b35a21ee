from .distributions import ActionSample, entropy, gaussian_log_prob, sample_action, squashed_log_prob
from .gae import gae
from .policy import ObservationStore, PolicyNet
from .ppo import PpoConfig, RolloutBatch, ppo_update, surrogate_terms
from .trainer import VecEnv, collect_rollout, train_ppo
from .agent import PPOAgent

__all__ = [
    "ActionSample", "entropy", "gaussian_log_prob", "sample_action", "squashed_log_prob", "gae",
    "ObservationStore", "PolicyNet", "PpoConfig", "RolloutBatch", "ppo_update", "surrogate_terms",
    "VecEnv", "collect_rollout", "train_ppo", "PPOAgent",
]

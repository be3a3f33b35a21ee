"""PPO driving agent with an estimator interface."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..bev.observation import Variant
from ..env import BevDriveEnv, EnvConfig, Scenario, make_scenario
from ..nn import Adam, checkpoint_from_bytes, checkpoint_to_bytes, load_into
from ..world.town import TownSpec
from .distributions import sample_action
from .policy import PolicyNet
from .ppo import PpoConfig
from .trainer import VecEnv, train_ppo


class PPOAgent(BaseEstimator):
    """Trains a :class:`PolicyNet` with PPO in :class:`BevDriveEnv`.

    ``fit(X)`` takes a sequence of training :class:`Scenario` objects (cycled
    with fresh episode seeds); without it, scenarios are drawn on
    ``town_seeds`` with ``town_spec``. ``predict`` maps a batch
    ``(bev, measurements)`` to deterministic actions.
    """

    def __init__(self, variant: str = "Expert", total_steps: int = 300_000, rollout_length: int = 512,
                 n_envs: int = 8, epochs: int = 4, minibatch_size: int = 256, lr: float = 3e-4,
                 gamma: float = 0.99, lam: float = 0.95, clip: float = 0.2, value_coef: float = 0.5,
                 entropy_coef: float = 0.01, max_grad_norm: float = 0.5, town_spec: TownSpec | None = None,
                 town_seeds=(0, 1, 2, 3), route_length: float = 150.0, n_vehicles: int = 4,
                 n_pedestrians: int = 4, step_limit: int = 600, env_config: EnvConfig | None = None,
                 route_predictor=None, metrics_path=None, random_state: int = 0):
        self.variant = variant
        self.total_steps = total_steps
        self.rollout_length = rollout_length
        self.n_envs = n_envs
        self.epochs = epochs
        self.minibatch_size = minibatch_size
        self.lr = lr
        self.gamma = gamma
        self.lam = lam
        self.clip = clip
        self.value_coef = value_coef
        self.entropy_coef = entropy_coef
        self.max_grad_norm = max_grad_norm
        self.town_spec = town_spec
        self.town_seeds = town_seeds
        self.route_length = route_length
        self.n_vehicles = n_vehicles
        self.n_pedestrians = n_pedestrians
        self.step_limit = step_limit
        self.env_config = env_config
        self.route_predictor = route_predictor
        self.metrics_path = metrics_path
        self.random_state = random_state

    def ppo_config(self) -> PpoConfig:
        return PpoConfig(gamma=self.gamma, lam=self.lam, clip=self.clip, epochs=self.epochs,
                         minibatch_size=self.minibatch_size, value_coef=self.value_coef,
                         entropy_coef=self.entropy_coef, lr=self.lr, total_steps=self.total_steps,
                         rollout_length=self.rollout_length, n_envs=self.n_envs,
                         max_grad_norm=self.max_grad_norm)

    def _scenario_fn(self, scenarios):
        variant = Variant.parse(self.variant)
        spec = self.town_spec or TownSpec()
        base = int(self.random_state) * 1_000_003

        def fn(env_index: int, episode: int):
            seed = base + episode * 1009 + env_index
            if scenarios:
                sc = scenarios[(episode * len(self.town_seeds or [0]) + env_index) % len(scenarios)]
                return sc.with_variant(variant), seed
            town_seed = self.town_seeds[(episode + env_index) % len(self.town_seeds)]
            return make_scenario(town_seed, spec, seed, variant, self.route_length, self.n_vehicles,
                                 self.n_pedestrians, self.step_limit), seed

        return fn

    def _build(self):
        variant = Variant.parse(self.variant)
        self.policy_ = PolicyNet(variant.measurement_dim, seed=self.random_state)
        cfg = self.ppo_config()
        self.optimizer_ = Adam(self.policy_.named_layers(), lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)

    def fit(self, X=None, y=None):
        scenarios = list(X) if X is not None else None
        if scenarios is not None and not all(isinstance(s, Scenario) for s in scenarios):
            raise ValueError("X must be a sequence of Scenario objects")
        cfg = self.ppo_config()
        self._build()
        envs = [BevDriveEnv(self.env_config, self.route_predictor) for _ in range(cfg.n_envs)]
        vec = VecEnv(envs, self._scenario_fn(scenarios))
        rng = np.random.default_rng(self.random_state)
        self.history_ = train_ppo(self.policy_, vec, cfg, rng, self.metrics_path, optimizer=self.optimizer_)
        self.n_steps_ = self.history_[-1]["step"] if self.history_ else 0
        return self

    def act(self, bev: np.ndarray, meas: np.ndarray, rng=None, deterministic: bool = True) -> np.ndarray:
        check_is_fitted(self, "policy_")
        mu, log_std, _ = self.policy_.forward(bev, meas)
        action, _ = sample_action((mu, log_std), rng or np.random.default_rng(0), deterministic)
        return action

    def predict(self, X) -> np.ndarray:
        bev, meas = X
        return self.act(np.asarray(bev, dtype=np.float32), np.asarray(meas, dtype=np.float32))

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "policy_")
        params = {k: v for k, v in self.get_params().items()
                  if k not in ("town_spec", "env_config", "route_predictor", "metrics_path")}
        params["town_seeds"] = list(params["town_seeds"])
        return checkpoint_to_bytes(self.policy_.named_layers(), {"params": params})

    @classmethod
    def from_bytes(cls, data: bytes, **overrides) -> "PPOAgent":
        layers, meta = checkpoint_from_bytes(data)
        agent = cls(**{**meta["params"], **overrides})
        agent._build()
        load_into(agent.policy_.named_layers(), layers)
        return agent

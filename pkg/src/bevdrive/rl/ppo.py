"""Clipped-surrogate PPO update."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..nn import Adam
from .distributions import LOG_STD_BOUNDS, log1m_tanh2, entropy, gaussian_log_prob
from .gae import gae

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch_size: int = 256
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 3e-4
    total_steps: int = 300_000
    rollout_length: int = 512
    n_envs: int = 8
    max_grad_norm: float = 0.5
    chunk_size: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip ratio must lie in (0, 1)")
        if self.total_steps <= 0:
            raise ValueError("training budget must be positive")
        for name in ("epochs", "minibatch_size", "rollout_length", "n_envs", "chunk_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RolloutBatch:
    """A flattened rollout. ``store`` provides ``get(indices) -> (bev, meas)``."""

    store: object
    z: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __post_init__(self):
        t = len(self.rewards)
        if t < 1:
            raise ValueError("rollout must hold at least one step")
        for name in ("z", "log_probs", "values", "dones"):
            if len(getattr(self, name)) != t:
                raise ValueError(f"{name} length differs from rewards")
        if not np.isfinite(self.log_probs).all():
            raise ValueError("behaviour log-probabilities must be finite")
        self.dones = np.asarray(self.dones, dtype=bool)

    @property
    def actions(self) -> np.ndarray:
        return np.tanh(self.z)

    def compute_advantages(self, gamma: float, lam: float) -> None:
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones, self.bootstrap, gamma, lam)


def surrogate_terms(ratio: np.ndarray, adv: np.ndarray, clip: float):
    """Per-sample clipped objective and the mask of samples whose gradient flows."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    obj = np.minimum(unclipped, clipped)
    active = ~(((adv > 0) & (ratio > 1.0 + clip)) | ((adv < 0) & (ratio < 1.0 - clip)))
    return obj, active


def _flatten_time(a: np.ndarray, extra: int = 0) -> np.ndarray:
    """(T, E, ...) or (T, ...) to (T*E, ...); ``extra`` counts trailing feature axes."""
    if a.ndim - extra == 2:
        return a.reshape(a.shape[0] * a.shape[1], *a.shape[2:])
    return a


def ppo_update(batch: RolloutBatch, model, config: PpoConfig, optimizer: Adam | None = None,
               rng: np.random.Generator | None = None) -> dict:
    """Run ``config.epochs`` passes of minibatch updates; returns averaged loss terms.

    A non-finite loss or gradient restores the parameters (and optimizer
    state) held before the call and reports ``aborted=True``.
    """
    rng = rng or np.random.default_rng(0)
    if optimizer is None:
        optimizer = getattr(model, "_optimizer", None)
        if optimizer is None:
            optimizer = model._optimizer = Adam(model.named_layers(), lr=config.lr,
                                                max_grad_norm=config.max_grad_norm)
    if batch.advantages is None:
        batch.compute_advantages(config.gamma, config.lam)
    adv = _flatten_time(batch.advantages)
    ret = _flatten_time(batch.returns)
    z = _flatten_time(batch.z, extra=1)
    old_logp = _flatten_time(batch.log_probs)
    n = len(adv)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    saved_params = model.state()
    saved_opt = copy.deepcopy(optimizer.state)
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0,
            "grad_norm": 0.0}
    count = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            optimizer.zero_grad()
            stats = {k: 0.0 for k in sums}
            for c in range(0, len(idx), config.chunk_size):
                sub = idx[c:c + config.chunk_size]
                bev, meas = batch.store.get(sub)
                part = _loss_and_backward(model, bev, meas, z[sub], old_logp[sub], adv[sub], ret[sub],
                                          config, len(idx))
                for k, v in part.items():
                    stats[k] += v
            loss = stats["policy_loss"] + config.value_coef * stats["value_loss"] - config.entropy_coef * stats["entropy"]
            grads_ok = all(np.isfinite(layer.grads[k]).all() for _, layer in model.named_layers()
                           for k in layer.grads)
            if not (np.isfinite(loss) and grads_ok):
                log.warning("non-finite PPO loss; restoring parameters")
                model.load_state(saved_params)
                optimizer.state = saved_opt
                return {**{k: float("nan") for k in sums}, "aborted": True, "updates": count}
            stats["grad_norm"] = optimizer.step()
            for k in sums:
                sums[k] += stats[k]
            count += 1
    report = {k: v / max(count, 1) for k, v in sums.items()}
    report["aborted"] = False
    report["updates"] = count
    return report


def _loss_and_backward(model, bev, meas, z, old_logp, adv, ret, config: PpoConfig, denom: int) -> dict:
    """Loss terms of one chunk (already divided by the minibatch size) and their gradients."""
    mu, log_std, value = model.forward(bev, meas)
    mu = mu.astype(np.float64)
    log_std = log_std.astype(np.float64)
    value = value.astype(np.float64)
    # the tanh change-of-variables term is parameter-free: it enters the value, not the gradient
    logp = gaussian_log_prob(z, mu, log_std) - np.sum(log1m_tanh2(z), axis=-1)
    log_ratio = logp - old_logp
    ratio = np.exp(np.clip(log_ratio, -30.0, 30.0))
    obj, active = surrogate_terms(ratio, adv, config.clip)
    ent = entropy(log_std)
    policy_loss = -obj.sum() / denom
    value_loss = np.sum((value - ret) ** 2) / denom
    approx_kl = np.sum((ratio - 1.0) - log_ratio) / denom
    clip_frac = np.sum(np.abs(ratio - 1.0) > config.clip) / denom

    dlogp = np.where(active, -adv * ratio, 0.0) / denom
    sigma2 = np.exp(2.0 * np.clip(log_std, *LOG_STD_BOUNDS))
    dmu = dlogp[:, None] * (z - mu) / sigma2
    inside = (log_std > LOG_STD_BOUNDS[0]) & (log_std < LOG_STD_BOUNDS[1])
    dls = (dlogp[:, None] * ((z - mu) ** 2 / sigma2 - 1.0) - config.entropy_coef / denom) * inside
    dvalue = config.value_coef * 2.0 * (value - ret) / denom
    model.backward(dmu, dls, dvalue)
    return {"policy_loss": float(policy_loss), "value_loss": float(value_loss), "entropy": float(ent.sum() / denom),
            "approx_kl": float(approx_kl), "clip_fraction": float(clip_frac)}

"""Squashed Gaussian over (steer, accel) in [-1, 1]^2."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_STD_BOUNDS = (-5.0, 2.0)


class ActionSample(NamedTuple):
    action: np.ndarray
    log_prob: np.ndarray
    z: np.ndarray


def log1m_tanh2(z: np.ndarray) -> np.ndarray:
    """log(1 - tanh(z)^2), stable for large |z|."""
    return 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))


def gaussian_log_prob(z, mu, log_std) -> np.ndarray:
    """Log density of the pre-squash Gaussian, summed over action dimensions."""
    log_std = np.clip(log_std, *LOG_STD_BOUNDS)
    return np.sum(-0.5 * ((z - mu) / np.exp(log_std)) ** 2 - log_std - LOG_SQRT_2PI, axis=-1)


def squashed_log_prob(z, mu, log_std) -> np.ndarray:
    """Log density of ``a = tanh(z)`` including the change-of-variables term."""
    return gaussian_log_prob(z, mu, log_std) - np.sum(log1m_tanh2(np.asarray(z)), axis=-1)


def entropy(log_std) -> np.ndarray:
    """Entropy of the pre-squash Gaussian (the squashed entropy has no closed form)."""
    log_std = np.clip(log_std, *LOG_STD_BOUNDS)
    return np.sum(log_std + 0.5 + LOG_SQRT_2PI, axis=-1)


def sample_action(policy_output, rng: np.random.Generator, deterministic: bool = False,
                  return_raw: bool = False):
    """Draw ``a = tanh(z)``, ``z ~ N(mu, sigma)``; returns ``(action, log_prob)``.

    ``policy_output`` is ``(mu, log_std)`` with a trailing action axis.
    Deterministic mode returns ``tanh(mu)``. With ``return_raw`` the result is
    an :class:`ActionSample` that also carries the pre-squash ``z``, which is
    what the PPO ratio needs (``atanh`` of a saturated action is lossy).
    """
    mu, log_std = (np.asarray(a, dtype=np.float64) for a in policy_output)
    if not (np.isfinite(mu).all() and np.isfinite(log_std).all()):
        raise ValueError("distribution parameters must be finite")
    if deterministic:
        z = mu.copy()
    else:
        z = mu + np.exp(np.clip(log_std, *LOG_STD_BOUNDS)) * rng.standard_normal(mu.shape)
    sample = ActionSample(np.tanh(z), squashed_log_prob(z, mu, log_std), z)
    return sample if return_raw else (sample.action, sample.log_prob)

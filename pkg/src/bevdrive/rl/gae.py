"""Generalized advantage estimation."""

from __future__ import annotations

import numpy as np


def gae(rewards, values, dones, bootstrap, gamma: float = 0.99, lam: float = 0.95):
    """Advantages and returns for a rollout of length T.

    Arrays are (T,) or (T, n_envs); ``bootstrap`` is the value estimate of the
    state after the last step. ``dones[t]`` cuts the recursion after step t.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if not (r.shape == v.shape == d.shape):
        raise ValueError(f"length mismatch: rewards {r.shape}, values {v.shape}, dones {d.shape}")
    if len(r) == 0:
        raise ValueError("empty rollout")
    nonterminal = 1.0 - d.astype(np.float64)
    next_v = np.concatenate([v[1:], np.asarray(bootstrap, dtype=np.float64).reshape((1,) + v.shape[1:])])
    delta = r + gamma * next_v * nonterminal - v
    adv = np.zeros_like(r)
    acc = np.zeros(r.shape[1:])
    for t in range(len(r) - 1, -1, -1):
        acc = delta[t] + gamma * lam * nonterminal[t] * acc
        adv[t] = acc
    return adv, adv + v

"""Rollout collection and the PPO training loop."""

from __future__ import annotations

import json
import logging
import time
from typing import Callable

import numpy as np

from .distributions import sample_action
from .policy import ObservationStore
from .ppo import PpoConfig, RolloutBatch, ppo_update

log = logging.getLogger(__name__)


class VecEnv:
    """Several environments stepped in lockstep, each reset automatically when its episode ends.

    ``scenario_fn(env_index, episode_index)`` returns the ``(scenario, seed)``
    of every new episode.
    """

    def __init__(self, envs, scenario_fn: Callable):
        self.envs = list(envs)
        self.scenario_fn = scenario_fn
        self.episodes = [0] * len(self.envs)
        self.obs = [self._reset(i) for i in range(len(self.envs))]
        self.returns = np.zeros(len(self.envs))
        self.lengths = np.zeros(len(self.envs), dtype=int)

    def __len__(self):
        return len(self.envs)

    def _reset(self, i: int):
        scenario, seed = self.scenario_fn(i, self.episodes[i])
        self.episodes[i] += 1
        return self.envs[i].reset(scenario, seed)

    def batch_obs(self) -> tuple[np.ndarray, np.ndarray]:
        return np.stack([o[0] for o in self.obs]), np.stack([o[1] for o in self.obs])

    def step(self, actions):
        rewards = np.zeros(len(self.envs))
        dones = np.zeros(len(self.envs), dtype=bool)
        finished = []
        for i, env in enumerate(self.envs):
            tr = env.step(actions[i])
            rewards[i] = tr.reward
            dones[i] = tr.done
            self.returns[i] += tr.reward
            self.lengths[i] += 1
            if tr.done:
                finished.append({"return": float(self.returns[i]), "length": int(self.lengths[i]),
                                 **{k: tr.info[k] for k in ("route_completion", "infraction_score",
                                                            "driving_score", "termination")}})
                self.returns[i] = 0.0
                self.lengths[i] = 0
                self.obs[i] = self._reset(i)
            else:
                self.obs[i] = tr.observation
        return rewards, dones, finished


def collect_rollout(vec: VecEnv, model, length: int, rng: np.random.Generator,
                    store: ObservationStore | None = None) -> tuple[RolloutBatch, list[dict]]:
    n = len(vec)
    meas_dim = vec.obs[0][1].shape[0]
    if store is None or store.capacity < length * n:
        store = ObservationStore(length * n, meas_dim)
    z = np.zeros((length, n, 2))
    logp = np.zeros((length, n))
    rewards = np.zeros((length, n))
    values = np.zeros((length, n))
    dones = np.zeros((length, n), dtype=bool)
    finished: list[dict] = []
    for t in range(length):
        bev, meas = vec.batch_obs()
        for i in range(n):
            store.put(t * n + i, bev[i], meas[i])
        mu, log_std, value = model.forward(bev, meas)
        sample = sample_action((mu, log_std), rng, return_raw=True)
        z[t], logp[t], values[t] = sample.z, sample.log_prob, value
        rewards[t], dones[t], fin = vec.step(sample.action)
        finished.extend(fin)
    bev, meas = vec.batch_obs()
    _, _, bootstrap = model.forward(bev, meas)
    batch = RolloutBatch(store=store, z=z, log_probs=logp, rewards=rewards, values=values, dones=dones,
                         bootstrap=bootstrap.astype(np.float64))
    return batch, finished


def train_ppo(model, vec: VecEnv, config: PpoConfig, rng: np.random.Generator, metrics_path=None,
              checkpoint_fn: Callable | None = None, checkpoint_every: int = 0, optimizer=None) -> list[dict]:
    """Alternate rollout collection and PPO updates until ``config.total_steps`` environment steps.

    With ``metrics_path`` one JSON line per update is appended (step, mean
    return of the episodes finished in that rollout, loss terms, KL) and a
    footer record closes the stream.
    """
    history = []
    steps = 0
    update = 0
    start = time.monotonic()
    sink = open(metrics_path, "a") if metrics_path else None
    store = None
    try:
        while steps < config.total_steps:
            length = min(config.rollout_length, -(-(config.total_steps - steps) // len(vec)))
            batch, finished = collect_rollout(vec, model, length, rng, store)
            store = batch.store
            steps += length * len(vec)
            report = ppo_update(batch, model, config, optimizer, rng)
            update += 1
            rec = {"type": "update", "update": update, "step": steps,
                   "return": float(np.mean([f["return"] for f in finished])) if finished else None,
                   "episodes": len(finished),
                   "driving_score": float(np.mean([f["driving_score"] for f in finished])) if finished else None,
                   "policy_loss": report["policy_loss"], "value_loss": report["value_loss"],
                   "entropy": report["entropy"], "kl": report["approx_kl"],
                   "clip_fraction": report["clip_fraction"], "aborted": report["aborted"],
                   "wall_time": round(time.monotonic() - start, 3)}
            history.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            log.info("update %d step %d return %s kl %.4f", update, steps, rec["return"], report["approx_kl"])
            if checkpoint_fn and checkpoint_every and update % checkpoint_every == 0:
                checkpoint_fn(update)
        if sink:
            sink.write(json.dumps({"type": "footer", "steps": steps, "updates": update,
                                   "wall_time": round(time.monotonic() - start, 3)}) + "\n")
    finally:
        if sink:
            sink.close()
    return history

"""Training, evaluation and reporting of state-representation variants."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import statistics
import time
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..bev.observation import Variant
from ..env import BevDriveEnv, make_scenario
from ..metrics import EpisodeMetrics
from ..rl.agent import PPOAgent
from ..rl.trainer import VecEnv, train_ppo
from .config import ExperimentConfig

log = logging.getLogger(__name__)

REPORT_FIELDS = ("variant", "seed", "budget_steps", "eval_episodes", "ds", "rc", "is", "wall_time")
EVAL_SEED_BASE = 900_000


class Aggregate(NamedTuple):
    mean: float
    std: float
    n: int
    single_run: bool

    def __str__(self) -> str:
        flag = " (single run)" if self.single_run else ""
        return f"{self.mean:.3f} ± {self.std:.3f}{flag}"


def aggregate_seeds(runs) -> Aggregate:
    """Mean and sample standard deviation (n - 1 denominator) of per-seed values.

    A single run reports std 0 and sets ``single_run``.
    """
    values = [float(r) for r in runs]
    if not values:
        raise ValueError("cannot aggregate zero runs")
    if len(values) == 1:
        return Aggregate(values[0], 0.0, 1, True)
    return Aggregate(statistics.fmean(values), statistics.stdev(values), len(values), False)


def eval_scenarios(config: ExperimentConfig, variant) -> list:
    """Held-out evaluation episodes as ``(scenario, seed)``, identical across variants."""
    out = []
    towns = config.eval_town_seeds
    for i in range(config.eval_episodes):
        seed = EVAL_SEED_BASE + i
        sc = make_scenario(towns[i % len(towns)], config.town_spec, seed, variant, config.route_length,
                           config.n_vehicles, config.n_pedestrians, config.step_limit)
        out.append((sc, seed))
    return out


def evaluate_agent(agent: PPOAgent, config: ExperimentConfig, variant, route_predictor=None,
                   log_path=None) -> list[EpisodeMetrics]:
    """Run the deterministic policy on every evaluation scenario."""
    env = BevDriveEnv(config.env, route_predictor, log_path)
    results = []
    try:
        for scenario, seed in eval_scenarios(config, variant):
            bev, meas = env.reset(scenario, seed)
            done = False
            while not done:
                action = agent.act(bev[None], meas[None])[0]
                tr = env.step(action)
                bev, meas = tr.observation
                done = tr.done
            results.append(env.metrics())
    finally:
        env.close()
    return results


def _summary(metrics: list[EpisodeMetrics]) -> dict:
    return {"ds": float(np.mean([m.ds for m in metrics])), "rc": float(np.mean([m.rc for m in metrics])),
            "is": float(np.mean([m.is_ for m in metrics])), "episodes": [m.to_dict() for m in metrics]}


def run_dir(config: ExperimentConfig, variant, seed: int) -> Path:
    return Path(config.out) / Variant.parse(variant).value / f"seed_{seed}"


def ensure_route_predictor(config: ExperimentConfig):
    """Load the route predictor checkpoint, training and saving one first if it is absent."""
    from ..route.dataset import generate_samples, sample_arrays, training_towns
    from ..route.predictor import RoutePredictor

    path = Path(config.predictor_checkpoint)
    if not path.is_absolute():
        path = Path(config.out) / path
    if path.exists():
        return RoutePredictor.from_bytes(path.read_bytes())
    log.info("no route predictor at %s; training one on %d samples", path, config.predictor_samples)
    towns = training_towns(0)
    samples = generate_samples(config.predictor_samples, 0, towns)
    X, y = sample_arrays(samples, towns)
    model = RoutePredictor(epochs=1000, max_time=config.predictor_max_time, random_state=0).fit(X, y)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(model.to_bytes())
    os.replace(tmp, path)
    return model


def run_seed(config: ExperimentConfig, variant, seed: int, route_predictor=None) -> dict:
    """Train one agent from scratch and evaluate it; the summary is cached in the run directory."""
    variant = Variant.parse(variant)
    out = run_dir(config, variant, seed)
    summary_path = out / "summary.json"
    if summary_path.exists():
        return json.loads(summary_path.read_text())
    out.mkdir(parents=True, exist_ok=True)
    budget = config.budget_for(variant)
    if budget <= 0:
        raise ValueError("training budget must be positive")
    ppo = dataclasses.replace(config.ppo, total_steps=budget)
    agent = PPOAgent(variant=variant.value, random_state=seed, env_config=config.env,
                     route_predictor=route_predictor, town_spec=config.town_spec,
                     town_seeds=config.train_town_seeds, route_length=config.route_length,
                     n_vehicles=config.n_vehicles, n_pedestrians=config.n_pedestrians,
                     step_limit=config.step_limit,
                     **{k: v for k, v in ppo.to_dict().items() if k != "chunk_size"})
    agent._build()
    envs = [BevDriveEnv(config.env, route_predictor) for _ in range(ppo.n_envs)]
    vec = VecEnv(envs, agent._scenario_fn(None))
    rng = np.random.default_rng(seed)
    ckpt = out / "policy.bvdc"

    def save(_update=None):
        tmp = out / "policy.bvdc.tmp"
        tmp.write_bytes(agent.to_bytes())
        os.replace(tmp, ckpt)

    train_log = out / "train.jsonl"
    if train_log.exists():
        train_log.unlink()
    start = time.monotonic()
    agent.history_ = train_ppo(agent.policy_, vec, ppo, rng, train_log, checkpoint_fn=save, checkpoint_every=10,
                               optimizer=agent.optimizer_)
    save()
    eval_log = out / "eval.jsonl"
    if eval_log.exists():
        eval_log.unlink()
    metrics = evaluate_agent(agent, config, variant, route_predictor, eval_log)
    summary = {"variant": variant.value, "seed": seed, "budget_steps": budget,
               "eval_episodes": len(metrics), **_summary(metrics),
               "wall_time": round(time.monotonic() - start, 1)}
    tmp = out / "summary.json.tmp"
    tmp.write_text(json.dumps(summary, indent=1))
    os.replace(tmp, summary_path)
    return summary


def run_variant(config: ExperimentConfig, variant, seeds=None, report=None) -> dict:
    """Train and evaluate ``variant`` for every seed; returns per-seed summaries and aggregates."""
    config.validate()
    variant = Variant.parse(variant)
    predictor = ensure_route_predictor(config) if variant is Variant.PREDICTED_ROUTE else None
    seeds = range(config.seeds) if seeds is None else seeds
    runs = []
    for seed in seeds:
        summary = run_seed(config, variant, seed, predictor)
        runs.append(summary)
        if report is not None:
            report.add(summary)
    return {"variant": variant.value, "runs": runs,
            **{k: aggregate_seeds([r[k] for r in runs]) for k in ("ds", "rc", "is")}}


class Report:
    """``report.csv`` keyed by (variant, seed); adding a row that exists replaces it."""

    def __init__(self, path, config: ExperimentConfig | None = None):
        self.path = Path(path)
        self.config = config

    def rows(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, newline="") as f:
            lines = [line for line in f if not line.startswith("#")]
        return list(csv.DictReader(lines))

    def _header(self) -> list[str]:
        if self.config is None:
            return []
        env = self.config.env
        return [f"# road_iou={env.road_iou} lane_iou={env.lane_iou} ood_multiplier={env.ood_multiplier}",
                f"# stop_tpr={env.stop_tpr} stop_fpr={env.stop_fpr} stop_threshold={env.stop_threshold}"]

    def add(self, summary: dict) -> None:
        row = {k: summary[k] for k in REPORT_FIELDS}
        rows = [r for r in self.rows() if (r["variant"], int(r["seed"])) != (row["variant"], int(row["seed"]))]
        rows.append({k: str(v) for k, v in row.items()})
        rows.sort(key=lambda r: (r["variant"], int(r["seed"])))
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".csv.tmp")
        with open(tmp, "w", newline="") as f:
            for line in self._header():
                f.write(line + "\n")
            w = csv.DictWriter(f, fieldnames=REPORT_FIELDS)
            w.writeheader()
            w.writerows(rows)
        os.replace(tmp, self.path)

    def by_variant(self, metric: str = "ds") -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for r in self.rows():
            out.setdefault(r["variant"], []).append(float(r[metric]))
        return out


# (name, variant, comparison, factor) relative to the Expert median driving score
ORDERING_CHECKS = (
    ("no_static_close_to_expert", "NoStatic", ">=", 0.8),
    ("heatmap_far_below_expert", "TargetHeatmap", "<=", 0.25),
    ("gt_binary_stop_close_to_expert", "GtBinaryStop", ">=", 0.8),
    ("predicted_binary_stop_close_to_expert", "PredictedBinaryStop", ">=", 0.7),
    ("measurement_flag_far_below_expert", "MeasurementFlagStop", "<=", 0.25),
    ("static_predicted_close_to_expert", "StaticPredicted", ">=", 0.75),
)


class CheckResult(NamedTuple):
    name: str
    passed: bool | None
    detail: str


def check_orderings(ds_by_variant: dict[str, list[float]]) -> list[CheckResult]:
    """Median-DS orderings against Expert; a check whose variants are missing has ``passed=None``."""
    results = []
    expert = ds_by_variant.get("Expert")
    for name, variant, op, factor in ORDERING_CHECKS:
        values = ds_by_variant.get(variant)
        if not expert or not values:
            results.append(CheckResult(name, None, f"missing runs for {variant if expert else 'Expert'}"))
            continue
        m, e = statistics.median(values), statistics.median(expert)
        passed = m >= factor * e if op == ">=" else m <= factor * e
        results.append(CheckResult(name, passed, f"median {variant} {m:.4f} {op} {factor} x Expert {e:.4f}"))
    return results


def format_table(rows: dict[str, dict]) -> str:
    """Rows keyed by variant with aggregates for ds, rc and is."""
    head = f"{'variant':<22}{'DS':>24}{'RC':>16}{'IS':>16}"
    lines = [head, "-" * len(head)]
    for variant, agg in rows.items():
        ds, rc, is_ = agg["ds"], agg["rc"], agg["is"]
        lines.append(f"{variant:<22}{ds.mean:>10.3f} ± {ds.std:<6.3f}{'*' if ds.single_run else ' ':<5}"
                     f"{rc.mean:>16.3f}{is_.mean:>16.3f}")
    if any(agg["ds"].single_run for agg in rows.values()):
        lines.append("* single run, std not defined")
    return "\n".join(lines)


def summarize_report(report: Report) -> dict[str, dict]:
    ds, rc, is_ = report.by_variant("ds"), report.by_variant("rc"), report.by_variant("is")
    return {v: {"ds": aggregate_seeds(ds[v]), "rc": aggregate_seeds(rc[v]), "is": aggregate_seeds(is_[v])}
            for v in sorted(ds)}


def write_summary_csv(path, rows: dict[str, dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "ds_mean", "ds_std", "rc_mean", "rc_std", "is_mean", "is_std", "n", "single_run"])
        for variant, agg in rows.items():
            w.writerow([variant, agg["ds"].mean, agg["ds"].std, agg["rc"].mean, agg["rc"].std,
                        agg["is"].mean, agg["is"].std, agg["ds"].n, int(agg["ds"].single_run)])


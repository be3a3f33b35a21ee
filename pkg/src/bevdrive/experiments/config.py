"""Experiment configuration read from an INI-style key-value file.

Example::

    [experiment]
    variants = Expert, NoStatic, TargetHeatmap
    seeds = 3
    budget_steps = 300000
    eval_episodes = 10
    out = runs/study

    [town]
    train_town_seeds = 0, 1, 2, 3
    eval_town_seeds = 100, 101
    layout = grid
    blocks = 2, 2
    n_vehicles = 4
    n_pedestrians = 4
    route_length = 150
    step_limit = 600

    [perception]
    road_iou = 0.924
    lane_iou = 0.756
    ood_multiplier = 1.0

    [stop]
    tpr = 0.95
    fpr = 0.02
    threshold = 0.4
    latency = 0

    [ppo]
    lr = 3e-4
    rollout_length = 512
    n_envs = 8

    [predictor]
    checkpoint = route_predictor.bvdc
    samples = 10000
    max_time = 1800

Every key is optional; missing keys take the defaults of :class:`ExperimentConfig`.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from ..bev.observation import Variant
from ..env import EnvConfig
from ..rl.ppo import PpoConfig
from ..world.town import TownSpec

ALL_VARIANTS = tuple(v.value for v in Variant)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    variants: tuple[str, ...] = ("Expert",)
    seeds: int = 3
    budget_steps: int = 300_000
    eval_episodes: int = 10
    out: str = "runs"
    train_town_seeds: tuple[int, ...] = (0, 1, 2, 3)
    eval_town_seeds: tuple[int, ...] = (100, 101)
    town_spec: TownSpec = field(default_factory=TownSpec)
    n_vehicles: int = 4
    n_pedestrians: int = 4
    route_length: float = 150.0
    step_limit: int = 600
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    predictor_checkpoint: str = "route_predictor.bvdc"
    predictor_samples: int = 10_000
    predictor_max_time: float = 1800.0
    predicted_route_budget_factor: float = 2.0

    def __post_init__(self):
        self.variants = tuple(Variant.parse(v).value for v in self.variants)

    def validate(self) -> None:
        if not self.variants:
            raise ValueError("no variants selected")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.eval_episodes < 10:
            raise ValueError("at least 10 evaluation episodes are required")
        if self.budget_steps <= 0:
            raise ValueError("training budget must be positive")
        if not self.train_town_seeds or not self.eval_town_seeds:
            raise ValueError("train and eval town seeds must be non-empty")
        self.town_spec.validate()
        self.ppo.validate()

    def budget_for(self, variant) -> int:
        if Variant.parse(variant) is Variant.PREDICTED_ROUTE:
            return int(round(self.budget_steps * self.predicted_route_budget_factor))
        return self.budget_steps

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["town_spec"] = dataclasses.asdict(self.town_spec)
        return d


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        parser.read_file(f)
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    known = {"experiment", "town", "perception", "stop", "ppo", "predictor"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kw: dict = {}
    ex = parser["experiment"] if parser.has_section("experiment") else {}
    if "variants" in ex:
        kw["variants"] = tuple(v.strip() for v in ex["variants"].split(",") if v.strip())
    if "variant" in ex:
        kw["variants"] = (ex["variant"].strip(),)
    for key, conv in (("seeds", int), ("budget_steps", int), ("eval_episodes", int), ("out", str)):
        if key in ex:
            kw[key] = conv(ex[key])

    town = parser["town"] if parser.has_section("town") else {}
    for key in ("train_town_seeds", "eval_town_seeds"):
        if key in town:
            kw[key] = _ints(town[key])
    for key, conv in (("n_vehicles", int), ("n_pedestrians", int), ("route_length", float), ("step_limit", int)):
        if key in town:
            kw[key] = conv(town[key])
    spec = {}
    for key, conv in (("layout", str), ("lanes", int), ("block_size", float), ("junction_fraction", float),
                      ("lane_width", float), ("straight_length", float)):
        if key in town:
            spec[key] = conv(town[key])
    if "blocks" in town:
        spec["blocks"] = _ints(town["blocks"])
    if "light_schedule" in town:
        spec["light_schedule"] = _floats(town["light_schedule"])
    kw["town_spec"] = TownSpec(**spec)

    env = {}
    per = parser["perception"] if parser.has_section("perception") else {}
    for key in ("road_iou", "lane_iou", "ood_multiplier"):
        if key in per:
            env[key] = float(per[key])
    stop = parser["stop"] if parser.has_section("stop") else {}
    for key, name, conv in (("tpr", "stop_tpr", float), ("fpr", "stop_fpr", float),
                            ("threshold", "stop_threshold", float), ("latency", "stop_latency", int)):
        if key in stop:
            env[name] = conv(stop[key])
    kw["env"] = EnvConfig(**env)

    ppo = parser["ppo"] if parser.has_section("ppo") else {}
    fields = {f.name: f.type for f in dataclasses.fields(PpoConfig)}
    ppo_kw = {}
    for key, value in ppo.items():
        if key not in fields:
            raise ValueError(f"unknown ppo key {key!r}")
        ppo_kw[key] = int(value) if fields[key] in (int, "int") else float(value)
    kw["ppo"] = PpoConfig(**ppo_kw)

    pred = parser["predictor"] if parser.has_section("predictor") else {}
    if "checkpoint" in pred:
        kw["predictor_checkpoint"] = pred["checkpoint"]
    if "samples" in pred:
        kw["predictor_samples"] = int(pred["samples"])
    if "max_time" in pred:
        kw["predictor_max_time"] = float(pred["max_time"])
    if "budget_factor" in pred:
        kw["predicted_route_budget_factor"] = float(pred["budget_factor"])
    return ExperimentConfig(**kw)

"""Command-line entry point: ``bevdrive <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("bevdrive")

# preview colours per channel group, later groups paint over earlier ones
_PREVIEW = (
    (0, (70, 70, 70)),
    (2, (230, 230, 230)),
    (1, (60, 120, 230)),
    (11, (230, 60, 60)),
    (7, (240, 200, 40)),
    (3, (60, 200, 90)),
)


def _pose(text: str) -> tuple[float, float, float]:
    try:
        x, y, h = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pose must be X,Y,H, got {text!r}") from None
    return x, y, h


def _town_spec(args):
    from .world.town import TownSpec

    return TownSpec(layout=args.layout, lanes=args.lanes, blocks=tuple(args.blocks))


def cmd_gen_town(args) -> int:
    from .world.serialize import dump_text, save_town
    from .world.town import generate_town

    town = generate_town(args.seed, _town_spec(args))
    if args.out:
        save_town(town, args.out)
        print(f"wrote {args.out}: {len(town.lanes)} lanes, {len(town.traffic_lights)} traffic lights")
    if args.dump or not args.out:
        sys.stdout.write(dump_text(town))
    return 0


def preview_image(bev: np.ndarray) -> np.ndarray:
    """RGB composite of a 15-channel BEV tensor."""
    rgb = np.zeros(bev.shape[1:] + (3,), dtype=np.uint8)
    for ch, colour in _PREVIEW:
        span = 1 if ch in (0, 1, 2) else 4
        on = bev[ch:ch + span].max(axis=0) > 0.5
        rgb[on] = colour
    return rgb


def cmd_render_bev(args) -> int:
    from PIL import Image

    from .bev.raster import GRID
    from .bev.render import CHANNEL_NAMES, N_CHANNELS, History, render_dynamic_channels, render_static_channels
    from .route.dataset import random_mission
    from .route.masks import render_route_mask
    from .world.serialize import load_town
    from .world.sim import World, WorldConfig

    town = load_town(args.town)
    x, y, h = args.pose
    snapped = town.snap(np.array([x, y]), max_distance=args.max_snap, heading=h)
    if snapped is None:
        print(f"pose ({x}, {y}) is farther than {args.max_snap} m from every lane", file=sys.stderr)
        return 2
    world = World(town, args.seed, WorldConfig(n_vehicles=args.vehicles, n_pedestrians=args.pedestrians),
                  ego_spawn=snapped[:2])
    history = History()
    history.fill(world.snapshot())
    for _ in range(args.steps):
        world.step((0.0, 0.0, 1.0))
        history.push(world.snapshot())
    mission = random_mission(town, np.random.default_rng(args.seed), args.route_length, start=snapped[:2])
    pose = (x, y, h)
    bev = np.zeros((N_CHANNELS, GRID, GRID), dtype=np.uint8)
    bev[0], bev[2] = render_static_channels(town, pose)
    bev[1] = render_route_mask(mission.route, pose)
    bev[3:] = render_dynamic_channels(history, pose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(CHANNEL_NAMES):
        img = (bev[i] > 0.5).astype(np.uint8) * 255
        Image.fromarray(img, mode="L").save(out / f"ch{i:02d}_{name}.pgm")
    Image.fromarray(preview_image(bev), mode="RGB").save(out / "preview.png")
    print(f"wrote {len(CHANNEL_NAMES)} channels and preview.png to {out}")
    return 0


def _dataset(path, n, seed, town_seed):
    from .route.dataset import generate_samples, load_dataset, save_dataset, training_towns

    if path and Path(path).exists():
        return load_dataset(path)
    towns = training_towns(town_seed)
    samples = generate_samples(n, seed, towns)
    if path:
        save_dataset(path, samples, towns)
    return samples, towns


def cmd_routegen(args) -> int:
    from .route.dataset import sample_arrays
    from .route.predictor import RoutePredictor

    if args.train:
        samples, towns = _dataset(args.data, args.samples, args.seed, args.town_seed)
        X, y = sample_arrays(samples, towns)
        model = RoutePredictor(epochs=args.epochs, max_time=args.max_time, threshold=args.iou_threshold,
                               random_state=args.seed, verbose=True).fit(X, y)
        Path(args.model).write_bytes(model.to_bytes())
        print(f"trained {model.n_epochs_} epochs on {len(samples)} samples, "
              f"final loss {model.loss_history_[-1]:.4f}; wrote {args.model}")
        return 0
    model = RoutePredictor.from_bytes(Path(args.model).read_bytes())
    model.threshold = args.iou_threshold
    samples, towns = _dataset(args.data, args.samples, args.seed, args.town_seed)
    X, y = sample_arrays(samples, towns)
    score = model.score(X, y)
    print(f"mean IoU {score:.4f} over {len(samples)} scenes")
    straight = [i for i, s in enumerate(samples)
                if towns[s.town_id][1].layout == "straight" and towns[s.town_id][1].lanes == 1]
    if straight:
        idx = np.asarray(straight)
        print(f"single straight lane IoU {model.score((X[0][idx], X[1][idx]), y[idx]):.4f} "
              f"over {len(idx)} scenes")
    return 0


def cmd_ablate(args) -> int:
    from .experiments import ExperimentConfig, Report, check_orderings, format_table, load_config, run_variant
    from .experiments import summarize_report

    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.variant:
        config.variants = (args.variant,)
        config.__post_init__()
    if args.seeds is not None:
        config.seeds = args.seeds
    if args.out:
        config.out = args.out
    config.validate()
    report = Report(Path(config.out) / "report.csv", config)
    if not args.check_only:
        for variant in config.variants:
            log.info("variant %s: %d seeds, %d steps each", variant, config.seeds, config.budget_for(variant))
            run_variant(config, variant, report=report)
    rows = summarize_report(report)
    if rows:
        print(format_table(rows))
    if args.check or args.check_only:
        failed = False
        for res in check_orderings(report.by_variant("ds")):
            status = {True: "PASS", False: "FAIL", None: "SKIP"}[res.passed]
            print(f"{status} {res.name}: {res.detail}")
            failed |= res.passed is False
        return 1 if failed else 0
    return 0


def cmd_eval(args) -> int:
    from .experiments import Report, format_table, summarize_report, write_summary_csv

    report = Report(args.report)
    if not report.path.exists():
        print(f"no report at {report.path}", file=sys.stderr)
        return 2
    rows = summarize_report(report)
    print(format_table(rows))
    csv_path = args.csv or report.path.with_name("summary.csv")
    write_summary_csv(csv_path, rows)
    print(f"wrote {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bevdrive", description="BEV driving simulator and RL workbench")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-town", help="generate a procedural town")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--layout", choices=("grid", "straight"), default="grid")
    g.add_argument("--lanes", type=int, default=1)
    g.add_argument("--blocks", type=int, nargs=2, default=(2, 2), metavar=("NX", "NY"))
    g.add_argument("--out", help="write the binary town file here")
    g.add_argument("--dump", action="store_true", help="print the text dump")
    g.set_defaults(func=cmd_gen_town)

    r = sub.add_parser("render-bev", help="dump the BEV channels at a pose")
    r.add_argument("--town", required=True, help="binary town file")
    r.add_argument("--pose", required=True, type=_pose, help="X,Y,HEADING in metres and radians")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--vehicles", type=int, default=4)
    r.add_argument("--pedestrians", type=int, default=4)
    r.add_argument("--steps", type=int, default=0, help="simulate this many steps before rendering")
    r.add_argument("--route-length", type=float, default=60.0)
    r.add_argument("--max-snap", type=float, default=5.0)
    r.set_defaults(func=cmd_render_bev)

    t = sub.add_parser("routegen", help="train or evaluate the route predictor")
    mode = t.add_mutually_exclusive_group(required=True)
    mode.add_argument("--train", action="store_true")
    mode.add_argument("--eval", action="store_true")
    t.add_argument("--model", default="route_predictor.bvdc")
    t.add_argument("--data", help="dataset file; generated and written if missing")
    t.add_argument("--samples", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--town-seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--max-time", type=float, default=1800.0)
    t.add_argument("--iou-threshold", type=float, default=0.5, help="probability binarization threshold")
    t.set_defaults(func=cmd_routegen)

    a = sub.add_parser("ablate", help="train and evaluate state-representation variants")
    a.add_argument("--config")
    a.add_argument("--variant")
    a.add_argument("--seeds", type=int)
    a.add_argument("--out")
    a.add_argument("--check", action="store_true", help="exit nonzero if an ordering check fails")
    a.add_argument("--check-only", action="store_true", help="check the existing report without training")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="summarize a report")
    e.add_argument("--report", default="runs/report.csv")
    e.add_argument("--csv", help="summary output (default: summary.csv next to the report)")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "routegen":
        train = args.train
        args.samples = args.samples if args.samples is not None else (10_000 if train else 1000)
        args.seed = args.seed if args.seed is not None else (0 if train else 1)
        args.town_seed = args.town_seed if args.town_seed is not None else (0 if train else 2)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

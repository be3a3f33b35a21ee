import numpy as np
import pytest
from PIL import Image

from bevdrive.cli import build_parser, main
from bevdrive.experiments import ExperimentConfig, Report
from bevdrive.world import load_town


def test_gen_town_and_render_bev(tmp_path, capsys):
    town_path = tmp_path / "town.bvdt"
    assert main(["gen-town", "--seed", "3", "--out", str(town_path)]) == 0
    town = load_town(town_path)
    lane = town.lanes[0]
    p = lane.point_at(5.0)
    out = tmp_path / "bev"
    pose = f"{p[0]},{p[1]},{lane.heading_at(5.0)}"
    assert main(["render-bev", "--town", str(town_path), "--pose", pose, "--out", str(out)]) == 0
    files = sorted(f.name for f in out.glob("*.pgm"))
    assert len(files) == 15 and files[0] == "ch00_road.pgm" and files[-1] == "ch14_stop3.pgm"
    road = np.asarray(Image.open(out / "ch00_road.pgm"))
    assert road.shape == (192, 192) and set(np.unique(road)) <= {0, 255} and road[152, 96] == 255
    assert (out / "ch00_road.pgm").read_bytes().startswith(b"P5")
    preview = Image.open(out / "preview.png")
    assert preview.size == (192, 192) and preview.mode == "RGB"


def test_render_bev_rejects_off_road_pose(tmp_path):
    town_path = tmp_path / "town.bvdt"
    main(["gen-town", "--out", str(town_path)])
    assert main(["render-bev", "--town", str(town_path), "--pose", "5000,5000,0", "--out", str(tmp_path)]) != 0


def test_bad_pose_is_an_argument_error():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["render-bev", "--town", "t", "--pose", "1,2", "--out", "o"])


def _write_report(path, ds_by_variant):
    report = Report(path, ExperimentConfig())
    for variant, values in ds_by_variant.items():
        for seed, ds in enumerate(values):
            report.add({"variant": variant, "seed": seed, "budget_steps": 1, "eval_episodes": 10, "ds": ds,
                        "rc": ds, "is": 1.0, "wall_time": 0.0})


def test_ablate_check_exit_codes(tmp_path, capsys):
    _write_report(tmp_path / "report.csv", {"Expert": [0.8, 0.7, 0.9], "NoStatic": [0.7, 0.75, 0.8],
                                            "TargetHeatmap": [0.0, 0.01, 0.02]})
    assert main(["ablate", "--out", str(tmp_path), "--check-only"]) == 0
    text = capsys.readouterr().out
    assert "PASS no_static_close_to_expert" in text and "SKIP" in text
    _write_report(tmp_path / "report.csv", {"TargetHeatmap": [0.8, 0.8, 0.8]})
    assert main(["ablate", "--out", str(tmp_path), "--check-only"]) == 1
    assert "FAIL heatmap_far_below_expert" in capsys.readouterr().out


def test_eval_prints_table_and_writes_csv(tmp_path, capsys):
    _write_report(tmp_path / "report.csv", {"Expert": [0.7, 0.8, 0.9]})
    assert main(["eval", "--report", str(tmp_path / "report.csv")]) == 0
    out = capsys.readouterr().out
    assert "Expert" in out and "0.800 ± 0.100" in out
    assert (tmp_path / "summary.csv").exists()
    assert main(["eval", "--report", str(tmp_path / "missing.csv")]) == 2

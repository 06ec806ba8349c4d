import csv
import json
from pathlib import Path

import numpy as np
import pytest

from tpmove.cli import main


def base_config(tmp_path, **overrides):
    cfg = {
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
        "demos": {
            "kind": "reaching",
            "start": [0.05, 0.25, 0.0],
            "target": [0.25, 0.35, 0.15],
            "duration": 2.0,
            "steps": 40,
            "count": 6,
            "curvature": 0.03,
            "noise_std": 0.01,
            "seed": 5,
        },
        "block": {"input": [0], "output": [1, 2, 3]},
        "n_components": 3,
        "em": {"init": "time_bins"},
        "train_frames": {"mode": "endpoints"},
        "frames": [
            {"A": np.eye(4).tolist(), "b": [0, 0.05, 0.25, 0.0]},
            {"A": np.eye(4).tolist(), "b": [0, 0.30, 0.30, 0.10]},
        ],
        "frame_ids": [1, 2],
        "model_map": [0, 1],
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


class TestPipeline:
    def test_gen_learn_reproduce_optimize_compose(self, tmp_path, capsys):
        cfg = base_config(
            tmp_path,
            cost={"kind": "joint", "weight": 1.0},
            free_mask=[["alpha", "beta", "gamma"], ["alpha", "beta", "gamma"]],
            optimizer={"total_rollouts": 40, "rollouts_per_update": 10, "noise_std": 0.1},
        )
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])

        assert main(["gen-demos", "--config", str(path)]) == 0
        assert sorted(p.name for p in (out / "demos").glob("demo_*.csv"))
        assert main(["learn", "--config", str(path)]) == 0
        models = json.loads((out / "models.json").read_text())
        assert len(models["models"]) == 2
        assert len(models["models"][0]["weights"]) == 3

        assert main(["reproduce", "--config", str(path)]) == 0
        header, data = read_csv(out / "trajectory.csv")
        assert header == ["t", "x1", "x2", "x3", "cov_trace"]
        assert data.shape[0] == 40

        assert main(["optimize", "--config", str(path)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["final_cost"] <= summary["initial_cost"]
        assert (out / "optimized_frames.json").exists()
        header, curve = read_csv(out / "cost_curve.csv")
        assert header == ["update_index", "noise_free_cost", "batch_mean", "batch_min"]
        assert curve.shape[0] == 4
        header, joints = read_csv(out / "joints.csv")
        assert header == ["t", "q1", "q2", "q3", "q4", "q5", "x", "y", "z"]
        assert joints.shape[0] == 40

    def test_rerun_overwrites_identically(self, tmp_path):
        cfg = base_config(tmp_path)
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        first = (out / "models.json").read_bytes()
        assert main(["learn", "--config", str(path)]) == 0
        assert (out / "models.json").read_bytes() == first

    def test_demos_loadable_from_disk(self, tmp_path):
        cfg = base_config(tmp_path)
        path = write_config(tmp_path, cfg)
        assert main(["gen-demos", "--config", str(path)]) == 0
        on_disk = dict(cfg, demos={"kind": "path", "path": str(Path(cfg["output_dir"]) / "demos")})
        path2 = write_config(tmp_path, on_disk, "cfg2.json")
        assert main(["learn", "--config", str(path2)]) == 0
        # learning from the saved corpus gives the same models as generating inline
        direct = write_config(tmp_path, cfg, "cfg3.json")
        out = Path(cfg["output_dir"])
        from_disk = json.loads((out / "models.json").read_text())
        assert main(["learn", "--config", str(direct)]) == 0
        from_spec = json.loads((out / "models.json").read_text())
        assert from_disk == from_spec


class TestReproduceConfidences:
    def test_unit_confidences_match_unweighted(self, tmp_path):
        cfg = base_config(tmp_path)
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        assert main(["reproduce", "--config", str(path)]) == 0
        _, plain = read_csv(out / "trajectory.csv")

        cfg2 = base_config(tmp_path, confidences=[1.0, 1.0])
        path2 = write_config(tmp_path, cfg2, "cfg_conf.json")
        assert main(["reproduce", "--config", str(path2)]) == 0
        _, weighted = read_csv(out / "trajectory.csv")
        assert np.max(np.abs(plain - weighted)) <= 1e-12

    def test_inputs_override_sets_the_grid(self, tmp_path):
        cfg = base_config(tmp_path, inputs={"duration": 2.0, "steps": 25})
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        assert main(["reproduce", "--config", str(path)]) == 0
        _, data = read_csv(out / "trajectory.csv")
        assert data.shape[0] == 25
        assert data[-1, 0] == pytest.approx(2.0)

    def test_confidence_groups_write_one_file_each(self, tmp_path):
        cfg = base_config(
            tmp_path,
            confidence_groups={"a": [1.0, 0.9], "b": [1.0, 0.1]},
        )
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        assert main(["reproduce", "--config", str(path)]) == 0
        assert (out / "trajectory_a.csv").exists()
        assert (out / "trajectory_b.csv").exists()


class TestOptimizeBehavior:
    def test_zero_noise_keeps_frames(self, tmp_path):
        cfg = base_config(
            tmp_path,
            cost={"kind": "joint", "weight": 1.0},
            free_mask=[["alpha", "beta", "gamma"], ["alpha", "beta", "gamma"]],
            optimizer={"total_rollouts": 30, "rollouts_per_update": 10, "noise_std": 0.0},
        )
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        assert main(["optimize", "--config", str(path)]) == 0
        optimized = json.loads((out / "optimized_frames.json").read_text())
        for got, want in zip(optimized["frames"], cfg["frames"]):
            assert np.allclose(got["A"], want["A"], atol=1e-15)
            assert np.allclose(got["b"], want["b"], atol=1e-15)

    def test_parallel_matches_serial(self, tmp_path):
        cfg = base_config(
            tmp_path,
            cost={"kind": "joint", "weight": 1.0},
            free_mask=[["alpha", "beta", "gamma"], ["alpha", "beta", "gamma"]],
            optimizer={"total_rollouts": 30, "rollouts_per_update": 10, "noise_std": 0.1},
        )
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        assert main(["optimize", "--config", str(path)]) == 0
        serial = (out / "cost_curve.csv").read_bytes()
        assert main(["optimize", "--config", str(path), "--parallel", "3"]) == 0
        assert (out / "cost_curve.csv").read_bytes() == serial


class TestSelectFrames:
    def test_minimal_selection_run(self, tmp_path):
        cfg = base_config(
            tmp_path,
            train_frames={"mode": "times", "times": [1.0, 2.0]},
            frames=[
                {"A": np.eye(4).tolist(), "b": [0, 0.16, 0.31, 0.08]},
                {"A": np.eye(4).tolist(), "b": [0, 0.27, 0.36, 0.16]},
            ],
            model_map=[0, 1],
            cost={
                "kind": "via_point",
                "p_start": [0.16, 0.31, 0.08],
                "p_end": [0.27, 0.36, 0.16],
                "t_start": 1.0,
                "t_end": 2.0,
                "k_p1": 10.0,
                "k_p2": 80.0,
            },
            free_mask=[["alpha", "beta", "gamma"], ["alpha", "beta", "gamma"]],
            optimizer={"total_rollouts": 30, "rollouts_per_update": 10, "noise_std": 0.1},
            selection={"max_frames": 1, "runs_per_eval": 2},
        )
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        assert main(["select-frames", "--config", str(path)]) == 0
        report = json.loads((out / "selection_report.json").read_text())
        assert len(report["chosen"]) == 1
        assert (out / "round_1_costs.csv").exists()


class TestPlot:
    def test_trajectory_and_cost_curve_svg(self, tmp_path):
        cfg = base_config(
            tmp_path,
            cost={"kind": "joint", "weight": 1.0},
            free_mask=[["alpha", "beta", "gamma"], ["alpha", "beta", "gamma"]],
            optimizer={"total_rollouts": 20, "rollouts_per_update": 10, "noise_std": 0.05},
        )
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["learn", "--config", str(path)]) == 0
        assert main(["optimize", "--config", str(path)]) == 0
        plot_dir = tmp_path / "plots"
        rc = main([
            "plot", str(out / "trajectory.csv"), str(out / "cost_curve.csv"),
            "--config", str(path), "--out", str(plot_dir),
        ])
        assert rc == 0
        assert (plot_dir / "trajectory.svg").exists()
        assert (plot_dir / "cost_curve.svg").exists()
        assert (plot_dir / "trajectory.svg").read_text().lstrip().startswith("<?xml")


class TestErrorHandling:
    def test_bad_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["learn", "--config", str(path)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg = base_config(tmp_path)
        cfg["frobnicate"] = True
        path = write_config(tmp_path, cfg)
        assert main(["learn", "--config", str(path)]) == 2

    def test_missing_models_exits_2(self, tmp_path, capsys):
        cfg = base_config(tmp_path)
        path = write_config(tmp_path, cfg)
        assert main(["reproduce", "--config", str(path)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert "learn" in err["message"]

    def test_numerical_failure_exits_3(self, tmp_path, capsys):
        singular = np.eye(4)
        singular[2, 2] = 0.0
        cfg = base_config(
            tmp_path,
            train_frames={
                "mode": "explicit",
                "frames": [
                    {"A": singular.tolist(), "b": [0, 0, 0, 0]},
                    {"A": np.eye(4).tolist(), "b": [0, 0.3, 0.3, 0.1]},
                ],
            },
        )
        path = write_config(tmp_path, cfg)
        assert main(["learn", "--config", str(path)]) == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "SingularRotationError"

    def test_seed_override_changes_demos(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["demos"].pop("seed")  # fall back to the run seed
        path = write_config(tmp_path, cfg)
        out = Path(cfg["output_dir"])
        assert main(["gen-demos", "--config", str(path)]) == 0
        first = (out / "demos" / "demo_000.csv").read_bytes()
        assert main(["gen-demos", "--config", str(path), "--seed", "99"]) == 0
        assert (out / "demos" / "demo_000.csv").read_bytes() != first


class TestFixtureConfigs:
    @pytest.mark.parametrize(
        "name",
        ["reaching_confidence", "pole", "reach_point", "obstacle", "pick_place"],
    )
    def test_shipped_configs_parse(self, name):
        from importlib import resources
        from tpmove.config import parse_config

        raw = json.loads((resources.files("tpmove") / f"configs/{name}.json").read_text())
        cfg = parse_config(raw)
        assert cfg.task_frames
        # frame search stays lower dimensional than the per-component model space
        per_frame = 3 + len(cfg.block.output_dims)
        theta_dim = cfg.basis.n_basis * len(cfg.task_frames) * per_frame
        model_dim = cfg.n_components * len(cfg.task_frames) * cfg.block.dim
        assert theta_dim < model_dim

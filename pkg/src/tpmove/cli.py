"""Command-line surface: reproducible file-based experiment stages.

    tpmove gen-demos     --config cfg.json      write the demonstration CSVs
    tpmove learn         --config cfg.json      fit per-frame local models
    tpmove reproduce     --config cfg.json      fuse models under task frames
    tpmove optimize      --config cfg.json      search frame adjustments
    tpmove select-frames --config cfg.json      greedy forward frame search
    tpmove plot          --config cfg.json F..  render CSV/JSON outputs as SVG

Every command is deterministic given config + seed and overwrites its
outputs in place. Exit codes: 0 success, 2 configuration error, 3 numerical
failure; errors are emitted as one JSON object on stderr. Set TPMOVE_LOG to
DEBUG/INFO/... for diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfg_mod
from .arm import fk_path, track
from .config import ExperimentConfig, load_config
from .errors import ConfigError, Error
from .frames import LocalModel, TaskFrame, fit_local_models, frame_from_dict, frame_to_dict, reproduce_moments
from .gaussians import GMM, BlockSpec, Gaussian
from .policy import OptimizationProblem, optimize
from .selection import forward_select
from .demos import save_demos

log = logging.getLogger("tpmove")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# Artifact I/O
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_trajectory_csv(path: Path, times, means, covs=None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    means = np.asarray(means)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"] + [f"x{i + 1}" for i in range(means.shape[1])]
        if covs is not None:
            header.append("cov_trace")
        writer.writerow(header)
        for i, (t, row) in enumerate(zip(times, means)):
            cells = [f"{t:.17g}"] + [f"{v:.17g}" for v in row]
            if covs is not None:
                cells.append(f"{np.trace(covs[i]):.17g}")
            writer.writerow(cells)


def write_joints_csv(path: Path, times, q_seq, positions) -> None:
    """Tracked joint trajectory: t, q1..qn, then the executed x,y(,z)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    q_seq = np.asarray(q_seq)
    positions = np.asarray(positions)
    coords = ["x", "y", "z"][: positions.shape[1]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"q{i + 1}" for i in range(q_seq.shape[1])] + coords)
        for t, q, p in zip(times, q_seq, positions):
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in q] + [f"{v:.17g}" for v in p])


def write_cost_curve_csv(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update_index", "noise_free_cost", "batch_mean", "batch_min"])
        for r in records:
            writer.writerow(
                [r.update_index, f"{r.noise_free_cost:.17g}", f"{r.batch_mean:.17g}", f"{r.batch_min:.17g}"]
            )


def write_models_json(path: Path, models, train_frames, block: BlockSpec) -> None:
    payload = {
        "block": {"input": list(block.input_dims), "output": list(block.output_dims)},
        "models": [
            {
                "frame_id": m.frame_id,
                "train_frame": frame_to_dict(f),
                "weights": m.gmm.weights.tolist(),
                "means": [c.mean.tolist() for c in m.gmm.components],
                "covariances": [c.cov.tolist() for c in m.gmm.components],
            }
            for m, f in zip(models, train_frames)
        ],
    }
    _write_json(path, payload)


def read_models_json(path: Path) -> tuple[list[LocalModel], list[TaskFrame], BlockSpec]:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read models file {path}: {exc} (run 'learn' first)") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"models file {path} is not valid JSON: {exc}") from exc
    try:
        block = BlockSpec(tuple(payload["block"]["input"]), tuple(payload["block"]["output"]))
        models, frames = [], []
        for m in payload["models"]:
            comps = tuple(
                Gaussian(mu, covv) for mu, covv in zip(m["means"], m["covariances"])
            )
            models.append(LocalModel(m["frame_id"], GMM(m["weights"], comps), block))
            frames.append(frame_from_dict(m["train_frame"], block))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"models file {path} has unexpected structure: {exc}") from exc
    return models, frames, block


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def _mapped_models(cfg: ExperimentConfig, models):
    if not cfg.task_frames:
        raise ConfigError("this command needs a 'frames' list in the config")
    if len(cfg.model_map) != len(cfg.task_frames):
        raise ConfigError("model_map must have one entry per task frame")
    try:
        return [models[i] for i in cfg.model_map]
    except IndexError as exc:
        raise ConfigError(f"model_map references a missing model: {exc}") from exc


def cmd_gen_demos(cfg: ExperimentConfig) -> dict:
    demos = cfg_mod.build_demos(cfg)
    out = cfg.output_dir / "demos"
    paths = save_demos(demos, out)
    log.info("wrote %d demonstrations to %s", len(paths), out)
    return {"demos_dir": str(out), "count": len(paths), "steps": demos[0].n_steps}


def cmd_learn(cfg: ExperimentConfig) -> dict:
    demos = cfg_mod.build_demos(cfg)
    train_frames = cfg_mod.build_train_frames(cfg, demos)
    models = fit_local_models(
        demos,
        train_frames,
        cfg.n_components,
        cfg.block,
        frame_ids=list(range(1, len(train_frames) + 1)),
        **cfg.em_kwargs,
    )
    path = cfg.output_dir / "models.json"
    write_models_json(path, models, train_frames, cfg.block)
    log.info("fitted %d local models -> %s", len(models), path)
    return {"models": str(path), "frames": len(models), "components": cfg.n_components}


def cmd_reproduce(cfg: ExperimentConfig) -> dict:
    models, _, _ = read_models_json(cfg.output_dir / "models.json")
    demos = cfg_mod.build_demos(cfg)
    times = cfg_mod.build_inputs(cfg, demos)
    mapped = _mapped_models(cfg, models)
    outputs = {}

    def run(tag: str, confidences):
        means, covs = reproduce_moments(mapped, cfg.task_frames, times, confidences)
        name = "trajectory.csv" if tag == "" else f"trajectory_{tag}.csv"
        write_trajectory_csv(cfg.output_dir / name, times, means, covs)
        outputs[name] = str(cfg.output_dir / name)

    if cfg.confidence_groups:
        for label, conf in sorted(cfg.confidence_groups.items()):
            run(label, conf)
    else:
        run("", cfg.confidences)
    return {"outputs": outputs, "steps": int(len(times))}


def _build_problem(cfg: ExperimentConfig, models, times) -> OptimizationProblem:
    mapped = _mapped_models(cfg, models)
    cost = cfg_mod.build_cost(cfg, times)
    start, _ = reproduce_moments(mapped, cfg.task_frames, times[:2])
    q0 = cfg_mod.resolve_q0(cfg, start[0])
    return OptimizationProblem(
        models=tuple(mapped),
        frames=tuple(cfg.task_frames),
        inputs=times,
        cost=cost,
        arm=cfg.arm,
        q0=q0,
        free_mask=cfg.free_mask,
        basis=cfg.basis,
    )


def cmd_optimize(cfg: ExperimentConfig, n_workers: int = 1) -> dict:
    if cfg.optimizer is None:
        raise ConfigError("this command needs an 'optimizer' entry in the config")
    models, _, _ = read_models_json(cfg.output_dir / "models.json")
    demos = cfg_mod.build_demos(cfg)
    times = cfg_mod.build_inputs(cfg, demos)
    problem = _build_problem(cfg, models, times)
    result = optimize(problem, cfg.optimizer, n_workers=n_workers)

    frames_payload = [frame_to_dict(f) for f in result.final_frames]
    _write_json(cfg.output_dir / "optimized_frames.json", {"frames": frames_payload})
    write_trajectory_csv(cfg.output_dir / "trajectory.csv", times, result.final_trajectory)
    write_cost_curve_csv(cfg.output_dir / "cost_curve.csv", result.cost_curve)
    q_seq = track(problem.arm, problem.q0, result.final_trajectory, problem.tracking_damping)
    write_joints_csv(cfg.output_dir / "joints.csv", times, q_seq, fk_path(problem.arm, q_seq))
    summary = {
        "initial_cost": result.initial_cost,
        "final_cost": result.best_cost,
        "rollouts": result.n_rollouts,
    }
    _write_json(cfg.output_dir / "summary.json", summary)
    log.info("optimize: %.6g -> %.6g", result.initial_cost, result.best_cost)
    return summary


def cmd_select_frames(cfg: ExperimentConfig, n_workers: int = 1) -> dict:
    if cfg.optimizer is None:
        raise ConfigError("this command needs an 'optimizer' entry in the config")
    if cfg.selection_cfg is None:
        raise ConfigError("this command needs a 'selection' entry in the config")
    models, _, _ = read_models_json(cfg.output_dir / "models.json")
    demos = cfg_mod.build_demos(cfg)
    times = cfg_mod.build_inputs(cfg, demos)
    problem = _build_problem(cfg, models, times)
    candidates = [
        (LocalModel(fid, m.gmm, m.spec), f)
        for fid, m, f in zip(cfg.frame_ids, problem.models, problem.frames)
    ]
    report = forward_select(
        candidates,
        problem,
        cfg.optimizer,
        max_frames=int(cfg.selection_cfg.get("max_frames", 2)),
        runs_per_eval=int(cfg.selection_cfg.get("runs_per_eval", 3)),
        n_workers=n_workers,
    )
    _write_json(cfg.output_dir / "selection_report.json", report.to_dict())
    for k, rnd in enumerate(report.rounds, start=1):
        path = cfg.output_dir / f"round_{k}_costs.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            labels = ["+".join(str(i) for i in e.frame_ids) for e in rnd.evaluations]
            writer.writerow(["update_index"] + labels)
            curves = [e.mean_curve for e in rnd.evaluations]
            for u in range(len(curves[0])):
                writer.writerow([u] + [f"{c[u]:.17g}" for c in curves])
    return {"chosen": list(report.chosen), "rounds": len(report.rounds)}


def cmd_plot(cfg: ExperimentConfig | None, inputs, out_dir: Path) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for item in inputs:
        path = Path(item)
        if not path.exists():
            raise ConfigError(f"plot input {path} does not exist")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        fig, ax = plt.subplots(figsize=(6, 4.5))
        if header[0] == "update_index":
            for col in range(1, len(header)):
                ax.plot(data[:, 0], data[:, col], label=header[col])
            ax.set_xlabel("update")
            ax.set_ylabel("cost")
            ax.legend(fontsize=8)
        else:
            ax.plot(data[:, 1], data[:, 2], "-", lw=1.5, label=path.stem)
            ax.plot(data[0, 1], data[0, 2], "k*", ms=10)
            ax.plot(data[-1, 1], data[-1, 2], "ko", ms=6, mfc="none")
            if cfg is not None:
                for frame in cfg.task_frames:
                    _, b_o = frame.output_blocks()
                    ax.plot(b_o[0], b_o[1], "s", ms=8, mfc="none")
                if cfg.cost_cfg and cfg.cost_cfg.get("kind") == "obstacle":
                    corners = np.asarray(cfg_mod.build_cost(cfg, data[:, 0]).obstacle.corners)
                    loop = np.vstack([corners, corners[:1]])
                    ax.plot(loop[:, 0], loop[:, 1], "r-", lw=1)
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
            ax.set_aspect("equal", adjustable="datalim")
            ax.legend(fontsize=8)
        target = out_dir / (path.stem + ".svg")
        fig.savefig(target, format="svg")
        plt.close(fig)
        written.append(str(target))
    return {"plots": written}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpmove", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-demos", "learn", "reproduce", "optimize", "select-frames"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--parallel", type=int, default=1)
    p = sub.add_parser("plot")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="plots")
    p.add_argument("--parallel", type=int, default=1)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TPMOVE_LOG", "WARNING").upper())
    args = _make_parser().parse_args(argv)
    try:
        if args.command == "plot":
            cfg = load_config(args.config, args.seed) if args.config else None
            result = cmd_plot(cfg, args.inputs, Path(args.out))
        else:
            cfg = load_config(args.config, args.seed, args.out)
            handler = {
                "gen-demos": cmd_gen_demos,
                "learn": cmd_learn,
                "reproduce": cmd_reproduce,
            }.get(args.command)
            if handler is not None:
                result = handler(cfg)
            elif args.command == "optimize":
                result = cmd_optimize(cfg, n_workers=args.parallel)
            else:
                result = cmd_select_frames(cfg, n_workers=args.parallel)
    except ConfigError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CONFIG
    except (Error, np.linalg.LinAlgError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_NUMERICAL
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

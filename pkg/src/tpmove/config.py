"""Experiment configuration: JSON schema parsing and object assembly.

A config file describes one experiment end to end: the demonstration
corpus (synthetic spec or directory of CSVs), the training frames, the
task frames used for reproduction, the arm, the cost, the optimizer, and
optionally a frame-selection stage. Commands consume the pieces they need;
every command is deterministic given the config plus seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import ArmModel, CostSpec, Obstacle, solve_position
from .demos import DemoSpec, endpoint_frames, frames_at_times, generate_pick_place, generate_reaching, load_demos
from .errors import ConfigError
from .frames import TaskFrame, frame_from_dict
from .gaussians import BlockSpec
from .policy import BasisFamily, OptimizerConfig

COORD_NAMES_3D = ("alpha", "beta", "gamma", "dx", "dy", "dz")
COORD_NAMES_2D = ("alpha", "beta", "gamma", "dx", "dy")

_TOP_LEVEL_KEYS = {
    "seed", "output_dir", "demos", "block", "n_components", "em", "train_frames",
    "frames", "frame_ids", "model_map", "confidences", "confidence_groups",
    "inputs", "arm", "q0", "cost", "free_mask", "optimizer", "selection", "extras",
}


@dataclass
class ExperimentConfig:
    raw: dict
    path: Path | None
    seed: int
    output_dir: Path
    block: BlockSpec
    n_components: int
    em_kwargs: dict
    demo_cfg: dict
    train_frames_cfg: dict
    task_frames: list[TaskFrame]
    frame_ids: list
    model_map: list[int]
    confidences: np.ndarray | None
    confidence_groups: dict | None
    arm: ArmModel
    q0_cfg: object
    cost_cfg: dict | None
    free_mask: np.ndarray | None
    optimizer: OptimizerConfig | None
    basis: BasisFamily
    selection_cfg: dict | None
    inputs_cfg: dict
    extras: dict = field(default_factory=dict)


def _require(cfg: dict, key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where} is missing required key {key!r}")
    return cfg[key]


def _as_point(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size not in (2, 3):
        raise ConfigError(f"{name} must be a 2-D or 3-D point")
    return arr


def load_config(path, seed_override=None, out_override=None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw, path, seed_override, out_override)


def parse_config(raw: dict, path=None, seed_override=None, out_override=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    seed = int(raw.get("seed", 0)) if seed_override is None else int(seed_override)
    output_dir = Path(out_override if out_override is not None else raw.get("output_dir", "out"))

    block_cfg = raw.get("block", {"input": [0], "output": [1, 2, 3]})
    try:
        block = BlockSpec(tuple(block_cfg["input"]), tuple(block_cfg["output"]))
    except Exception as exc:
        raise ConfigError(f"invalid block spec: {exc}") from exc

    demo_cfg = _require(raw, "demos")
    if not isinstance(demo_cfg, dict):
        raise ConfigError("'demos' must be an object")

    n_components = int(raw.get("n_components", 4))
    em_kwargs = dict(raw.get("em", {"init": "time_bins"}))

    train_frames_cfg = raw.get("train_frames", {"mode": "endpoints"})

    frames_raw = raw.get("frames", [])
    task_frames = []
    for i, fdict in enumerate(frames_raw):
        try:
            task_frames.append(frame_from_dict(fdict, block))
        except Exception as exc:
            raise ConfigError(f"invalid frame {i}: {exc}") from exc

    frame_ids = list(raw.get("frame_ids", range(1, len(task_frames) + 1)))
    if len(frame_ids) != len(task_frames):
        raise ConfigError("frame_ids must match the number of frames")
    model_map = [int(i) for i in raw.get("model_map", range(len(task_frames)))]

    confidences = _parse_confidences(raw.get("confidences"), len(task_frames))
    groups_raw = raw.get("confidence_groups")
    confidence_groups = None
    if groups_raw is not None:
        if not isinstance(groups_raw, dict):
            raise ConfigError("'confidence_groups' must map labels to confidence lists")
        confidence_groups = {
            str(k): _parse_confidences(v, len(task_frames)) for k, v in groups_raw.items()
        }

    arm = _parse_arm(raw.get("arm"))
    q0_cfg = raw.get("q0", "auto")
    cost_cfg = raw.get("cost")
    free_mask = _parse_free_mask(raw.get("free_mask"), len(task_frames), len(block.output_dims))

    opt_raw = raw.get("optimizer")
    optimizer = None
    basis = BasisFamily.constant()
    if opt_raw is not None:
        opt_raw = dict(opt_raw)
        n_basis = int(opt_raw.pop("basis", 1))
        basis = BasisFamily.rbf(n_basis) if n_basis > 1 else BasisFamily.constant()
        noise_std = opt_raw.pop("noise_std", 0.1)
        if isinstance(noise_std, list):
            noise_std = np.asarray(noise_std, dtype=float)
        try:
            optimizer = OptimizerConfig(
                total_rollouts=int(_require(opt_raw, "total_rollouts", "'optimizer'")),
                rollouts_per_update=int(opt_raw.get("rollouts_per_update", 10)),
                kappa=float(opt_raw.get("kappa", 10.0)),
                noise_std=noise_std,
                seed=int(opt_raw.get("seed", seed)),
                eval_noise_free_every=int(opt_raw.get("eval_noise_free_every", 1)),
                noise_decay=float(opt_raw.get("noise_decay", 1.0)),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid optimizer config: {exc}") from exc

    return ExperimentConfig(
        raw=raw,
        path=path,
        seed=seed,
        output_dir=output_dir,
        block=block,
        n_components=n_components,
        em_kwargs=em_kwargs,
        demo_cfg=demo_cfg,
        train_frames_cfg=train_frames_cfg,
        task_frames=task_frames,
        frame_ids=frame_ids,
        model_map=model_map,
        confidences=confidences,
        confidence_groups=confidence_groups,
        arm=arm,
        q0_cfg=q0_cfg,
        cost_cfg=cost_cfg,
        free_mask=free_mask,
        optimizer=optimizer,
        basis=basis,
        selection_cfg=raw.get("selection"),
        inputs_cfg=raw.get("inputs", {}),
        extras=dict(raw.get("extras", {})),
    )


def _parse_confidences(value, n_frames: int):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and arr.shape[0] == n_frames:
        pass
    elif arr.ndim == 2 and arr.shape[0] == n_frames:
        pass
    else:
        raise ConfigError(
            f"confidences must have one entry (or row) per frame ({n_frames})"
        )
    if np.any(arr <= 0) or np.any(arr > 1):
        raise ConfigError("confidences must lie in (0, 1]")
    return arr


def _parse_arm(arm_cfg) -> ArmModel:
    if arm_cfg is None:
        return ArmModel.default_spatial()
    try:
        return ArmModel(
            link_lengths=arm_cfg["link_lengths"],
            joint_limits=arm_cfg["joint_limits"],
            base=arm_cfg.get("base"),
            base_rotation=arm_cfg.get("base_rotation"),
            variant=arm_cfg.get("variant", "spatial"),
        )
    except Exception as exc:
        raise ConfigError(f"invalid arm: {exc}") from exc


def _parse_free_mask(value, n_frames: int, out_dim: int):
    if value is None:
        return None
    names = COORD_NAMES_3D if out_dim == 3 else COORD_NAMES_2D[: 3 + out_dim]
    if len(value) != n_frames:
        raise ConfigError(f"free_mask must list one entry per frame ({n_frames})")
    mask = np.zeros((n_frames, 3 + out_dim), dtype=bool)
    for j, entry in enumerate(value):
        for item in entry:
            if isinstance(item, bool):
                raise ConfigError("free_mask entries must be coordinate names")
            if item not in names:
                raise ConfigError(f"unknown coordinate {item!r}; valid: {names}")
            mask[j, names.index(item)] = True
    return mask


# ---------------------------------------------------------------------------
# Object assembly
# ---------------------------------------------------------------------------

def build_demos(cfg: ExperimentConfig):
    d = cfg.demo_cfg
    kind = d.get("kind", "reaching")
    if kind == "path":
        directory = Path(_require(d, "path", "'demos'"))
        if cfg.path is not None and not directory.is_absolute():
            directory = cfg.path.parent / directory
        return load_demos(directory)
    if kind == "reaching":
        spec = DemoSpec(
            start=tuple(_as_point(_require(d, "start", "'demos'"), "demos.start")),
            target=tuple(_as_point(_require(d, "target", "'demos'"), "demos.target")),
            duration=float(d.get("duration", 2.0)),
            steps=int(d.get("steps", 100)),
            count=int(d.get("count", 10)),
            curvature=float(d.get("curvature", 0.0)),
            noise_std=float(d.get("noise_std", 0.0)),
            seed=int(d.get("seed", cfg.seed)),
        )
        return generate_reaching(spec)
    if kind == "pick_place":
        return generate_pick_place(
            start=_as_point(_require(d, "start", "'demos'"), "demos.start"),
            via=_as_point(_require(d, "via", "'demos'"), "demos.via"),
            target=_as_point(_require(d, "target", "'demos'"), "demos.target"),
            t_via=float(_require(d, "t_via", "'demos'")),
            duration=float(d.get("duration", 10.0)),
            steps=int(d.get("steps", 100)),
            count=int(d.get("count", 8)),
            curvature=float(d.get("curvature", 0.0)),
            noise_std=float(d.get("noise_std", 0.0)),
            seed=int(d.get("seed", cfg.seed)),
        )
    raise ConfigError(f"unknown demos kind {kind!r}")


def build_train_frames(cfg: ExperimentConfig, demos) -> list[TaskFrame]:
    tf = cfg.train_frames_cfg
    mode = tf.get("mode", "endpoints")
    if mode == "endpoints":
        return list(endpoint_frames(demos))
    if mode == "times":
        return frames_at_times(demos, [float(t) for t in _require(tf, "times", "'train_frames'")])
    if mode == "explicit":
        return [frame_from_dict(f, cfg.block) for f in _require(tf, "frames", "'train_frames'")]
    raise ConfigError(f"unknown train_frames mode {mode!r}")


def build_inputs(cfg: ExperimentConfig, demos) -> np.ndarray:
    if cfg.inputs_cfg:
        duration = float(_require(cfg.inputs_cfg, "duration", "'inputs'"))
        steps = int(_require(cfg.inputs_cfg, "steps", "'inputs'"))
        return np.linspace(0.0, duration, steps)
    return demos[0].points[:, 0].copy()


def resolve_q0(cfg: ExperimentConfig, start_point) -> np.ndarray:
    if isinstance(cfg.q0_cfg, (list, tuple)):
        q0 = np.asarray(cfg.q0_cfg, dtype=float)
        if q0.shape != (cfg.arm.n_joints,):
            raise ConfigError(f"q0 must have {cfg.arm.n_joints} entries")
        return q0
    if cfg.q0_cfg == "auto":
        neutral = _neutral_pose(cfg.arm)
        return solve_position(cfg.arm, neutral, np.asarray(start_point, dtype=float))
    raise ConfigError("q0 must be a joint list or 'auto'")


def _neutral_pose(arm: ArmModel) -> np.ndarray:
    # A bent elbow-like pose well away from the stretched singularity.
    template = np.array([0.3, 0.5, 0.5, -0.4, 0.3, 0.2, -0.2, 0.1])
    pose = template[: arm.n_joints] if arm.n_joints <= template.size else np.resize(
        template, arm.n_joints
    )
    return arm.clamp(pose)


def build_cost(cfg: ExperimentConfig, times: np.ndarray) -> CostSpec:
    c = cfg.cost_cfg
    if c is None:
        raise ConfigError("this command needs a 'cost' entry in the config")
    kind = _require(c, "kind", "'cost'")
    weight = c.get("weight", 1.0)
    if kind == "joint":
        return CostSpec(kind="joint", weight=weight)
    if kind == "obstacle":
        try:
            obstacle = Obstacle(
                center=_require(c, "center", "'cost'"),
                axes=_require(c, "axes", "'cost'"),
                half_extents=_require(c, "half_extents", "'cost'"),
            )
        except Exception as exc:
            raise ConfigError(f"invalid obstacle: {exc}") from exc
        return CostSpec(
            kind="obstacle",
            weight=weight,
            obstacle=obstacle,
            k1=float(c.get("k1", 5.0)),
            k2=float(c.get("k2", 2.0)),
            k3=float(c.get("k3", 1.0)),
            k4=float(c.get("k4", 10.0)),
        )
    if kind == "via_point":
        t_start = float(_require(c, "t_start", "'cost'"))
        t_end = float(_require(c, "t_end", "'cost'"))
        idx_start = int(np.argmin(np.abs(times - t_start)))
        idx_end = int(np.argmin(np.abs(times - t_end)))
        return CostSpec(
            kind="via_point",
            weight=weight,
            p_start=_as_point(_require(c, "p_start", "'cost'"), "cost.p_start"),
            p_end=_as_point(_require(c, "p_end", "'cost'"), "cost.p_end"),
            idx_start=idx_start,
            idx_end=idx_end,
            k_p1=float(c.get("k_p1", 1.0)),
            k_p2=float(c.get("k_p2", 1.0)),
        )
    raise ConfigError(f"unknown cost kind {kind!r}")

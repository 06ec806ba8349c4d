"""Episodic stochastic search over frame adjustments.

One rollout: sample a constant exploration noise, turn the policy output
into per-frame rotation/displacement adjustments, re-parameterize the
frames, fuse the (cached) local conditionals into a global trajectory,
track it on the arm, and score the tracked motion. Every H rollouts the
parameters move by an exponentiated-cost-weighted average of the noise:

    theta <- theta + sum_h w_h eps_h,   w_h = exp(-kappa S~_h) / sum(...)

where S~ are the batch costs min-max normalized to [0, 1], so kappa is
scale-free. The best noise-free parameters seen are reported, since the
update itself is not monotone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .arm import ArmModel, CostSpec, fk_path, track
from .errors import (
    BudgetTooSmallError,
    DimensionMismatchError,
    LengthMismatchError,
    NonFiniteCostError,
)
from .frames import (
    FrameAdjustment,
    TaskFrame,
    fuse_moment_arrays,
    local_input_sequence,
    output_block_sequence,
    rotation_for_dim,
)
from .gaussians import conditional_moments

ADJ_ANGLES = 3  # rotation coordinates per frame; displacement adds the output dim


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BasisFamily:
    """Normalized basis over normalized time in [0, 1].

    The constant family (B = 1) yields time-invariant adjustments; the RBF
    family blends B parameter blocks with normalized Gaussian bumps.
    """

    centers: np.ndarray
    width: float

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float).reshape(-1)
        if centers.size == 0:
            raise DimensionMismatchError("basis needs at least one center")
        object.__setattr__(self, "centers", _freeze(centers))
        object.__setattr__(self, "width", float(self.width))

    @classmethod
    def constant(cls) -> "BasisFamily":
        return cls(np.array([0.5]), 1.0)

    @classmethod
    def rbf(cls, n_basis: int, width: float | None = None) -> "BasisFamily":
        if n_basis < 1:
            raise DimensionMismatchError("need at least one basis function")
        if n_basis == 1:
            return cls.constant()
        centers = np.linspace(0.0, 1.0, n_basis)
        if width is None:
            width = 0.5 * (centers[1] - centers[0])
        return cls(centers, width)

    @property
    def n_basis(self) -> int:
        return self.centers.shape[0]

    def matrix(self, t_norm) -> np.ndarray:
        """Basis activations for times (N,), normalized to sum to 1 per row."""
        t = np.atleast_1d(np.asarray(t_norm, dtype=float))
        if self.n_basis == 1:
            return np.ones((t.shape[0], 1))
        act = np.exp(-0.5 * ((t[:, None] - self.centers[None, :]) / self.width) ** 2)
        return act / act.sum(axis=1, keepdims=True)

    def weights(self, t_norm: float) -> np.ndarray:
        return self.matrix([t_norm])[0]


@dataclass(frozen=True, eq=False)
class Policy:
    """Flat parameter vector theta over B basis blocks of n_coords each."""

    theta: np.ndarray
    basis: BasisFamily
    n_coords: int

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise DimensionMismatchError("policy parameters must be finite")
        if theta.shape[0] != self.basis.n_basis * self.n_coords:
            raise LengthMismatchError(
                f"theta has length {theta.shape[0]}, expected "
                f"{self.basis.n_basis} x {self.n_coords}"
            )
        object.__setattr__(self, "theta", _freeze(theta))


def policy_action(policy: Policy, t_norm: float, epsilon=None) -> np.ndarray:
    """Evaluate the policy at normalized time: a = Phi(t) (theta + eps)."""
    if not (0.0 <= t_norm <= 1.0):
        raise ValueError(f"t_norm must lie in [0, 1], got {t_norm}")
    theta = policy.theta
    if epsilon is not None:
        eps = np.asarray(epsilon, dtype=float).reshape(-1)
        if eps.shape != theta.shape:
            raise LengthMismatchError("epsilon must match theta's shape")
        theta = theta + eps
    blocks = theta.reshape(policy.basis.n_basis, policy.n_coords)
    return policy.basis.weights(t_norm) @ blocks


def decode_adjustments(action, n_frames: int, out_dim: int, free_mask=None) -> list[FrameAdjustment]:
    """Split a flat action into per-frame adjustments, zeroing masked coordinates.

    Layout per frame: (alpha, beta, gamma, d_1..d_{out_dim}), frames
    concatenated in order. Angles are wrapped to (-pi, pi].
    """
    per_frame = ADJ_ANGLES + out_dim
    a = np.asarray(action, dtype=float).reshape(-1)
    if a.shape[0] != n_frames * per_frame:
        raise LengthMismatchError(
            f"action length {a.shape[0]} != {n_frames} frames x {per_frame} coords"
        )
    mask = _normalize_mask(free_mask, n_frames, out_dim)
    a = np.where(mask.reshape(-1), a, 0.0)
    out = []
    for j in range(n_frames):
        block = a[j * per_frame : (j + 1) * per_frame]
        out.append(FrameAdjustment(block[:ADJ_ANGLES], block[ADJ_ANGLES:]))
    return out


def _normalize_mask(free_mask, n_frames: int, out_dim: int) -> np.ndarray:
    per_frame = ADJ_ANGLES + out_dim
    if free_mask is None:
        return np.ones((n_frames, per_frame), dtype=bool)
    mask = np.asarray(free_mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask.reshape(n_frames, per_frame) if mask.size == n_frames * per_frame else mask
    if mask.shape != (n_frames, per_frame):
        raise LengthMismatchError(
            f"free mask must have shape ({n_frames}, {per_frame}), got {mask.shape}"
        )
    return mask


@dataclass(frozen=True, eq=False)
class Rollout:
    """One episode: constant exploration noise, scalar cost, optional trajectory."""

    epsilon: np.ndarray
    cost: float
    trajectory: np.ndarray | None = None


def pi2_weights(costs, kappa: float) -> np.ndarray:
    """Batch weights exp(-kappa S~) / sum, with S~ the min-max normalized costs.

    The normalization makes the weights invariant to shifting or scaling
    all costs, so kappa needs no per-task tuning.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    costs = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(costs)):
        raise NonFiniteCostError(f"rollout costs contain non-finite values: {costs}")
    span = costs.max() - costs.min()
    norm = (costs - costs.min()) / span if span > 0 else np.zeros_like(costs)
    w = np.exp(-kappa * norm)
    return w / w.sum()


def pi2_update(theta, rollouts, kappa: float) -> np.ndarray:
    """Exponentiated-cost-weighted parameter update over one batch."""
    rollouts = list(rollouts)
    if len(rollouts) < 2:
        raise ValueError("need at least 2 rollouts per update")
    w = pi2_weights([r.cost for r in rollouts], kappa)
    eps = np.stack([r.epsilon for r in rollouts])
    return np.asarray(theta, dtype=float) + w @ eps


@dataclass(frozen=True, eq=False)
class OptimizerConfig:
    """Batch size, exploration scale, budget and seed of one search run."""

    total_rollouts: int
    rollouts_per_update: int = 10
    kappa: float = 10.0
    noise_std: object = 0.1
    seed: int | None = None
    eval_noise_free_every: int = 1
    noise_decay: float = 1.0

    def __post_init__(self):
        if self.rollouts_per_update < 2:
            raise ValueError("need at least 2 rollouts per update")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.total_rollouts < self.rollouts_per_update:
            raise BudgetTooSmallError(
                f"budget {self.total_rollouts} is below one batch of {self.rollouts_per_update}"
            )
        if self.eval_noise_free_every < 1:
            raise ValueError("eval_noise_free_every must be >= 1")
        if not (0.0 < self.noise_decay <= 1.0):
            raise ValueError("noise_decay must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class OptimizationProblem:
    """Everything a rollout needs: models, frames, inputs, cost, arm, start pose.

    free_mask selects, per frame, which of the 3 + D_o adjustment
    coordinates are searched; masked coordinates stay zero.
    """

    models: tuple
    frames: tuple
    inputs: np.ndarray
    cost: CostSpec
    arm: ArmModel
    q0: np.ndarray
    free_mask: np.ndarray | None = None
    basis: BasisFamily = field(default_factory=BasisFamily.constant)
    tracking_damping: float = 1e-6

    def __post_init__(self):
        models = tuple(self.models)
        frames = tuple(self.frames)
        if len(models) != len(frames) or not models:
            raise DimensionMismatchError(
                f"{len(models)} models for {len(frames)} frames (need >= 1 matching pair)"
            )
        out_dim = len(frames[0].spec.output_dims)
        mask = _normalize_mask(self.free_mask, len(frames), out_dim)
        if not mask.any():
            raise DimensionMismatchError("free mask leaves no searchable coordinate")
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        if inputs.shape[0] < 2:
            raise DimensionMismatchError("need at least two input steps")
        q0 = np.asarray(self.q0, dtype=float).reshape(-1)
        if q0.shape[0] != self.arm.n_joints:
            raise DimensionMismatchError("q0 does not match the arm's joint count")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "inputs", _freeze(inputs))
        object.__setattr__(self, "free_mask", mask)
        object.__setattr__(self, "q0", _freeze(q0))

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def out_dim(self) -> int:
        return len(self.frames[0].spec.output_dims)

    @property
    def n_coords(self) -> int:
        return self.n_frames * (ADJ_ANGLES + self.out_dim)

    @property
    def theta_dim(self) -> int:
        return self.basis.n_basis * self.n_coords


@dataclass(frozen=True, eq=False)
class UpdateRecord:
    """Cost bookkeeping for one parameter update."""

    update_index: int
    noise_free_cost: float
    batch_mean: float
    batch_min: float
    best_so_far: float


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    best_theta: np.ndarray
    best_cost: float
    initial_cost: float
    cost_curve: tuple[UpdateRecord, ...]
    final_trajectory: np.ndarray
    n_rollouts: int
    final_frames: tuple | None = None
    final_models: tuple | None = None

    @property
    def noise_free_costs(self) -> np.ndarray:
        return np.array([r.noise_free_cost for r in self.cost_curve])


class _FrameRollouts:
    """Cached rollout evaluator: local conditionals never depend on adjustments."""

    def __init__(self, problem: OptimizationProblem):
        self.problem = problem
        n = problem.inputs.shape[0]
        self.n_steps = n
        loc_means, loc_covs, base_a, base_b = [], [], [], []
        for model, frame in zip(problem.models, problem.frames):
            loc = local_input_sequence(frame, problem.inputs)
            m, c = conditional_moments(model.gmm, model.spec, loc)
            a_seq, b_seq = output_block_sequence(frame, n)
            loc_means.append(m)
            loc_covs.append(c)
            base_a.append(np.array(a_seq))
            base_b.append(np.array(b_seq))
        self.loc_means = np.stack(loc_means)
        self.loc_covs = np.stack(loc_covs)
        self.base_a = np.stack(base_a)
        self.base_b = np.stack(base_b)
        self.t_norm = np.linspace(0.0, 1.0, n)
        self.phi = problem.basis.matrix(self.t_norm)

    def dim(self) -> int:
        return self.problem.theta_dim

    def _adjusted_blocks(self, vector: np.ndarray):
        """Adjusted output blocks (P, N, D_o, D_o), (P, N, D_o) for theta + eps."""
        prob = self.problem
        p, d_o = prob.n_frames, prob.out_dim
        per_frame = ADJ_ANGLES + d_o
        if prob.basis.n_basis == 1:
            adjs = decode_adjustments(vector, p, d_o, prob.free_mask)
            rots = np.stack([rotation_for_dim(a.angles, d_o) for a in adjs])
            disps = np.stack([a.displacement for a in adjs])
            a_hat = np.einsum("pnde,pef->pndf", self.base_a, rots)
            b_hat = np.einsum("pnde,pe->pnd", self.base_a, disps) + self.base_b
            return a_hat, b_hat
        actions = self.phi @ vector.reshape(prob.basis.n_basis, prob.n_coords)
        a_hat = np.empty_like(self.base_a)
        b_hat = np.empty_like(self.base_b)
        for t in range(self.n_steps):
            adjs = decode_adjustments(actions[t], p, d_o, prob.free_mask)
            for j, adj in enumerate(adjs):
                rot = rotation_for_dim(adj.angles, d_o)
                a_hat[j, t] = self.base_a[j, t] @ rot
                b_hat[j, t] = self.base_a[j, t] @ adj.displacement + self.base_b[j, t]
        return a_hat, b_hat

    def trajectory(self, vector: np.ndarray) -> np.ndarray:
        a_hat, b_hat = self._adjusted_blocks(vector)
        means = np.einsum("pnde,pne->pnd", a_hat, self.loc_means) + b_hat
        covs = np.einsum("pnde,pnef,pngf->pndg", a_hat, self.loc_covs, a_hat)
        fused_mean, _ = fuse_moment_arrays(means, covs)
        return fused_mean

    def evaluate(self, vector: np.ndarray) -> tuple[float, np.ndarray]:
        traj = self.trajectory(vector)
        prob = self.problem
        q_seq = track(prob.arm, prob.q0, traj, prob.tracking_damping)
        cost = prob.cost.evaluate(fk_path(prob.arm, q_seq), q_seq)
        return float(cost), traj

    def final_frames(self, vector: np.ndarray) -> tuple[TaskFrame, ...]:
        """Frames re-parameterized by the policy output.

        Constant-basis policies over static frames yield static frames;
        otherwise the per-step adjusted blocks become a per-step frame.
        """
        prob = self.problem
        a_hat, b_hat = self._adjusted_blocks(vector)
        frames = []
        for j, frame in enumerate(prob.frames):
            spec = frame.spec
            if prob.basis.n_basis == 1 and not frame.is_time_varying:
                a_i, b_i = frame.input_blocks()
                frames.append(TaskFrame.from_blocks(a_i, b_i, a_hat[j, 0], b_hat[j, 0], spec))
                continue
            d = spec.dim
            idx_i, idx_o = list(spec.input_dims), list(spec.output_dims)
            a_seq = np.zeros((self.n_steps, d, d))
            b_seq = np.zeros((self.n_steps, d))
            for t in range(self.n_steps):
                a_i, b_i = frame.input_blocks(t)
                a_seq[t][np.ix_(idx_i, idx_i)] = a_i
                a_seq[t][np.ix_(idx_o, idx_o)] = a_hat[j, t]
                b_seq[t][idx_i] = b_i
                b_seq[t][idx_o] = b_hat[j, t]
            frames.append(TaskFrame(a_seq, b_seq, spec))
        return tuple(frames)


def run_episodic_search(evaluate, dim: int, config: OptimizerConfig, noise_scale,
                        theta0=None, n_workers: int = 1):
    """Generic batched search loop shared by the frame and model optimizers.

    evaluate(vector) -> (cost, trajectory) must be a pure function, so the
    pre-drawn noise makes serial and threaded schedules agree exactly.

    Returns (best_theta, best_cost, best_trajectory, initial_cost, records,
    n_rollouts).
    """
    rng = np.random.default_rng(config.seed)
    theta = np.zeros(dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    if theta.shape != (dim,):
        raise LengthMismatchError(f"theta0 has shape {theta.shape}, expected ({dim},)")
    scale = np.broadcast_to(np.asarray(noise_scale, dtype=float), (dim,)).copy()
    if np.any(scale < 0):
        raise ValueError("noise scales must be nonnegative")

    h = config.rollouts_per_update
    n_updates = config.total_rollouts // h
    best_cost, best_traj = evaluate(theta)
    initial_cost = best_cost
    best_theta = theta.copy()
    records = []
    pool = ThreadPoolExecutor(n_workers) if n_workers > 1 else None
    try:
        for u in range(n_updates):
            eps = rng.standard_normal((h, dim)) * (scale * config.noise_decay**u)
            candidates = [theta + e for e in eps]
            if pool is None:
                outcomes = [evaluate(c) for c in candidates]
            else:
                outcomes = list(pool.map(evaluate, candidates))
            costs = [c for c, _ in outcomes]
            theta = pi2_update(theta, [Rollout(e, c) for e, c in zip(eps, costs)], config.kappa)
            if (u + 1) % config.eval_noise_free_every == 0 or u == n_updates - 1:
                nf_cost, nf_traj = evaluate(theta)
                if nf_cost < best_cost:
                    best_cost, best_theta, best_traj = nf_cost, theta.copy(), nf_traj
                records.append(
                    UpdateRecord(u, nf_cost, float(np.mean(costs)), float(np.min(costs)), best_cost)
                )
    finally:
        if pool is not None:
            pool.shutdown()
    n_rollouts = n_updates * h + 1 + len(records)
    return best_theta, best_cost, best_traj, initial_cost, tuple(records), n_rollouts


def optimize(problem: OptimizationProblem, config: OptimizerConfig,
             theta0=None, n_workers: int = 1) -> OptimizationResult:
    """Search frame adjustments minimizing the problem's cost.

    Exploration noise is sampled per theta coordinate from the config's
    noise_std (a scalar, one value per frame coordinate, or a full vector);
    masked coordinates get zero noise. Deterministic given the seed.
    """
    ev = _FrameRollouts(problem)
    scale = _expand_noise_std(config.noise_std, problem)
    best_theta, best_cost, best_traj, initial_cost, records, n_rollouts = run_episodic_search(
        ev.evaluate, ev.dim(), config, scale, theta0, n_workers
    )
    return OptimizationResult(
        best_theta=best_theta,
        best_cost=best_cost,
        initial_cost=initial_cost,
        cost_curve=records,
        final_trajectory=best_traj,
        n_rollouts=n_rollouts,
        final_frames=ev.final_frames(best_theta),
    )


def _expand_noise_std(noise_std, problem: OptimizationProblem) -> np.ndarray:
    per_frame = ADJ_ANGLES + problem.out_dim
    std = np.asarray(noise_std, dtype=float)
    if std.ndim == 0:
        full = np.full(problem.theta_dim, float(std))
    elif std.shape == (per_frame,):
        full = np.tile(np.tile(std, problem.n_frames), problem.basis.n_basis)
    elif std.shape == (problem.n_coords,):
        full = np.tile(std, problem.basis.n_basis)
    elif std.shape == (problem.theta_dim,):
        full = std.copy()
    else:
        raise LengthMismatchError(
            f"noise_std shape {std.shape} fits none of: scalar, ({per_frame},), "
            f"({problem.n_coords},), ({problem.theta_dim},)"
        )
    mask = np.tile(problem.free_mask.reshape(-1), problem.basis.n_basis)
    return np.where(mask, full, 0.0)

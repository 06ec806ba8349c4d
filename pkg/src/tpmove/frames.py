"""Affine task-frame machinery.

A task frame is an invertible block-diagonal affine map (A, b): the input
block carries the conditioning variable (usually time) into the frame, the
output block carries positions. Demonstrations are projected into each
frame, encoded there by a local mixture model, and reproductions fuse the
per-frame conditionals back in the global frame by a (confidence-weighted)
product of Gaussians.

Frames can be re-parameterized by a rotation + displacement of their output
block; ``dual_model_transform`` maps that same re-parameterization onto the
local model instead, leaving the frame untouched, and the two routes yield
identical reproductions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConfidenceOutOfRangeError,
    DimensionMismatchError,
    FrameCountMismatchError,
    SingularCovarianceError,
    SingularRotationError,
)
from .gaussians import GMM, BlockSpec, Gaussian, conditional_moments, em_fit


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Demonstration:
    """One recorded trajectory: points (N, D), one row per step, dt seconds apart."""

    points: np.ndarray
    dt: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise DimensionMismatchError("a demonstration needs at least 2 rows of points")
        if not np.all(np.isfinite(pts)):
            raise DimensionMismatchError("demonstration contains non-finite values")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class TaskFrame:
    """Block-diagonal affine frame, static (D, D) or per-step (T, D, D).

    Cross-blocks between the input and output index sets must be exactly
    zero. ``at(t)`` evaluates the frame at a step; static frames ignore t.
    """

    A: np.ndarray
    b: np.ndarray
    spec: BlockSpec

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        d = self.spec.dim
        if A.ndim == 2:
            if A.shape != (d, d) or b.shape != (d,):
                raise DimensionMismatchError(
                    f"static frame needs A ({d},{d}) and b ({d},), got {A.shape}, {b.shape}"
                )
        elif A.ndim == 3:
            if A.shape[1:] != (d, d) or b.shape != (A.shape[0], d):
                raise DimensionMismatchError(
                    f"per-step frame needs A (T,{d},{d}) and b (T,{d}), got {A.shape}, {b.shape}"
                )
        else:
            raise DimensionMismatchError(f"frame matrix has ndim {A.ndim}")
        idx_i = np.asarray(self.spec.input_dims)
        idx_o = np.asarray(self.spec.output_dims)
        cross = A[..., idx_i[:, None], idx_o[None, :]]
        cross_t = A[..., idx_o[:, None], idx_i[None, :]]
        if np.any(cross != 0.0) or np.any(cross_t != 0.0):
            raise DimensionMismatchError("frame matrix has nonzero cross-blocks")
        object.__setattr__(self, "A", _freeze(A))
        object.__setattr__(self, "b", _freeze(b))

    @property
    def is_time_varying(self) -> bool:
        return self.A.ndim == 3

    @property
    def n_steps(self) -> int | None:
        return self.A.shape[0] if self.is_time_varying else None

    @property
    def dim(self) -> int:
        return self.spec.dim

    def at(self, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
        if self.is_time_varying:
            return self.A[t], self.b[t]
        return self.A, self.b

    def input_blocks(self, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.at(t)
        idx = np.asarray(self.spec.input_dims)
        return a[np.ix_(idx, idx)], b[idx]

    def output_blocks(self, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.at(t)
        idx = np.asarray(self.spec.output_dims)
        return a[np.ix_(idx, idx)], b[idx]

    @classmethod
    def from_blocks(cls, a_in, b_in, a_out, b_out, spec: BlockSpec | None = None) -> "TaskFrame":
        a_in = np.atleast_2d(np.asarray(a_in, dtype=float))
        a_out = np.atleast_2d(np.asarray(a_out, dtype=float))
        b_in = np.atleast_1d(np.asarray(b_in, dtype=float))
        b_out = np.atleast_1d(np.asarray(b_out, dtype=float))
        d_i, d_o = a_in.shape[0], a_out.shape[0]
        if spec is None:
            spec = BlockSpec(tuple(range(d_i)), tuple(range(d_i, d_i + d_o)))
        d = spec.dim
        A = np.zeros((d, d))
        b = np.zeros(d)
        A[np.ix_(spec.input_dims, spec.input_dims)] = a_in
        A[np.ix_(spec.output_dims, spec.output_dims)] = a_out
        b[np.asarray(spec.input_dims)] = b_in
        b[np.asarray(spec.output_dims)] = b_out
        return cls(A, b, spec)

    @classmethod
    def at_position(cls, origin, rotation=None) -> "TaskFrame":
        """Time+position frame: unit time block, output block at `origin`."""
        origin = np.asarray(origin, dtype=float).reshape(-1)
        d_o = origin.shape[0]
        rot = np.eye(d_o) if rotation is None else np.asarray(rotation, dtype=float)
        return cls.from_blocks(np.eye(1), np.zeros(1), rot, origin)


@dataclass(frozen=True, eq=False)
class LocalModel:
    """Mixture model fitted to demonstrations projected into one frame."""

    frame_id: int | str
    gmm: GMM
    spec: BlockSpec

    def __post_init__(self):
        if self.gmm.dim != self.spec.dim:
            raise DimensionMismatchError(
                f"model dim {self.gmm.dim} != block spec dim {self.spec.dim}"
            )


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return float(-((np.pi - a) % (2.0 * np.pi) - np.pi))


@dataclass(frozen=True, eq=False)
class FrameAdjustment:
    """Rotation angles (about x, y, z) and an output-space displacement."""

    angles: np.ndarray
    displacement: np.ndarray

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float).reshape(-1)
        if angles.shape != (3,):
            raise DimensionMismatchError("adjustment needs exactly 3 angles")
        if not np.all(np.isfinite(angles)):
            raise DimensionMismatchError("adjustment angles must be finite")
        wrapped = np.array([wrap_angle(a) for a in angles])
        disp = np.asarray(self.displacement, dtype=float).reshape(-1)
        object.__setattr__(self, "angles", _freeze(wrapped))
        object.__setattr__(self, "displacement", _freeze(disp))

    @classmethod
    def zero(cls, out_dim: int) -> "FrameAdjustment":
        return cls(np.zeros(3), np.zeros(out_dim))


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def rotation_from_angles(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Compose rotations about x, then y, then z: R = Rz(gamma) Ry(beta) Rx(alpha)."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def planar_rotation(gamma: float) -> np.ndarray:
    c, s = np.cos(gamma), np.sin(gamma)
    return np.array([[c, -s], [s, c]])


def rotation_for_dim(angles, out_dim: int) -> np.ndarray:
    """Rotation of the output block: full 3-D, or gamma-only in 2-D."""
    angles = np.asarray(angles, dtype=float).reshape(-1)
    if out_dim == 3:
        return rotation_from_angles(*angles)
    if out_dim == 2:
        return planar_rotation(angles[2])
    if np.all(angles == 0.0):
        return np.eye(out_dim)
    raise DimensionMismatchError(f"rotations are defined for 2-D or 3-D output, got {out_dim}-D")


# ---------------------------------------------------------------------------
# Projection and local models
# ---------------------------------------------------------------------------

def project(demo: Demonstration, frame: TaskFrame) -> Demonstration:
    """Re-express a demonstration in a frame: rows become A_t^-1 (x_t - b_t)."""
    if demo.dim != frame.dim:
        raise DimensionMismatchError(f"demo dim {demo.dim} != frame dim {frame.dim}")
    X = demo.points
    try:
        if frame.is_time_varying:
            if frame.n_steps != demo.n_steps:
                raise DimensionMismatchError(
                    f"per-step frame has {frame.n_steps} steps, demo has {demo.n_steps}"
                )
            out = np.linalg.solve(frame.A, (X - frame.b)[..., None])[..., 0]
        else:
            out = np.linalg.solve(frame.A, (X - frame.b).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularRotationError(f"frame matrix is singular: {exc}") from exc
    return Demonstration(out, demo.dt)


def unproject(demo: Demonstration, frame: TaskFrame) -> Demonstration:
    """Inverse of project: rows become A_t x_t + b_t."""
    if demo.dim != frame.dim:
        raise DimensionMismatchError(f"demo dim {demo.dim} != frame dim {frame.dim}")
    X = demo.points
    if frame.is_time_varying:
        out = np.einsum("tij,tj->ti", frame.A, X) + frame.b
    else:
        out = X @ frame.A.T + frame.b
    return Demonstration(out, demo.dt)


def fit_local_models(
    demos,
    frames,
    n_components: int,
    spec: BlockSpec,
    frame_ids=None,
    **em_kwargs,
) -> list[LocalModel]:
    """Fit one local mixture per frame to the pooled projected demonstrations."""
    demos = list(demos)
    frames = list(frames)
    if frame_ids is None:
        frame_ids = list(range(len(frames)))
    frame_ids = list(frame_ids)
    if len(frame_ids) != len(frames):
        raise FrameCountMismatchError(f"{len(frame_ids)} ids for {len(frames)} frames")
    models = []
    for fid, frame in zip(frame_ids, frames):
        data = np.vstack([project(d, frame).points for d in demos]) if demos else np.empty((0, spec.dim))
        gmm = em_fit(data, n_components, **em_kwargs)
        models.append(LocalModel(fid, gmm, spec))
    return models


def local_trajectory(model: LocalModel, inputs) -> list[Gaussian]:
    """Per-step conditional Gaussians of a local model along an input sequence."""
    means, covs = conditional_moments(model.gmm, model.spec, inputs)
    return [Gaussian(m, c) for m, c in zip(means, covs)]


def transform_conditional(g: Gaussian, frame: TaskFrame, t: int = 0) -> Gaussian:
    """Map a frame-local conditional into the global frame via the output block."""
    a_o, b_o = frame.output_blocks(t)
    if g.dim != a_o.shape[0]:
        raise DimensionMismatchError(f"conditional dim {g.dim} != output block {a_o.shape[0]}")
    cov = a_o @ g.cov @ a_o.T
    return Gaussian(a_o @ g.mean + b_o, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# Array pipeline shared by reproduce() and the optimizers
# ---------------------------------------------------------------------------

def local_input_sequence(frame: TaskFrame, inputs) -> np.ndarray:
    """Project global input values into a frame through its input blocks."""
    U = np.asarray(inputs, dtype=float)
    d_i = len(frame.spec.input_dims)
    if U.ndim == 1 and d_i == 1:
        U = U.reshape(-1, 1)
    if U.ndim != 2 or U.shape[1] != d_i:
        raise DimensionMismatchError(f"inputs of shape {U.shape} do not match {d_i} input dims")
    n = U.shape[0]
    try:
        if frame.is_time_varying:
            a_i = np.stack([frame.input_blocks(t)[0] for t in range(n)])
            b_i = np.stack([frame.input_blocks(t)[1] for t in range(n)])
            return np.linalg.solve(a_i, (U - b_i)[..., None])[..., 0]
        a_i, b_i = frame.input_blocks()
        return np.linalg.solve(a_i, (U - b_i).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularRotationError(f"input block is singular: {exc}") from exc


def output_block_sequence(frame: TaskFrame, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Output blocks (A_O, b_O) expanded to (N, D_o, D_o) and (N, D_o)."""
    if frame.is_time_varying:
        a = np.stack([frame.output_blocks(t)[0] for t in range(n_steps)])
        b = np.stack([frame.output_blocks(t)[1] for t in range(n_steps)])
        return a, b
    a_o, b_o = frame.output_blocks()
    d_o = a_o.shape[0]
    return (
        np.broadcast_to(a_o, (n_steps, d_o, d_o)),
        np.broadcast_to(b_o, (n_steps, d_o)),
    )


def transform_moment_arrays(a_seq, b_seq, means, covs) -> tuple[np.ndarray, np.ndarray]:
    """Apply per-step affine maps to per-step (mean, cov) arrays."""
    m = np.einsum("nde,ne->nd", a_seq, means) + b_seq
    c = np.einsum("nde,nef,ngf->ndg", a_seq, covs, a_seq)
    return m, 0.5 * (c + np.transpose(c, (0, 2, 1)))


def fuse_moment_arrays(means, covs, confidences=None) -> tuple[np.ndarray, np.ndarray]:
    """Fuse stacked per-frame moments (P, N, D) / (P, N, D, D) by precision addition."""
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    p = means.shape[0]
    if confidences is not None:
        c = np.asarray(confidences, dtype=float)
        if c.ndim == 1:
            c = np.broadcast_to(c[:, None], means.shape[:2])
        if c.shape != means.shape[:2]:
            raise DimensionMismatchError(
                f"confidences of shape {c.shape} do not match {means.shape[:2]}"
            )
        if np.any(c <= 0.0) or np.any(c > 1.0):
            raise ConfidenceOutOfRangeError("confidences must lie in (0, 1]")
        covs = covs / c[:, :, None, None]
    if p == 1:
        return means[0], covs[0]
    try:
        prec = np.linalg.inv(covs)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"cannot invert a fused covariance: {exc}") from exc
    lam = prec.sum(axis=0)
    eta = np.einsum("pnde,pne->nd", prec, means)
    cov = np.linalg.inv(lam)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    mean = np.einsum("nde,ne->nd", cov, eta)
    return mean, cov


def reproduce_moments(models, frames, inputs, confidences=None) -> tuple[np.ndarray, np.ndarray]:
    """Array form of reproduce(): fused means (N, D_o) and covariances (N, D_o, D_o)."""
    models = list(models)
    frames = list(frames)
    if len(models) != len(frames):
        raise FrameCountMismatchError(f"{len(models)} models for {len(frames)} frames")
    if len(models) == 0:
        raise FrameCountMismatchError("need at least one (model, frame) pair")
    U = np.asarray(inputs, dtype=float)
    if U.size == 0:
        raise DimensionMismatchError("input sequence is empty")
    n = U.shape[0]
    tr_means, tr_covs = [], []
    for model, frame in zip(models, frames):
        loc = local_input_sequence(frame, U)
        means, covs = conditional_moments(model.gmm, model.spec, loc)
        a_seq, b_seq = output_block_sequence(frame, n)
        m, c = transform_moment_arrays(a_seq, b_seq, means, covs)
        tr_means.append(m)
        tr_covs.append(c)
    return fuse_moment_arrays(np.stack(tr_means), np.stack(tr_covs), confidences)


def reproduce(models, frames, inputs, confidences=None) -> list[Gaussian]:
    """Reproduce a trajectory from local models under given task frames.

    Per step: the global input is carried into each frame, each local model
    is conditioned on it, the conditionals are mapped back through the
    frames' output blocks, and the per-frame Gaussians are fused by a
    (confidence-weighted) product. The fused mean sequence is the trajectory.

    `confidences` is optional: one value per frame, or an array (P, N) of
    per-frame-per-step values, all in (0, 1].
    """
    means, covs = reproduce_moments(models, frames, inputs, confidences)
    return [Gaussian(m, c) for m, c in zip(means, covs)]


# ---------------------------------------------------------------------------
# Frame re-parameterization and its dual
# ---------------------------------------------------------------------------

def adjust_frame(frame: TaskFrame, adj: FrameAdjustment, t: int = 0) -> TaskFrame:
    """Rotate and displace a frame's output block; input blocks stay fixed.

    New output blocks: A_O' = A_O R, b_O' = A_O d + b_O. Returns a static
    frame evaluated at step t.
    """
    a_i, b_i = frame.input_blocks(t)
    a_o, b_o = frame.output_blocks(t)
    d_o = a_o.shape[0]
    if adj.displacement.shape[0] != d_o:
        raise DimensionMismatchError(
            f"displacement dim {adj.displacement.shape[0]} != output dim {d_o}"
        )
    rot = rotation_for_dim(adj.angles, d_o)
    return TaskFrame.from_blocks(a_i, b_i, a_o @ rot, a_o @ adj.displacement + b_o, frame.spec)


def dual_model_transform(
    model: LocalModel, frame: TaskFrame, adjusted: TaskFrame, t: int = 0
) -> LocalModel:
    """Fold a frame re-parameterization into the local model instead.

    Reproducing with (adjusted frame, original model) equals reproducing
    with (original frame, returned model): the output-block change
    A_O -> A_O', b_O -> b_O' becomes the component map
    mu_O -> A_O^-1 A_O' mu_O + A_O^-1 (b_O' - b_O) with matching covariance
    blocks, while input-block statistics are untouched.
    """
    a_o, b_o = frame.output_blocks(t)
    a_o_new, b_o_new = adjusted.output_blocks(t)
    a_i, b_i = frame.input_blocks(t)
    a_i_new, b_i_new = adjusted.input_blocks(t)
    if not (np.allclose(a_i, a_i_new, atol=1e-12) and np.allclose(b_i, b_i_new, atol=1e-12)):
        raise DimensionMismatchError("frames must share input blocks")
    try:
        twist = np.linalg.solve(a_o, a_o_new)
        shift = np.linalg.solve(a_o, b_o_new - b_o)
    except np.linalg.LinAlgError as exc:
        raise SingularRotationError(f"output block is singular: {exc}") from exc

    idx_i = np.asarray(model.spec.input_dims)
    idx_o = np.asarray(model.spec.output_dims)
    new_components = []
    for comp in model.gmm.components:
        mean = comp.mean.copy()
        cov = comp.cov.copy()
        mean[idx_o] = twist @ comp.mean[idx_o] + shift
        s_oi = twist @ comp.cov[np.ix_(idx_o, idx_i)]
        cov[np.ix_(idx_o, idx_i)] = s_oi
        cov[np.ix_(idx_i, idx_o)] = s_oi.T
        cov[np.ix_(idx_o, idx_o)] = twist @ comp.cov[np.ix_(idx_o, idx_o)] @ twist.T
        new_components.append(Gaussian(mean, 0.5 * (cov + cov.T)))
    return replace(model, gmm=GMM(model.gmm.weights, tuple(new_components)))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def frame_to_dict(frame: TaskFrame) -> dict:
    """JSON-ready dict {A, b}; per-step frames serialize their full arrays."""
    return {"A": frame.A.tolist(), "b": frame.b.tolist()}


def frame_from_dict(data: dict, spec: BlockSpec) -> TaskFrame:
    if "A" not in data or "b" not in data:
        raise DimensionMismatchError("frame dict needs 'A' and 'b' entries")
    return TaskFrame(np.asarray(data["A"], dtype=float), np.asarray(data["b"], dtype=float), spec)

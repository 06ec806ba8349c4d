"""Serial-arm kinematics and task cost functions.

Two arm variants share one interface:

* ``planar``: n revolute joints in the x-y plane, joint i adds to the
  cumulative link angle (n joints for n links).
* ``spatial``: joint 0 yaws the whole chain about the base z axis and each
  link gets its own relative pitch joint (n + 1 joints for n links), so the
  chain covers a full 3-D shell with redundant degrees of freedom for
  position tracking.

Cartesian targets are tracked with a damped right pseudo-inverse of the
position Jacobian, one correction step per target. The cost functions score
a tracked rollout: weighted joint displacement, exponential obstacle
proximity around a bounded rectangle, and via-point distance penalties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateObstacleError,
    DimensionMismatchError,
    IndexOutOfRangeError,
    SingularJacobianError,
)


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Kinematic chain: link lengths, joint limits, base pose, variant.

    The base pose is a rigid transform: chain coordinates are rotated by
    `base_rotation` and shifted by `base`.
    """

    link_lengths: np.ndarray
    joint_limits: np.ndarray
    base: np.ndarray | None = None
    base_rotation: np.ndarray | None = None
    variant: str = "spatial"

    def __post_init__(self):
        lengths = np.asarray(self.link_lengths, dtype=float).reshape(-1)
        if lengths.size == 0 or np.any(lengths <= 0):
            raise DimensionMismatchError("link lengths must be positive")
        if self.variant not in ("planar", "spatial"):
            raise DimensionMismatchError(f"unknown arm variant {self.variant!r}")
        n_joints = lengths.size + (1 if self.variant == "spatial" else 0)
        limits = np.asarray(self.joint_limits, dtype=float)
        if limits.shape != (n_joints, 2):
            raise DimensionMismatchError(
                f"joint limits must be ({n_joints}, 2), got {limits.shape}"
            )
        if np.any(limits[:, 0] >= limits[:, 1]):
            raise DimensionMismatchError("each joint limit needs min < max")
        d = self.position_dim
        base = np.zeros(d) if self.base is None else np.asarray(self.base, dtype=float).reshape(-1)
        if base.shape[0] != d:
            raise DimensionMismatchError(f"base must have dim {d}, got {base.shape[0]}")
        rot = np.eye(d) if self.base_rotation is None else np.asarray(self.base_rotation, dtype=float)
        if rot.shape != (d, d):
            raise DimensionMismatchError(f"base rotation must be ({d},{d}), got {rot.shape}")
        if np.max(np.abs(rot @ rot.T - np.eye(d))) > 1e-8:
            raise DimensionMismatchError("base rotation must be orthonormal")
        object.__setattr__(self, "link_lengths", _freeze(lengths))
        object.__setattr__(self, "joint_limits", _freeze(limits))
        object.__setattr__(self, "base", _freeze(base))
        object.__setattr__(self, "base_rotation", _freeze(rot))

    @property
    def n_joints(self) -> int:
        # spatial adds the base yaw to the per-link pitches
        return self.link_lengths.shape[0] + (1 if self.variant == "spatial" else 0)

    @property
    def position_dim(self) -> int:
        return 2 if self.variant == "planar" else 3

    @property
    def reach(self) -> float:
        return float(self.link_lengths.sum())

    @classmethod
    def default_spatial(cls) -> "ArmModel":
        """4-link position-only arm with a roughly human-scale 0.7 m reach."""
        lengths = [0.2, 0.2, 0.2, 0.1]
        limits = [[-np.pi, np.pi]] * 5
        return cls(lengths, limits, variant="spatial")

    @classmethod
    def planar(cls, link_lengths, joint_limits=None) -> "ArmModel":
        lengths = np.asarray(link_lengths, dtype=float).reshape(-1)
        if joint_limits is None:
            joint_limits = [[-2.0 * np.pi, 2.0 * np.pi]] * lengths.size
        return cls(lengths, joint_limits, variant="planar")

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])


def _check_joints(arm: ArmModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != arm.n_joints:
        raise DimensionMismatchError(f"expected {arm.n_joints} joint values, got {q.shape[0]}")
    return q


def _chain_position(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    lengths = arm.link_lengths
    if arm.variant == "planar":
        angles = np.cumsum(q)
        return np.array([np.sum(lengths * np.cos(angles)), np.sum(lengths * np.sin(angles))])
    yaw = q[0]
    elev = np.cumsum(q[1:])
    ce, se = np.cos(elev), np.sin(elev)
    return np.array(
        [
            np.sum(lengths * ce) * np.cos(yaw),
            np.sum(lengths * ce) * np.sin(yaw),
            np.sum(lengths * se),
        ]
    )


def forward_kinematics(arm: ArmModel, q) -> np.ndarray:
    """End-effector position for a joint configuration."""
    q = _check_joints(arm, q)
    return arm.base + arm.base_rotation @ _chain_position(arm, q)


def jacobian(arm: ArmModel, q) -> np.ndarray:
    """Analytic position Jacobian, shape (position_dim, n_joints)."""
    q = _check_joints(arm, q)
    lengths = arm.link_lengths
    n = arm.n_joints

    def tail_sums(v):
        # tail_sums(v)[j] = sum of v[j:]; joint j moves every link k >= j
        return np.cumsum(v[::-1])[::-1]

    if arm.variant == "planar":
        angles = np.cumsum(q)
        jac = np.empty((2, n))
        jac[0] = -tail_sums(lengths * np.sin(angles))
        jac[1] = tail_sums(lengths * np.cos(angles))
        return arm.base_rotation @ jac
    yaw = q[0]
    elev = np.cumsum(q[1:])
    ce, se = np.cos(elev), np.sin(elev)
    cy, sy = np.cos(yaw), np.sin(yaw)
    radial = float(np.sum(lengths * ce))
    # pitch joint j (1-based) moves every link k >= j - 1
    dr = -tail_sums(lengths * se)
    dz = tail_sums(lengths * ce)
    jac = np.empty((3, n))
    jac[:, 0] = (-sy * radial, cy * radial, 0.0)
    jac[0, 1:] = dr * cy
    jac[1, 1:] = dr * sy
    jac[2, 1:] = dz
    return arm.base_rotation @ jac


def track(arm: ArmModel, q0, p_targets, damping: float = 1e-6, max_step: float = 0.2) -> np.ndarray:
    """Track a Cartesian target sequence with damped pseudo-inverse steps.

    One correction q += J^T (J J^T + damping I)^-1 (target - p) per target;
    joints are clamped to their limits. A step whose largest joint motion
    exceeds `max_step` radians is scaled down (direction preserved), which
    keeps far or unreachable targets from catapulting the joints through
    near-singular poses; densely sampled smooth paths stay far below the
    cap, so the law is unchanged there. With damping = 0 a singular pose
    raises SingularJacobianError.

    Returns an array (len(p_targets), n_joints) aligned with the targets.
    """
    q = arm.clamp(_check_joints(arm, q0))
    targets = np.atleast_2d(np.asarray(p_targets, dtype=float))
    if targets.shape[1] != arm.position_dim:
        raise DimensionMismatchError(
            f"targets have dim {targets.shape[1]}, expected {arm.position_dim}"
        )
    if targets.shape[0] == 0:
        raise DimensionMismatchError("target sequence is empty")
    out = np.empty((targets.shape[0], arm.n_joints))
    eye = np.eye(arm.position_dim)
    for i, target in enumerate(targets):
        jac = jacobian(arm, q)
        delta_p = target - forward_kinematics(arm, q)
        gram = jac @ jac.T + damping * eye
        try:
            dq = jac.T @ np.linalg.solve(gram, delta_p)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular configuration at step {i}: {exc}") from exc
        if max_step is not None:
            worst = float(np.max(np.abs(dq)))
            if worst > max_step:
                dq = dq * (max_step / worst)
        q = arm.clamp(q + dq)
        out[i] = q
    return out


def solve_position(arm: ArmModel, q0, target, iterations: int = 200, damping: float = 1e-4) -> np.ndarray:
    """Iterate tracking toward one fixed target; returns the final joints."""
    seq = track(arm, q0, np.tile(np.asarray(target, dtype=float), (iterations, 1)), damping)
    return seq[-1]


def fk_path(arm: ArmModel, q_seq) -> np.ndarray:
    """End-effector positions for a joint sequence, shape (N, position_dim)."""
    q_seq = np.atleast_2d(np.asarray(q_seq, dtype=float))
    return np.stack([forward_kinematics(arm, q) for q in q_seq])


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

def _weight_matrix(w, n: int) -> np.ndarray:
    if np.isscalar(w):
        return float(w) * np.eye(n)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = np.diag(w)
    if w.shape != (n, n):
        raise DimensionMismatchError(f"weight matrix must be ({n},{n}), got {w.shape}")
    return w


def cost_joint(q_seq, weight=1.0) -> float:
    """Sum of weighted joint-step norms: sum_t ||W (q_{t+1} - q_t)||."""
    q_seq = np.atleast_2d(np.asarray(q_seq, dtype=float))
    if q_seq.shape[0] < 2:
        raise DimensionMismatchError("need at least two joint configurations")
    w = _weight_matrix(weight, q_seq.shape[1])
    steps = np.diff(q_seq, axis=0) @ w.T
    return float(np.sum(np.linalg.norm(steps, axis=1)))


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Bounded rectangle in 3-D: center, two orthonormal in-plane axes, half-extents."""

    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        axes = np.asarray(self.axes, dtype=float)
        ext = np.asarray(self.half_extents, dtype=float).reshape(-1)
        if center.shape != (3,) or axes.shape != (2, 3) or ext.shape != (2,):
            raise DegenerateObstacleError(
                "obstacle needs center (3,), axes (2,3), half_extents (2,)"
            )
        if np.any(ext <= 0):
            raise DegenerateObstacleError("half extents must be positive")
        gram = axes @ axes.T
        if np.max(np.abs(gram - np.eye(2))) > 1e-9:
            raise DegenerateObstacleError("axes must be orthonormal")
        object.__setattr__(self, "center", _freeze(center))
        object.__setattr__(self, "axes", _freeze(axes))
        object.__setattr__(self, "half_extents", _freeze(ext))

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.axes[0], self.axes[1])

    @property
    def corners(self) -> np.ndarray:
        u = self.axes[0] * self.half_extents[0]
        v = self.axes[1] * self.half_extents[1]
        return np.stack(
            [self.center + u + v, self.center - u + v, self.center - u - v, self.center + u - v]
        )

    def plane_coords(self, point) -> np.ndarray:
        return self.axes @ (np.asarray(point, dtype=float) - self.center)

    def contains_plane_point(self, point) -> bool:
        coords = self.plane_coords(point)
        return bool(np.all(np.abs(coords) <= self.half_extents))


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def min_edge_distance(obstacle: Obstacle, point) -> float:
    """Minimum distance from a point to the four rectangle edges."""
    p = np.asarray(point, dtype=float)
    corners = obstacle.corners
    return min(
        _point_segment_distance(p, corners[i], corners[(i + 1) % 4]) for i in range(4)
    )


def plane_intersection(p_seq, obstacle: Obstacle):
    """First crossing of a polyline through the obstacle plane.

    Returns (point, crossed). Without a crossing, the polyline point closest
    to the plane is projected onto it and crossed is False.
    """
    pts = np.atleast_2d(np.asarray(p_seq, dtype=float))
    if pts.shape[1] != 3:
        raise DimensionMismatchError("obstacle geometry is 3-D")
    normal = obstacle.normal
    s = (pts - obstacle.center) @ normal
    for i in range(len(s) - 1):
        if s[i] == 0.0:
            return pts[i].copy(), True
        if s[i] * s[i + 1] < 0.0:
            lam = s[i] / (s[i] - s[i + 1])
            return pts[i] + lam * (pts[i + 1] - pts[i]), True
    if s[-1] == 0.0:
        return pts[-1].copy(), True
    i = int(np.argmin(np.abs(s)))
    return pts[i] - s[i] * normal, False


def polyline_crosses_rectangle(p_seq, obstacle: Obstacle) -> bool:
    """True if any polyline segment passes through the rectangle interior.

    This is the verification-mode companion of cost_obstacle: it checks all
    plane crossings, not just the first.
    """
    pts = np.atleast_2d(np.asarray(p_seq, dtype=float))
    normal = obstacle.normal
    s = (pts - obstacle.center) @ normal
    for i in range(len(s) - 1):
        crossing = None
        if s[i] == 0.0:
            crossing = pts[i]
        elif s[i] * s[i + 1] < 0.0:
            lam = s[i] / (s[i] - s[i + 1])
            crossing = pts[i] + lam * (pts[i + 1] - pts[i])
        if crossing is not None and obstacle.contains_plane_point(crossing):
            return True
    return bool(s[-1] == 0.0 and obstacle.contains_plane_point(pts[-1]))


def cost_obstacle(
    p_seq,
    q_seq,
    obstacle: Obstacle,
    weight=1.0,
    k1: float = 5.0,
    k2: float = 2.0,
    k3: float = 1.0,
    k4: float = 10.0,
) -> float:
    """Joint-displacement cost plus an exponential obstacle-proximity term.

    The estimated plane intersection point feeds one of two branches: inside
    the rectangle the penalty grows as k1 exp(k2 d) with d the distance to
    the nearest edge, outside it decays as k3 exp(-k4 d). The two branches
    deliberately disagree at d = 0 unless k1 = k3.
    """
    for name, k in (("k1", k1), ("k2", k2), ("k3", k3), ("k4", k4)):
        if k <= 0:
            raise DegenerateObstacleError(f"{name} must be positive")
    f_q = cost_joint(q_seq, weight)
    point, _ = plane_intersection(p_seq, obstacle)
    d = min_edge_distance(obstacle, point)
    if obstacle.contains_plane_point(point):
        return f_q + k1 * float(np.exp(k2 * d))
    return f_q + k3 * float(np.exp(-k4 * d))


def cost_via_point(
    p_seq,
    q_seq,
    weight,
    p_start,
    p_end,
    idx_start: int,
    idx_end: int,
    k_p1: float,
    k_p2: float,
) -> float:
    """Joint-displacement cost plus distances to two via targets at fixed steps."""
    pts = np.atleast_2d(np.asarray(p_seq, dtype=float))
    n = pts.shape[0]
    for name, idx in (("idx_start", idx_start), ("idx_end", idx_end)):
        if not (0 <= idx < n):
            raise IndexOutOfRangeError(f"{name}={idx} outside trajectory of length {n}")
    if k_p1 <= 0 or k_p2 <= 0:
        raise DimensionMismatchError("via-point gains must be positive")
    f_q = cost_joint(q_seq, weight)
    d_s = float(np.linalg.norm(pts[idx_start] - np.asarray(p_start, dtype=float)))
    d_e = float(np.linalg.norm(pts[idx_end] - np.asarray(p_end, dtype=float)))
    return f_q + k_p1 * d_s + k_p2 * d_e


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Declarative cost description; evaluate(p_seq, q_seq) dispatches on kind."""

    kind: str
    weight: object = 1.0
    obstacle: Obstacle | None = None
    k1: float = 5.0
    k2: float = 2.0
    k3: float = 1.0
    k4: float = 10.0
    p_start: np.ndarray | None = None
    p_end: np.ndarray | None = None
    idx_start: int = 0
    idx_end: int = -1
    k_p1: float = 1.0
    k_p2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("joint", "obstacle", "via_point"):
            raise DimensionMismatchError(f"unknown cost kind {self.kind!r}")
        if self.kind == "obstacle" and self.obstacle is None:
            raise DegenerateObstacleError("obstacle cost needs an obstacle")
        if self.kind == "via_point":
            if self.p_start is None or self.p_end is None:
                raise DimensionMismatchError("via-point cost needs p_start and p_end")
            object.__setattr__(self, "p_start", _freeze(np.asarray(self.p_start, dtype=float)))
            object.__setattr__(self, "p_end", _freeze(np.asarray(self.p_end, dtype=float)))
        w = self.weight
        if np.isscalar(w):
            if float(w) < 0:
                raise DimensionMismatchError("weight must be nonnegative")
        else:
            w = np.asarray(w, dtype=float)
            w = np.diag(w) if w.ndim == 1 else w
            if np.max(np.abs(w - w.T)) > 1e-9 or np.min(np.linalg.eigvalsh(w)) < -1e-10:
                raise DimensionMismatchError("weight matrix must be symmetric PSD")

    def evaluate(self, p_seq, q_seq) -> float:
        if self.kind == "joint":
            return cost_joint(q_seq, self.weight)
        if self.kind == "obstacle":
            return cost_obstacle(
                p_seq, q_seq, self.obstacle, self.weight, self.k1, self.k2, self.k3, self.k4
            )
        n = np.atleast_2d(np.asarray(p_seq)).shape[0]
        idx_end = self.idx_end if self.idx_end >= 0 else n + self.idx_end
        return cost_via_point(
            p_seq,
            q_seq,
            self.weight,
            self.p_start,
            self.p_end,
            self.idx_start,
            idx_end,
            self.k_p1,
            self.k_p2,
        )

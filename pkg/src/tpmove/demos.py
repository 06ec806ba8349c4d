"""Synthetic demonstration corpora and CSV persistence.

Reaching demonstrations follow a minimum-jerk profile between fixed
endpoints, optionally bowed sideways by a half-sine arc, with smooth
per-demo noise that vanishes at both ends. Start and end rows are clamped
bitwise to the requested points, which gives the low-variance-at-endpoints
structure the frame-local models rely on.

Files use one CSV per demonstration (header ``t,x1,...,xd``), printed with
17 significant digits so that load(save(x)) round-trips exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, MalformedCsvError
from .frames import Demonstration, TaskFrame


@dataclass(frozen=True)
class DemoSpec:
    """Parameters of a synthetic reaching corpus."""

    start: tuple
    target: tuple
    duration: float = 2.0
    steps: int = 100
    count: int = 10
    curvature: float = 0.0
    noise_std: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        start = np.asarray(self.start, dtype=float).reshape(-1)
        target = np.asarray(self.target, dtype=float).reshape(-1)
        if start.shape != target.shape or start.shape[0] not in (2, 3):
            raise InvalidSpecError("start and target must both be 2-D or 3-D points")
        if self.steps < 2:
            raise InvalidSpecError("need at least 2 steps")
        if self.count < 1:
            raise InvalidSpecError("need at least 1 demonstration")
        if self.duration <= 0:
            raise InvalidSpecError("duration must be positive")
        if self.noise_std < 0:
            raise InvalidSpecError("noise_std must be nonnegative")
        object.__setattr__(self, "start", tuple(start))
        object.__setattr__(self, "target", tuple(target))


def minimum_jerk_profile(tau) -> np.ndarray:
    """Smooth 0-to-1 ramp 10 t^3 - 15 t^4 + 6 t^5 with zero end velocities."""
    tau = np.asarray(tau, dtype=float)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)


def _lateral_basis(direction: np.ndarray) -> np.ndarray:
    """Unit vectors spanning the plane orthogonal to a 3-D direction."""
    d = direction / np.linalg.norm(direction)
    up = np.array([0.0, 0.0, 1.0])
    if abs(d @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    u = np.cross(up, d)
    u /= np.linalg.norm(u)
    w = np.cross(d, u)
    return np.stack([u, w])


def generate_reaching(spec: DemoSpec) -> list[Demonstration]:
    """Generate a corpus of reaching demonstrations from a DemoSpec.

    All demos share the exact start and target rows; the lateral bow and
    the per-demo noise harmonics vanish at both endpoints.
    """
    start = np.asarray(spec.start)
    target = np.asarray(spec.target)
    span = target - start
    if np.linalg.norm(span) == 0.0:
        raise InvalidSpecError("start and target coincide")
    n = spec.steps
    dim = start.shape[0]
    tau = np.linspace(0.0, 1.0, n)
    s = minimum_jerk_profile(tau)
    arc = np.sin(np.pi * tau)
    wave = np.sin(2.0 * np.pi * tau)
    if dim == 3:
        lateral = _lateral_basis(span)
    else:
        d = span / np.linalg.norm(span)
        lateral = np.array([[-d[1], d[0]]])

    rng = np.random.default_rng(spec.seed)
    times = tau * spec.duration
    dt = spec.duration / (n - 1)
    demos = []
    for _ in range(spec.count):
        pos = start + s[:, None] * span
        pos = pos + spec.curvature * arc[:, None] * lateral[0]
        for axis in lateral:
            a1, a2 = rng.normal(0.0, spec.noise_std, size=2)
            pos = pos + (a1 * arc + 0.5 * a2 * wave)[:, None] * axis
        pos[0] = start
        pos[-1] = target
        demos.append(Demonstration(np.column_stack([times, pos]), dt))
    return demos


def generate_pick_place(
    start,
    via,
    target,
    t_via: float,
    duration: float,
    steps: int,
    count: int,
    curvature: float = 0.0,
    noise_std: float = 0.0,
    seed: int | None = None,
) -> list[Demonstration]:
    """Two-segment corpus: reach the via point at t_via, then carry on to target.

    Each segment is a minimum-jerk reach, so every demo pauses at the via
    point (zero velocity), passes through it exactly, and ends exactly at
    the target.
    """
    if not (0.0 < t_via < duration):
        raise InvalidSpecError("t_via must lie strictly inside the duration")
    if steps < 4:
        raise InvalidSpecError("need at least 4 steps for two segments")
    dt = duration / (steps - 1)
    n1 = max(int(round(t_via / dt)) + 1, 2)
    n2 = steps - n1 + 1
    if n2 < 2:
        raise InvalidSpecError("t_via leaves no room for the second segment")
    seed_seq = np.random.SeedSequence(seed)
    s1, s2 = seed_seq.spawn(2)
    first = generate_reaching(
        DemoSpec(tuple(start), tuple(via), (n1 - 1) * dt, n1, count, curvature, noise_std,
                 int(s1.generate_state(1)[0])))
    second = generate_reaching(
        DemoSpec(tuple(via), tuple(target), (n2 - 1) * dt, n2, count, curvature, noise_std,
                 int(s2.generate_state(1)[0])))
    demos = []
    for a, b in zip(first, second):
        tail = b.points.copy()
        tail[:, 0] += a.points[-1, 0]
        demos.append(Demonstration(np.vstack([a.points, tail[1:]]), dt))
    return demos


# ---------------------------------------------------------------------------
# Frames derived from a corpus
# ---------------------------------------------------------------------------

def endpoint_frames(demos) -> tuple[TaskFrame, TaskFrame]:
    """Identity-rotation frames at the common start and end of a corpus."""
    first = demos[0].points
    return (
        TaskFrame.at_position(first[0, 1:]),
        TaskFrame.at_position(first[-1, 1:]),
    )


def frames_at_times(demos, times) -> list[TaskFrame]:
    """Identity-rotation frames at the mean corpus position at given times."""
    frames = []
    for t in times:
        pts = []
        for demo in demos:
            idx = int(np.argmin(np.abs(demo.points[:, 0] - t)))
            pts.append(demo.points[idx, 1:])
        frames.append(TaskFrame.at_position(np.mean(pts, axis=0)))
    return frames


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_demos(demos, directory) -> list[Path]:
    """Write one demo_###.csv per demonstration; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, demo in enumerate(demos):
        path = directory / f"demo_{i:03d}.csv"
        dim = demo.dim - 1
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{j + 1}" for j in range(dim)])
            for row in demo.points:
                writer.writerow([f"{v:.17g}" for v in row])
        paths.append(path)
    return paths


def _load_one(path: Path) -> Demonstration:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise MalformedCsvError("file is empty", path=path)
    header = rows[0]
    if len(header) < 2 or header[0].strip() != "t":
        raise MalformedCsvError("header must be t,x1,...,xd", path=path, row=1)
    width = len(header)
    if len(rows) < 3:
        raise MalformedCsvError("need at least two data rows", path=path)
    data = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise MalformedCsvError(
                f"expected {width} columns, found {len(row)}", path=path, row=i
            )
        try:
            data[i - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise MalformedCsvError(f"non-numeric value: {exc}", path=path, row=i) from exc
    steps = np.diff(data[:, 0])
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0))
        raise MalformedCsvError("time column must be strictly increasing", path=path, row=bad + 3)
    return Demonstration(data, float(steps[0]))


def load_demos(directory) -> list[Demonstration]:
    """Load every demo_*.csv under a directory, sorted by name."""
    directory = Path(directory)
    paths = sorted(directory.glob("demo_*.csv"))
    if not paths:
        raise MalformedCsvError("no demo_*.csv files found", path=directory)
    return [_load_one(p) for p in paths]

"""Ground-truth environment, range sensing, camera footprint and saturated kinematics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidPoseError, ScenarioError

TWO_PI = 2.0 * math.pi

# front, left, back, right
DEFAULT_BEAM_ANGLES = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)
DEFAULT_MAX_RANGE = 4.0


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Return self * other, i.e. `other` expressed in the frame that `self` lives in."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(self.x + c * other.x - s * other.y,
                      self.y + s * other.x + c * other.y,
                      self.theta + other.theta)

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)


@dataclass(frozen=True)
class EnvironmentMap:
    """Occupancy ground truth. ``occupied[iy, ix]``, row 0 is the lowest y."""

    occupied: np.ndarray
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise ScenarioError(f"resolution must be positive, got {self.resolution}")
        occ = np.asarray(self.occupied, dtype=bool)
        occ.setflags(write=False)
        object.__setattr__(self, "occupied", occ)

    @property
    def height_cells(self) -> int:
        return self.occupied.shape[0]

    @property
    def width_cells(self) -> int:
        return self.occupied.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.width_cells * self.resolution, self.height_cells * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(x / self.resolution)), int(math.floor(y / self.resolution))

    def is_free(self, x: float, y: float) -> bool:
        ix, iy = self.cell_of(x, y)
        if not (0 <= ix < self.width_cells and 0 <= iy < self.height_cells):
            return False
        return not self.occupied[iy, ix]

    def is_closed(self) -> bool:
        occ = self.occupied
        return bool(occ[0, :].all() and occ[-1, :].all() and occ[:, 0].all() and occ[:, -1].all())


def parse_scenario(text: str) -> EnvironmentMap:
    lines = [ln.rstrip("\r") for ln in text.splitlines()]
    lines = [ln for ln in lines if ln.strip()]
    if not lines or not lines[0].startswith("resolution="):
        raise ScenarioError("scenario must start with a 'resolution=<meters>' header")
    try:
        resolution = float(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise ScenarioError(f"bad resolution header: {lines[0]!r}") from exc
    rows = lines[1:]
    if not rows:
        raise ScenarioError("scenario has no grid rows")
    width = len(rows[0])
    for n, row in enumerate(rows, start=2):
        if len(row) != width:
            raise ScenarioError(f"line {n}: row length {len(row)} != {width}")
        bad = set(row) - {"#", "."}
        if bad:
            raise ScenarioError(f"line {n}: unexpected characters {sorted(bad)}")
    # first grid line is the top (max y) row
    occ = np.array([[ch == "#" for ch in row] for row in reversed(rows)], dtype=bool)
    env = EnvironmentMap(occ, resolution)
    if not env.is_closed():
        raise ScenarioError("scenario boundary is not fully occupied (world must be closed)")
    return env


def load_scenario(path) -> EnvironmentMap:
    return parse_scenario(Path(path).read_text())


def scenario_to_text(env: EnvironmentMap) -> str:
    rows = ["".join("#" if c else "." for c in row) for row in env.occupied[::-1]]
    return f"resolution={env.resolution!r}\n" + "\n".join(rows) + "\n"


@dataclass
class LidarScan:
    beam_angles: np.ndarray
    ranges: np.ndarray
    max_range: float
    hit_flags: np.ndarray

    def __len__(self):
        return len(self.ranges)

    def body_points(self, hits_only: bool = True) -> np.ndarray:
        """Beam endpoints in the sensor frame, shape (K, 2)."""
        a, r = self.beam_angles, self.ranges
        if hits_only:
            a, r = a[self.hit_flags], r[self.hit_flags]
        return np.column_stack([r * np.cos(a), r * np.sin(a)])

    def points(self, pose: Pose2D, hits_only: bool = True) -> np.ndarray:
        """Beam endpoints expressed in the frame that ``pose`` lives in."""
        b = self.body_points(hits_only)
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        return np.column_stack([pose.x + c * b[:, 0] - s * b[:, 1],
                                pose.y + s * b[:, 0] + c * b[:, 1]])


def _cast_one(occ, res, ox, oy, angle, max_range):
    dx, dy = math.cos(angle), math.sin(angle)
    h, w = occ.shape
    ix, iy = int(math.floor(ox / res)), int(math.floor(oy / res))
    if dx > 0:
        step_x, t_max_x, t_dx = 1, ((ix + 1) * res - ox) / dx, res / dx
    elif dx < 0:
        step_x, t_max_x, t_dx = -1, (ix * res - ox) / dx, -res / dx
    else:
        step_x, t_max_x, t_dx = 0, math.inf, math.inf
    if dy > 0:
        step_y, t_max_y, t_dy = 1, ((iy + 1) * res - oy) / dy, res / dy
    elif dy < 0:
        step_y, t_max_y, t_dy = -1, (iy * res - oy) / dy, -res / dy
    else:
        step_y, t_max_y, t_dy = 0, math.inf, math.inf
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            ix += step_x
            t_max_x += t_dx
        else:
            t = t_max_y
            iy += step_y
            t_max_y += t_dy
        if t >= max_range:
            return max_range, False
        if not (0 <= ix < w and 0 <= iy < h) or occ[iy, ix]:
            return t, True


def raycast(env: EnvironmentMap, pose: Pose2D, beam_angles=DEFAULT_BEAM_ANGLES,
            max_range: float = DEFAULT_MAX_RANGE, noise_std: float = 0.0, rng=None) -> LidarScan:
    """Simulate planar rangefinders by exact grid traversal.

    Each range is the distance to the entry face of the first occupied cell
    along the beam, or ``max_range`` when nothing is struck before it. With
    ``noise_std > 0`` Gaussian noise is added to hit ranges and the result is
    clipped into ``(0, max_range]``.
    """
    if not env.is_free(pose.x, pose.y):
        raise InvalidPoseError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is not in free space")
    angles = np.asarray(beam_angles, dtype=float)
    ranges = np.empty(len(angles))
    hits = np.empty(len(angles), dtype=bool)
    occ = env.occupied
    for k, a in enumerate(angles):
        ranges[k], hits[k] = _cast_one(occ, env.resolution, pose.x, pose.y, pose.theta + a, max_range)
    if noise_std > 0 and hits.any():
        if rng is None:
            raise ValueError("noise_std > 0 needs an rng")
        noisy = ranges[hits] + rng.normal(0.0, noise_std, size=int(hits.sum()))
        ranges[hits] = np.clip(noisy, 1e-3, max_range)
        hits &= ranges < max_range
    return LidarScan(angles, ranges, float(max_range), hits)


@dataclass(frozen=True)
class CameraParams:
    r_c: float = 0.3
    w: float = 0.6
    l: float = 0.6

    def __post_init__(self):
        if self.r_c < 0 or self.w <= 0 or self.l <= 0:
            raise ValueError(f"invalid camera parameters {self}")


@dataclass(frozen=True)
class FovRectangle:
    center: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    w: float
    l: float


def camera_fov(pose: Pose2D, cam: CameraParams) -> FovRectangle:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    v1 = np.array([c, s])
    v2 = np.array([-s, c])
    return FovRectangle(pose.xy + cam.r_c * v1, v1, v2, cam.w, cam.l)


def point_in_fov(fov: FovRectangle, y) -> bool:
    # w bounds the forward (v1) component, l the lateral (v2) component
    d = np.asarray(y, dtype=float) - fov.center
    return bool(abs(d @ fov.v1) <= fov.w / 2 and abs(d @ fov.v2) <= fov.l / 2)


def points_in_fov(fov: FovRectangle, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised :func:`point_in_fov` over coordinate arrays of equal shape."""
    dx = xs - fov.center[0]
    dy = ys - fov.center[1]
    a = np.abs(dx * fov.v1[0] + dy * fov.v1[1]) <= fov.w / 2
    b = np.abs(dx * fov.v2[0] + dy * fov.v2[1]) <= fov.l / 2
    return a & b


@dataclass(frozen=True)
class SaturationLimits:
    S_x: float = 0.3
    S_theta: float = 1.0

    def __post_init__(self):
        if not (self.S_x > 0 and self.S_theta > 0):
            raise ValueError(f"saturation limits must be positive: {self}")


def saturate(u_x, u_theta: float, limits: SaturationLimits) -> tuple[np.ndarray, float]:
    u = np.asarray(u_x, dtype=float)
    n = math.hypot(u[0], u[1])
    if n > limits.S_x:
        # radial scaling, direction preserved
        u = u * (limits.S_x / n)
    return u, min(max(float(u_theta), -limits.S_theta), limits.S_theta)


def step_kinematics(pose: Pose2D, u_x, u_theta: float, dt: float = 0.01,
                    limits: SaturationLimits = SaturationLimits()) -> Pose2D:
    """Forward-Euler step of x' = u_x, theta' = u_theta after saturation."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    u, w = saturate(u_x, u_theta, limits)
    return Pose2D(pose.x + dt * u[0], pose.y + dt * u[1], pose.theta + dt * w)

"""Camera-coverage bookkeeping, target selection and the coupled exploration controllers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExcludedInitialCondition, MissionTimeExhausted
from .world import LidarScan, points_in_fov, wrap_angle

MAX_TIME_INDEX = 255
SQRT2 = math.sqrt(2.0)


@dataclass
class CoverageMap:
    """Last-seen time indices, ``cells[iy, ix]``; 0 means never seen."""

    cells: np.ndarray = field(default_factory=lambda: np.zeros((100, 100), np.uint8))
    resolution: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        h, w = self.cells.shape
        x0 = self.origin[0] - 0.5 * w * self.resolution
        y0 = self.origin[1] - 0.5 * h * self.resolution
        xs = x0 + (np.arange(w) + 0.5) * self.resolution
        ys = y0 + (np.arange(h) + 0.5) * self.resolution
        self.xs, self.ys = np.meshgrid(xs, ys)

    @classmethod
    def empty(cls, rows: int = 100, cols: int = 100, resolution: float = 0.1, origin=(0.0, 0.0)):
        return cls(np.zeros((rows, cols), np.uint8), resolution, origin)

    @property
    def shape(self):
        return self.cells.shape

    def copy(self) -> "CoverageMap":
        return CoverageMap(self.cells.copy(), self.resolution, self.origin)


@dataclass(frozen=True)
class ExploreParams:
    lam: float = 0.2
    sigma_1: float = 0.5
    sigma_2: float = 0.5
    delta_t: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.sigma_1 < 0 or self.sigma_2 < 0:
            raise ValueError("sigma_1 and sigma_2 must be non-negative")
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")


@dataclass(frozen=True)
class ControlGains:
    k_c: float = 0.5
    k_s: float = 2.0
    k_t: float = 1.0
    k_theta: float = 1.0

    def __post_init__(self):
        for name in ("k_c", "k_s", "k_t", "k_theta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gain {name} must be strictly positive")


@dataclass
class TargetState:
    current: np.ndarray
    previous: np.ndarray
    theta_d: float = 0.0

    def __post_init__(self):
        self.current = np.asarray(self.current, dtype=float)
        self.previous = np.asarray(self.previous, dtype=float)
        self.theta_d = wrap_angle(self.theta_d)


@dataclass
class ErrorState:
    e_c: np.ndarray
    e_theta: float

    def __post_init__(self):
        self.e_c = np.asarray(self.e_c, dtype=float)
        self.e_theta = wrap_angle(self.e_theta)


def time_index(t: float, delta_t: float) -> int:
    return max(1, int(math.floor(t / delta_t + 1e-9)))


def stamp_coverage(cov: CoverageMap, fovs, k: int) -> CoverageMap:
    """Write time index ``k`` into every cell whose centre lies in any footprint."""
    if k > MAX_TIME_INDEX:
        raise MissionTimeExhausted(f"time index {k} exceeds {MAX_TIME_INDEX}")
    if k < 1:
        raise ValueError("time index must be >= 1 (0 marks never-seen cells)")
    for fov in fovs:
        cov.cells[points_in_fov(fov, cov.xs, cov.ys)] = k
    return cov


def target_objective(cov: CoverageMap, t: float, x_c, target: TargetState,
                     params: ExploreParams) -> np.ndarray:
    """Age-weighted interest per cell; the selected target maximises it."""
    age = t - cov.cells.astype(float) * params.delta_t
    lam = params.lam
    if lam == 1.0:
        return age
    d1 = np.hypot(cov.xs - x_c[0], cov.ys - x_c[1])
    d2 = np.hypot(cov.xs - target.previous[0], cov.ys - target.previous[1])
    f = np.exp(-params.sigma_1 * d1 - params.sigma_2 * d2)
    return age * (lam + (1.0 - lam) * f)


def select_target(cov: CoverageMap, t: float, x_c, target: TargetState, params: ExploreParams,
                  mask=None) -> np.ndarray:
    """Brute-force choice of the next desired camera point.

    ``mask`` (same shape as the map) restricts the candidates; cells where it
    is False are never chosen. Ties go to the lowest (row, column) index.
    """
    score = target_objective(cov, t, x_c, target, params)
    if mask is not None:
        if not np.any(mask):
            mask = None
        else:
            score = np.where(mask, score, -np.inf)
    idx = int(np.argmax(score))
    iy, ix = divmod(idx, cov.cells.shape[1])
    return np.array([cov.xs[iy, ix], cov.ys[iy, ix]])


def camera_error(target_point, x, theta: float, r_c: float) -> np.ndarray:
    """e_c = x_cd - x - r_c v1."""
    return np.array([target_point[0] - x[0] - r_c * math.cos(theta),
                     target_point[1] - x[1] - r_c * math.sin(theta)])


def position_control(e: ErrorState, gains: ControlGains) -> np.ndarray:
    n = math.hypot(e.e_c[0], e.e_c[1])
    if n == 0.0:
        return np.zeros(2)
    sech = 1.0 / math.cosh(gains.k_s * e.e_theta)
    return gains.k_c * sech * sech * math.tanh(gains.k_t * n) * e.e_c / n


def _heading_shape(e_theta: float) -> float:
    # sin(e)/sqrt(1 + cos e) == sqrt(2) sin(e/2) on (-pi, pi]; finite at e = pi
    return SQRT2 * math.sin(0.5 * e_theta)


def heading_control(e_theta: float, k_theta: float) -> float:
    return k_theta * _heading_shape(e_theta)


def desired_heading(e_c):
    """atan2 of the camera error, or ``None`` when the error vanishes (hold heading)."""
    if e_c[0] == 0.0 and e_c[1] == 0.0:
        return None
    return math.atan2(e_c[1], e_c[0])


def heading_error(theta_d, theta: float) -> float:
    if theta_d is None:
        return 0.0
    return wrap_angle(theta_d - theta)


def error_dynamics(e: ErrorState, theta_d: float, gains: ControlGains, r_c: float):
    """Right-hand sides (de_c/dt, de_theta/dt) of the closed-loop error system."""
    if e.e_theta == math.pi:
        raise ExcludedInitialCondition("heading error equal to pi is excluded")
    g = gains.k_theta * _heading_shape(e.e_theta)
    u = position_control(e, gains)
    heading = theta_d - e.e_theta
    de_c = -u - g * r_c * np.array([-math.sin(heading), math.cos(heading)])
    return de_c, -g


def avoidance_velocity(x_i, others, obstacles, d_safe: float, k_rep: float,
                       heading: float = 0.0, rng=None, d_min: float = 1e-3) -> np.ndarray:
    """Inverse-distance repulsion from neighbours and range hits closer than ``d_safe``.

    ``obstacles`` is either a :class:`LidarScan` taken at ``x_i`` with body
    ``heading`` or an array of obstacle points. Distances are floored at
    ``d_min``; coincident points push along a random direction from ``rng``.
    """
    if not d_safe > 0:
        raise ValueError("d_safe must be positive")
    x_i = np.asarray(x_i, dtype=float)
    pts = [np.asarray(o, dtype=float).reshape(-1, 2) for o in (others or [])]
    if isinstance(obstacles, LidarScan):
        b = obstacles.body_points()
        c, s = math.cos(heading), math.sin(heading)
        pts.append(np.column_stack([x_i[0] + c * b[:, 0] - s * b[:, 1],
                                    x_i[1] + s * b[:, 0] + c * b[:, 1]]))
    elif obstacles is not None:
        pts.append(np.asarray(obstacles, dtype=float).reshape(-1, 2))
    v = np.zeros(2)
    if not pts:
        return v
    for p in np.concatenate(pts):
        diff = x_i - p
        d = math.hypot(diff[0], diff[1])
        if d >= d_safe:
            continue
        if d == 0.0:
            if rng is None:
                rng = np.random.default_rng(0)
            a = rng.uniform(-math.pi, math.pi)
            direction = np.array([math.cos(a), math.sin(a)])
        else:
            direction = diff / d
        v += k_rep * (1.0 / max(d, d_min) - 1.0 / d_safe) * direction
    return v

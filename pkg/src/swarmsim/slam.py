"""tinySLAM-style occupancy mapping and Monte Carlo scan matching.

Map cells are 8-bit confidences: 0 is an obstacle, 255 is free space and
127 is the unknown prior. Arrays are indexed ``cells[iy, ix]`` with row 0 at
the lowest y of the map frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidPoseError
from .world import LidarScan, Pose2D, wrap_angle

MAP_SIZE = 100
MAP_RESOLUTION = 0.1
UNKNOWN = 127
OBSTACLE = 0
FREE = 255


@dataclass
class SlamMap:
    cells: np.ndarray = field(default_factory=lambda: np.full((MAP_SIZE, MAP_SIZE), UNKNOWN, np.uint8))
    resolution: float = MAP_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def shape(self):
        return self.cells.shape

    @property
    def lower_left(self) -> tuple[float, float]:
        h, w = self.cells.shape
        return (self.origin[0] - 0.5 * w * self.resolution,
                self.origin[1] - 0.5 * h * self.resolution)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        x0, y0 = self.lower_left
        return int(math.floor((x - x0) / self.resolution)), int(math.floor((y - y0) / self.resolution))

    def in_bounds(self, ix: int, iy: int) -> bool:
        h, w = self.cells.shape
        return 0 <= ix < w and 0 <= iy < h

    def cell_center(self, ix, iy):
        x0, y0 = self.lower_left
        return x0 + (np.asarray(ix) + 0.5) * self.resolution, y0 + (np.asarray(iy) + 0.5) * self.resolution

    def copy(self) -> "SlamMap":
        return SlamMap(self.cells.copy(), self.resolution, self.origin)


@dataclass(frozen=True)
class SlamParams:
    alpha: int = 80
    hole_width: float = 0.4
    # mean per-beam cost above which a scan match is rejected
    quality_threshold: float = 20.0

    def __post_init__(self):
        if not 0 <= self.alpha <= 255:
            raise ValueError("alpha must lie in 0..255")
        if self.hole_width < MAP_RESOLUTION - 1e-12:
            raise ValueError("hole_width must span at least one cell")


@dataclass(frozen=True)
class ScanMatchParams:
    iterations: int = 1000
    sigma_xy: float = 0.05
    sigma_theta: float = math.radians(2.0)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def cell_update(old: int, y: int, alpha: int) -> int:
    """Integer confidence update ``((255 - alpha) * old + alpha * y) // 255``."""
    v = ((255 - alpha) * int(old) + alpha * int(y)) // 255
    return min(max(v, 0), 255)


def bresenham(x0: int, y0: int, x1: int, y1: int):
    """Grid cells on the line from (x0, y0) to (x1, y1), both ends included."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    cells = [(x, y)]
    while (x, y) != (x1, y1):
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
        cells.append((x, y))
    return cells


def _hole_value(delta: float, half_hole: float) -> int:
    # linear ramp: 0 at the hit point, free at half a hole width either side
    return min(FREE, int(round(FREE * abs(delta) / half_hole)))


def beam_updates(slam: SlamMap, pose: Pose2D, angle: float, rng_: float, hit: bool,
                 hole_width: float) -> list[tuple[int, int, int]]:
    """(ix, iy, measurement) triples swept by one beam, in traversal order."""
    cx, cy = pose.x, pose.y
    d = (math.cos(pose.theta + angle), math.sin(pose.theta + angle))
    ix0, iy0 = slam.cell_of(cx, cy)
    # nudge into the struck cell: ranges end on its entry face
    ex, ey = cx + (rng_ + 1e-6) * d[0], cy + (rng_ + 1e-6) * d[1]
    ixe, iye = slam.cell_of(ex, ey)
    out = []
    if not hit or not slam.in_bounds(ixe, iye):
        for ix, iy in bresenham(ix0, iy0, ixe, iye):
            if not slam.in_bounds(ix, iy):
                break
            out.append((ix, iy, FREE))
        return out

    half = 0.5 * hole_width
    x0, y0 = slam.lower_left
    res = slam.resolution

    def delta(ix, iy):
        px = x0 + (ix + 0.5) * res - cx
        py = y0 + (iy + 0.5) * res - cy
        return px * d[0] + py * d[1] - rng_

    for ix, iy in bresenham(ix0, iy0, ixe, iye)[:-1]:
        dl = delta(ix, iy)
        out.append((ix, iy, FREE if dl <= -half else _hole_value(dl, half)))
    out.append((ixe, iye, OBSTACLE))
    # hole segment behind the hit point
    far = rng_ + half
    ixf, iyf = slam.cell_of(cx + far * d[0], cy + far * d[1])
    for ix, iy in bresenham(ixe, iye, ixf, iyf)[1:]:
        if not slam.in_bounds(ix, iy):
            break
        dl = delta(ix, iy)
        if dl >= half:
            break
        out.append((ix, iy, _hole_value(dl, half)))
    return out


def update_map(slam: SlamMap, pose: Pose2D, scan: LidarScan, params: SlamParams) -> SlamMap:
    """Integrate one scan taken at ``pose`` into ``slam`` in place and return it."""
    ix, iy = slam.cell_of(pose.x, pose.y)
    if not slam.in_bounds(ix, iy):
        raise InvalidPoseError(f"pose ({pose.x:.2f}, {pose.y:.2f}) outside the SLAM map")
    cells = slam.cells
    a = params.alpha
    for angle, r, hit in zip(scan.beam_angles, scan.ranges, scan.hit_flags):
        for cx, cy, y in beam_updates(slam, pose, float(angle), float(r), bool(hit), params.hole_width):
            cells[cy, cx] = ((255 - a) * int(cells[cy, cx]) + a * y) // 255
    return slam


def _lookup(slam: SlamMap, pts: np.ndarray, interpolate: bool = True) -> np.ndarray:
    """Map values at map-frame points; points off the map read as free (255)."""
    h, w = slam.cells.shape
    x0, y0 = slam.lower_left
    u = (pts[:, 0] - x0) / slam.resolution
    v = (pts[:, 1] - y0) / slam.resolution
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    out = np.full(len(pts), float(FREE))
    if not inside.any():
        return out
    u, v = u[inside], v[inside]
    cells = slam.cells
    if not interpolate:
        out[inside] = cells[v.astype(int), u.astype(int)]
        return out
    u -= 0.5
    v -= 0.5
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    fu, fv = u - i0, v - j0
    i1 = np.clip(i0 + 1, 0, w - 1)
    j1 = np.clip(j0 + 1, 0, h - 1)
    i0 = np.clip(i0, 0, w - 1)
    j0 = np.clip(j0, 0, h - 1)
    c = cells.astype(float) if cells.dtype != float else cells
    out[inside] = ((1 - fv) * ((1 - fu) * c[j0, i0] + fu * c[j0, i1])
                   + fv * ((1 - fu) * c[j1, i0] + fu * c[j1, i1]))
    return out


def scan_cost(slam: SlamMap, scan: LidarScan, pose: Pose2D, interpolate: bool = True) -> float:
    """Sum of map values under the hit endpoints. Lower is a better fit."""
    if not scan.hit_flags.any():
        return 0.0
    return float(_lookup(slam, scan.points(pose), interpolate).sum())


@njit(cache=True)
def _bilinear_cost(cells, x0, y0, res, bx, by, x, y, th):
    h, w = cells.shape
    c = math.cos(th)
    s = math.sin(th)
    total = 0.0
    for k in range(bx.shape[0]):
        u = (x + c * bx[k] - s * by[k] - x0) / res
        v = (y + s * bx[k] + c * by[k] - y0) / res
        if not (u >= 0.0 and u < w and v >= 0.0 and v < h):
            total += 255.0
            continue
        u -= 0.5
        v -= 0.5
        fi = math.floor(u)
        fj = math.floor(v)
        fu = u - fi
        fv = v - fj
        i0 = max(int(fi), 0)
        j0 = max(int(fj), 0)
        i1 = min(int(fi) + 1, w - 1)
        j1 = min(int(fj) + 1, h - 1)
        total += ((1.0 - fv) * ((1.0 - fu) * cells[j0, i0] + fu * cells[j0, i1])
                  + fv * ((1.0 - fu) * cells[j1, i0] + fu * cells[j1, i1]))
    return total


@njit(cache=True)
def _random_walk(cells, x0, y0, res, bx, by, px, py, pt, noise, sxy, sth):
    best = _bilinear_cost(cells, x0, y0, res, bx, by, px, py, pt)
    for k in range(noise.shape[0]):
        x = px + sxy * noise[k, 0]
        y = py + sxy * noise[k, 1]
        t = pt + sth * noise[k, 2]
        cost = _bilinear_cost(cells, x0, y0, res, bx, by, x, y, t)
        if cost < best:
            best = cost
            px = x
            py = y
            pt = t
    return px, py, pt, best


def scan_match(slam: SlamMap, scan: LidarScan, initial: Pose2D, params: ScanMatchParams,
               rng: np.random.Generator) -> Pose2D:
    """Random-walk search for the pose whose scan best fits the map.

    Every iteration perturbs the best pose so far with Gaussian noise and keeps
    the candidate only if its (bilinear) cost is strictly lower.
    """
    return match_points(slam, scan.body_points(), initial, params, rng)[0]


def match_points(slam: SlamMap, body_points, initial: Pose2D, params: ScanMatchParams,
                 rng: np.random.Generator) -> tuple[Pose2D, float]:
    """:func:`scan_match` on arbitrary sensor-frame obstacle points; also returns the cost."""
    noise = rng.standard_normal((params.iterations, 3))
    b = np.asarray(body_points, dtype=float).reshape(-1, 2)
    if not len(b):
        return initial, 0.0
    x0, y0 = slam.lower_left
    x, y, t, cost = _random_walk(slam.cells.astype(np.float64), x0, y0, slam.resolution,
                                 np.ascontiguousarray(b[:, 0]), np.ascontiguousarray(b[:, 1]),
                                 initial.x, initial.y, initial.theta, noise,
                                 params.sigma_xy, params.sigma_theta)
    return Pose2D(x, y, t), float(cost)


def fuse_pose(predicted: Pose2D, matched: Pose2D, beta: float) -> Pose2D:
    """Complementary blend standing in for the platform Kalman filter."""
    return Pose2D(predicted.x + beta * (matched.x - predicted.x),
                  predicted.y + beta * (matched.y - predicted.y),
                  predicted.theta + beta * wrap_angle(matched.theta - predicted.theta))


def occupied_cells(slam: SlamMap, threshold: int = 64) -> np.ndarray:
    """Map-frame centres of cells at or below ``threshold``, shape (K, 2)."""
    iy, ix = np.nonzero(slam.cells <= threshold)
    x, y = slam.cell_center(ix, iy)
    return np.column_stack([x, y])

"""Shared fixtures-as-functions for the test suite."""
import math

import numpy as np

from swarmsim.slam import MAP_SIZE, UNKNOWN, SlamMap
from swarmsim.world import EnvironmentMap


def box_env(width: int, height: int, resolution: float = 0.1) -> EnvironmentMap:
    """Closed rectangular room, one-cell walls."""
    occ = np.zeros((height, width), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    return EnvironmentMap(occ, resolution)


def wall_map(walls, value: int = 0) -> SlamMap:
    """SLAM map with the given (ix0, iy0, ix1, iy1) inclusive cell rectangles set to ``value``."""
    cells = np.full((MAP_SIZE, MAP_SIZE), UNKNOWN, np.uint8)
    for ix0, iy0, ix1, iy1 in walls:
        cells[iy0:iy1 + 1, ix0:ix1 + 1] = value
    return SlamMap(cells)


def rotate(points, theta):
    c, s = math.cos(theta), math.sin(theta)
    p = np.asarray(points, float)
    return np.column_stack([c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1]])

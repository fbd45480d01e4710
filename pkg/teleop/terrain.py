import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from teleop.config import TERRAIN_KINDS, TerrainConfig

logger = logging.getLogger(__name__)


class TerrainError(Exception):
    """Custom exception for terrain generation errors"""
    pass


@dataclass(frozen=True, eq=False)
class TerrainSpec:
    """
    Heightfield terrain centred on the world origin.

    heights[i, j] is the ground height at (x0 + i * cell_size, y0 + j * cell_size);
    queries between samples are bilinear and outside the grid return 0.
    """
    kind: str
    heights: np.ndarray
    cell_size: float
    origin: tuple
    friction: float = 1.0

    def __post_init__(self):
        xs = self.origin[0] + self.cell_size * np.arange(self.heights.shape[0])
        ys = self.origin[1] + self.cell_size * np.arange(self.heights.shape[1])
        interp = RegularGridInterpolator((xs, ys), self.heights, bounds_error=False, fill_value=0.0)
        object.__setattr__(self, "_interp", interp)

    @property
    def is_flat(self) -> bool:
        return self.kind == "flat"

    def height(self, xy: np.ndarray) -> np.ndarray:
        """Ground height at (..., 2) horizontal positions"""
        xy = np.asarray(xy, dtype=float)
        if self.is_flat:
            return np.zeros(xy.shape[:-1])
        return self._interp(xy.reshape(-1, 2)).reshape(xy.shape[:-1])

    def with_friction(self, friction: float) -> "TerrainSpec":
        return TerrainSpec(self.kind, self.heights, self.cell_size, self.origin, friction)


def make_terrain(kind: str, seed: int, params: Optional[TerrainConfig] = None, friction: float = 1.0) -> TerrainSpec:
    """
    Build a deterministic heightfield.

    rough: i.i.d. heights ~ U(-rough_amplitude, rough_amplitude) per cell.
    low_obstacles: flat ground with axis-aligned boxes of height up to
    obstacle_max_height, kept out of clear_radius around the origin.

    Raises:
        TerrainError: If kind is unknown
    """
    if kind not in TERRAIN_KINDS:
        raise TerrainError(f"Unknown terrain kind: {kind}")
    params = params or TerrainConfig()
    n = int(round(params.size / params.cell_size)) + 1
    origin = (-0.5 * params.size, -0.5 * params.size)
    heights = np.zeros((n, n))
    rng = np.random.default_rng(seed)

    if kind == "rough":
        heights = rng.uniform(-params.rough_amplitude, params.rough_amplitude, size=(n, n))
    elif kind == "low_obstacles":
        coords = origin[0] + params.cell_size * np.arange(n)
        gx, gy = np.meshgrid(coords, coords, indexing="ij")
        placed = 0
        attempts = 0
        while placed < params.obstacle_count and attempts < 20 * max(params.obstacle_count, 1):
            attempts += 1
            cx, cy = rng.uniform(origin[0], -origin[0], size=2)
            sx, sy = rng.uniform(*params.obstacle_size, size=2)
            if np.hypot(cx, cy) < params.clear_radius + 0.5 * np.hypot(sx, sy):
                continue
            box = (np.abs(gx - cx) <= 0.5 * sx) & (np.abs(gy - cy) <= 0.5 * sy)
            heights[box] = np.maximum(heights[box], rng.uniform(0.0, params.obstacle_max_height))
            placed += 1

    logger.debug(f"Terrain {kind} (seed {seed}): {n}x{n} cells, max |h| {np.max(np.abs(heights)):.3f} m")
    return TerrainSpec(kind, heights, params.cell_size, origin, friction)

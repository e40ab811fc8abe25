"""SE(2) poses, grid/world coordinate transforms, and rasterization.

Conventions used package-wide:
  * world frame: x along columns, y along rows (row index grows with +y),
    headings measured from +x toward +y;
  * grid cells are indexed (row, col) = (iy, ix); `GridSpec.origin` is the
    world position of the *center* of cell (0, 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(theta: float) -> float:
    """Wrap into (-pi, pi]."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


@dataclass(frozen=True)
class Pose:
    """3-DoF vehicle state (tx, ty in meters, theta in radians)."""

    tx: float
    ty: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.tx, self.ty)


@dataclass(frozen=True)
class VelocityObs:
    """Body-frame per-step displacement (vx forward, vy lateral, vtheta)."""

    vx: float
    vy: float = 0.0
    vtheta: float = 0.0

    def __post_init__(self):
        for v in (self.vx, self.vy, self.vtheta):
            if not math.isfinite(v):
                raise ValueError("velocity components must be finite")


@dataclass(frozen=True)
class GridSpec:
    """Regular 2D grid: width/height in cells, resolution in meters/cell."""

    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one cell per axis")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))


@dataclass
class MapRaster:
    """Geo-referenced intensity image; `occupancy` marks observed cells."""

    values: np.ndarray  # (H, W) float32 in [0, 1]
    spec: GridSpec
    occupancy: np.ndarray | None = None  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (self.spec.height, self.spec.width):
            raise ValueError("raster shape does not match its GridSpec")


def pose_compose(a: Pose, v: VelocityObs) -> Pose:
    """Advance pose `a` by the body-frame displacement `v` (SE(2) composition)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose(
        a.tx + c * v.vx - s * v.vy,
        a.ty + s * v.vx + c * v.vy,
        a.theta + v.vtheta,
    )


def velocity_compose(u: VelocityObs, v: VelocityObs) -> VelocityObs:
    """Compose two relative displacements: result = u then v (in u's end frame)."""
    c, s = math.cos(u.vtheta), math.sin(u.vtheta)
    return VelocityObs(
        u.vx + c * v.vx - s * v.vy,
        u.vy + s * v.vx + c * v.vy,
        u.vtheta + v.vtheta,
    )


def pose_relative(a: Pose, b: Pose) -> VelocityObs:
    """Body-frame displacement taking pose `a` to pose `b`."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.tx - a.tx, b.ty - a.ty
    return VelocityObs(c * dx + s * dy, -s * dx + c * dy, normalize_angle(b.theta - a.theta))


def world_to_cell(spec: GridSpec, p: tuple[float, float]) -> tuple[float, float]:
    """World position -> fractional (col, row) cell coordinates."""
    return (
        (p[0] - spec.origin[0]) / spec.resolution,
        (p[1] - spec.origin[1]) / spec.resolution,
    )


def cell_to_world(spec: GridSpec, c: tuple[float, float]) -> tuple[float, float]:
    """Fractional (col, row) cell coordinates -> world position."""
    return (
        spec.origin[0] + c[0] * spec.resolution,
        spec.origin[1] + c[1] * spec.resolution,
    )


def rasterize_points(points, spec: GridSpec) -> tuple[MapRaster, int]:
    """Average point intensities into grid cells.

    points: iterable of (x, y, intensity) with intensity in [0, 1]. A point
    belongs to the cell whose center is nearest (ties round up). Out-of-bounds
    points are dropped; the count of dropped points is returned alongside.
    """
    acc = np.zeros((spec.height, spec.width), dtype=np.float64)
    cnt = np.zeros((spec.height, spec.width), dtype=np.int64)
    dropped = 0
    pts = np.asarray(list(points), dtype=np.float64).reshape(-1, 3)
    if pts.size:
        if pts[:, 2].min() < 0.0 or pts[:, 2].max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        cx = np.floor((pts[:, 0] - spec.origin[0]) / spec.resolution + 0.5).astype(np.int64)
        cy = np.floor((pts[:, 1] - spec.origin[1]) / spec.resolution + 0.5).astype(np.int64)
        ok = (cx >= 0) & (cx < spec.width) & (cy >= 0) & (cy < spec.height)
        dropped = int((~ok).sum())
        np.add.at(acc, (cy[ok], cx[ok]), pts[ok, 2])
        np.add.at(cnt, (cy[ok], cx[ok]), 1)
    values = np.zeros_like(acc, dtype=np.float32)
    touched = cnt > 0
    values[touched] = (acc[touched] / cnt[touched]).astype(np.float32)
    return MapRaster(values, spec, occupancy=touched), dropped

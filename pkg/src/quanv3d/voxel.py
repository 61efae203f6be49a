"""Point clouds and occupancy voxel grids.

A cloud living in a ``W x H x D`` box is rasterized onto a ``Wv x Hv x Dv``
lattice of voxel centers sitting at integer positions ``1..Wv`` (and likewise
per axis) in the scaled coordinate ``u = x * Wv / W``.  A point counts toward
voxel ``j`` on an axis when ``|u - j| <= 0.5``; the comparison is inclusive,
so a point landing exactly on a voxel boundary increments *both* neighbours.
A voxel is occupied once at least ``threshold`` points count toward it.

Note the half-open rim: scaled coordinates below 0.5 sit closer than 0.5 to
no center (the first center is at 1), so a thin shell at the low faces of the
box maps to no voxel at all.  That is a property of the center lattice, not a
bug, and the brute-force reference in the test suite reproduces it.

Array indices are 0-based as usual: center ``j`` lives at ``occupancy[j-1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

__all__ = [
    "EmptyCloudError",
    "DegenerateBoundsError",
    "PointCloud",
    "VoxelGrid",
    "normalize_bounds",
    "voxel_counts",
    "voxelize",
]


class EmptyCloudError(ValueError):
    """A point cloud with no vertices."""


class DegenerateBoundsError(ValueError):
    """A bounding box or cloud extent with zero size."""


@dataclass(frozen=True)
class PointCloud:
    """Vertices of shape (N, 3) inside a ``bounds = (W, H, D)`` box."""

    vertices: np.ndarray
    bounds: Tuple[float, float, float]

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64, copy=True)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"vertices must have shape (N, 3), got {verts.shape}")
        if verts.shape[0] == 0:
            raise EmptyCloudError("point cloud has no vertices")
        if not np.all(np.isfinite(verts)):
            raise ValueError("vertices must be finite")
        bounds = tuple(float(b) for b in self.bounds)
        if len(bounds) != 3 or not all(np.isfinite(bounds)):
            raise ValueError(f"bounds must be three finite numbers, got {self.bounds}")
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "bounds", bounds)

    @property
    def num_points(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True)
class VoxelGrid:
    """Binary occupancy array of shape ``(Wv, Hv, Dv)``."""

    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=np.uint8, copy=True)
        if occ.ndim != 3:
            raise ValueError(f"occupancy must be 3-D, got shape {occ.shape}")
        if occ.size == 0:
            raise ValueError("occupancy must be non-empty")
        if not np.all((occ == 0) | (occ == 1)):
            raise ValueError("occupancy entries must be 0 or 1")
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.occupancy.shape

    @property
    def num_occupied(self) -> int:
        return int(self.occupancy.sum())


def normalize_bounds(cloud: PointCloud) -> PointCloud:
    """Translate and uniformly rescale a cloud so it fits its bounds box.

    One scale factor is used for all three axes (the tightest one), so shape
    proportions survive; the cloud is then centered inside
    ``[0, W] x [0, H] x [0, D]``.  A cloud with zero extent on every axis has
    no definable scale and raises :class:`DegenerateBoundsError`.
    """
    lo = cloud.vertices.min(axis=0)
    hi = cloud.vertices.max(axis=0)
    extent = hi - lo
    bounds = np.array(cloud.bounds, dtype=np.float64)
    if np.all(bounds <= 0):
        raise DegenerateBoundsError(f"bounds {cloud.bounds} have no volume")
    positive = extent > 0
    if not np.any(positive):
        raise DegenerateBoundsError("cloud has zero extent on every axis")
    scale = np.min(bounds[positive] / extent[positive])
    if not np.isfinite(scale) or scale <= 0:
        raise DegenerateBoundsError(
            f"cannot fit extent {tuple(extent)} into bounds {cloud.bounds}"
        )
    shifted = (cloud.vertices - lo) * scale
    offset = (bounds - extent * scale) / 2.0
    return PointCloud(shifted + offset, cloud.bounds)


def _scaled_coordinates(cloud: PointCloud, dims: Tuple[int, int, int]) -> np.ndarray:
    bounds = np.array(cloud.bounds, dtype=np.float64)
    if np.any(bounds <= 0):
        raise DegenerateBoundsError(f"bounds {cloud.bounds} have a zero-sized axis")
    return cloud.vertices * (np.asarray(dims, dtype=np.float64) / bounds)


def voxel_counts(cloud: PointCloud, dims: Tuple[int, int, int]) -> np.ndarray:
    """Per-voxel point counts (before thresholding), shape ``dims``.

    Vectorized over the common case of a point touching exactly one voxel
    per axis; the rare boundary points that tie between two centers fall
    back to an explicit loop over their (at most eight) candidate voxels.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"grid dims must be three positive integers, got {dims}")
    u = _scaled_coordinates(cloud, dims)
    lo = np.ceil(u - 0.5).astype(np.int64)
    hi = np.floor(u + 0.5).astype(np.int64)
    lo = np.maximum(lo, 1)
    hi = np.minimum(hi, np.asarray(dims, dtype=np.int64))
    valid = np.all(lo <= hi, axis=1)
    tied = valid & np.any(hi > lo, axis=1)
    simple = valid & ~tied

    counts = np.zeros(dims, dtype=np.int64)
    idx = lo[simple] - 1
    np.add.at(counts, (idx[:, 0], idx[:, 1], idx[:, 2]), 1)
    for row in np.nonzero(tied)[0]:
        for ix in range(lo[row, 0], hi[row, 0] + 1):
            for iy in range(lo[row, 1], hi[row, 1] + 1):
                for iz in range(lo[row, 2], hi[row, 2] + 1):
                    counts[ix - 1, iy - 1, iz - 1] += 1
    return counts


def voxelize(cloud: PointCloud, dims: Tuple[int, int, int],
             threshold: int = 1) -> VoxelGrid:
    """Occupancy grid: voxels reached by at least ``threshold`` points."""
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    counts = voxel_counts(cloud, dims)
    return VoxelGrid((counts >= threshold).astype(np.uint8))

"""Voxel-grid computation of the five cluster shape measures.

A voxel is occupied iff some streamline segment passes through it; segments
are traversed by sampling at arc-length steps of half the voxel size and
marking the containing voxels (documented approximation). Volume is
occupied-count x voxel^3; surface area counts exposed faces (occupied faces
adjacent to an unoccupied or out-of-grid 6-neighbor) x voxel^2. Irregularity
normalizes surface area by the lateral area of the equal-volume,
equal-length cylinder, so a smooth cylinder scores ~1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, GridTooLarge
from .geometry import (
    FiberCluster,
    ShapeVector,
    bounding_box,
    cluster_mean_length,
    cluster_mean_span,
)

DEFAULT_VOXEL_SIZE = 1.0
MAX_VOXELS = 2 ** 28


@dataclass
class VoxelGrid:
    origin: np.ndarray          # (3,) mm, grid corner
    voxel_size: float           # mm, isotropic
    dims: tuple                 # 3 positive ints
    occupancy: np.ndarray       # bool array of shape dims

    @property
    def occupied_count(self) -> int:
        return int(self.occupancy.sum())


def _sample_segments(streamline: np.ndarray, step: float) -> np.ndarray:
    """Points along every segment at arc-length spacing <= step, endpoints included."""
    a = streamline[:-1]
    b = streamline[1:]
    seg_len = np.linalg.norm(b - a, axis=1)
    n_steps = np.maximum(np.ceil(seg_len / step).astype(int), 1)
    out = [streamline]
    for i in np.nonzero(n_steps > 1)[0]:
        t = np.arange(1, n_steps[i], dtype=np.float64)[:, None] / n_steps[i]
        out.append(a[i] + t * (b[i] - a[i]))
    return np.vstack(out)


def voxelize(c: FiberCluster, voxel_size: float = DEFAULT_VOXEL_SIZE,
             max_voxels: int = MAX_VOXELS) -> VoxelGrid:
    """Rasterize a cluster onto an isotropic occupancy grid.

    The grid covers the cluster bounding box with at least one empty voxel of
    margin on every side. Raises GridTooLarge when the voxel count exceeds
    max_voxels (signals an unreasonable voxel_size).
    """
    if not voxel_size > 0:
        raise DegenerateInput(f"voxel_size must be > 0, got {voxel_size}")
    lo, hi = bounding_box(c)
    origin = lo - voxel_size
    dims = np.floor((hi - origin) / voxel_size).astype(int) + 2
    if int(np.prod(dims)) > max_voxels:
        raise GridTooLarge(
            f"grid {tuple(dims)} = {int(np.prod(dims))} voxels exceeds cap {max_voxels}"
        )
    occ = np.zeros(tuple(dims), dtype=bool)
    step = voxel_size / 2.0
    for s in c.streamlines:
        pts = _sample_segments(s, step)
        idx = np.floor((pts - origin) / voxel_size).astype(int)
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(origin=origin, voxel_size=voxel_size, dims=tuple(int(d) for d in dims),
                     occupancy=occ)


def volume(g: VoxelGrid) -> float:
    """Occupied voxel count times voxel volume, mm^3."""
    return g.occupied_count * g.voxel_size ** 3


def surface_area(g: VoxelGrid) -> float:
    """Exposed-face count times voxel face area, mm^2."""
    occ = g.occupancy
    faces = 0
    for axis in range(3):
        pad = [(0, 0)] * 3
        pad[axis] = (1, 1)
        padded = np.pad(occ, pad)
        n = occ.shape[axis]
        lower = np.take(padded, np.arange(0, n), axis=axis)      # neighbor at i-1
        upper = np.take(padded, np.arange(2, n + 2), axis=axis)  # neighbor at i+1
        faces += int(np.sum(occ & ~lower)) + int(np.sum(occ & ~upper))
    return faces * g.voxel_size ** 2


def irregularity(volume_mm3: float, area_mm2: float, length_mm: float) -> float:
    """Surface area over the lateral area of the equal-volume, equal-length cylinder.

    The reference cylinder has diameter d = 2*sqrt(volume / (pi*length)), so
    the normalizer is pi*d*length. ~1 for a smooth cylinder, grows with
    surface complexity.
    """
    if volume_mm3 <= 0 or length_mm <= 0:
        raise DegenerateInput(
            f"need volume > 0 and length > 0, got {volume_mm3}, {length_mm}"
        )
    d = 2.0 * math.sqrt(volume_mm3 / (math.pi * length_mm))
    return area_mm2 / (math.pi * d * length_mm)


def compute_shape_vector(c: FiberCluster, voxel_size: float = DEFAULT_VOXEL_SIZE,
                         max_voxels: int = MAX_VOXELS) -> ShapeVector:
    """Assemble the five measures in canonical order for one cluster."""
    mean_len = cluster_mean_length(c)
    mean_span = cluster_mean_span(c)
    g = voxelize(c, voxel_size, max_voxels=max_voxels)
    vol = volume(g)
    area = surface_area(g)
    irr = irregularity(vol, area, mean_len)
    return ShapeVector(
        length=mean_len,
        span=mean_span,
        volume=vol,
        total_surface_area=area,
        irregularity=irr,
    )

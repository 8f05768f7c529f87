"""Fixed-size point-cloud sampling of fiber clusters.

Sampling pools all streamline points into one multiset and draws uniformly,
without replacement when the cluster has at least n points and with
replacement otherwise. Coordinates are never transformed: the regressor needs
anatomical size and position, so there is no centering or scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FiberCluster

DEFAULT_N_POINTS = 1024


@dataclass
class PointCloudSample:
    points: np.ndarray      # (N, 3) float64, mm, RAS; rows are source-cluster points
    cluster_id: str
    seed: int

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def random_sample(c: FiberCluster, n: int = DEFAULT_N_POINTS, seed: int = 0) -> PointCloudSample:
    """Draw n points uniformly from the cluster's point multiset; seeded."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    pool = c.all_points()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    replace = pool.shape[0] < n
    idx = rng.choice(pool.shape[0], size=n, replace=replace)
    return PointCloudSample(points=pool[idx], cluster_id=c.id, seed=seed)

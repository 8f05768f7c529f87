"""Core geometric types and exact polyline measurements.

Coordinates are millimeters in RAS (right-anterior-superior) convention.
All geometry runs in double precision; streamlines are (P, 3) float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Canonical ordering of the five shape measures, used everywhere a 5-vector
# is serialized (CSV columns, network outputs, standardizer statistics).
MEASURE_NAMES = ("length", "span", "volume", "total_surface_area", "irregularity")


@dataclass(frozen=True)
class ShapeVector:
    """The five shape measures of a fiber cluster.

    length (mm), span (mm), volume (mm^3), total_surface_area (mm^2),
    irregularity (dimensionless). All entries finite and >= 0.
    """

    length: float
    span: float
    volume: float
    total_surface_area: float
    irregularity: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"shape vector has non-finite entries: {vals}")
        if np.any(vals < 0):
            raise ValueError(f"shape vector has negative entries: {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in MEASURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "ShapeVector":
        arr = np.asarray(arr, dtype=np.float64).reshape(5)
        return cls(*(float(v) for v in arr))


def as_streamline(points) -> np.ndarray:
    """Validate and return a streamline as a (P, 3) float64 array.

    Rejects streamlines with fewer than 2 points or any non-finite
    coordinate (fail-fast keeps downstream statistics honest).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"streamline must be (P, 3), got shape {pts.shape}")
    if pts.shape[0] < 2:
        raise ValueError(f"streamline needs >= 2 points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("streamline contains NaN/Inf coordinates")
    return pts


@dataclass
class FiberCluster:
    """An ordered, non-empty set of streamlines with subject/cluster identity."""

    id: str
    subject_id: str
    streamlines: list = field(default_factory=list)

    def __post_init__(self):
        if not self.streamlines:
            raise ValueError(f"cluster {self.id!r} has no streamlines")
        self.streamlines = [as_streamline(s) for s in self.streamlines]

    @property
    def n_streamlines(self) -> int:
        return len(self.streamlines)

    def all_points(self) -> np.ndarray:
        """All points of all streamlines, stacked into one (M, 3) array."""
        return np.vstack(self.streamlines)


def streamline_length(s: np.ndarray) -> float:
    """Sum of Euclidean lengths of consecutive segments, in mm."""
    seg = np.diff(s, axis=0)
    return float(np.sum(np.sqrt(np.sum(seg * seg, axis=1))))


def streamline_span(s: np.ndarray) -> float:
    """Euclidean distance between the first and last point, in mm."""
    d = s[-1] - s[0]
    return float(np.sqrt(np.dot(d, d)))


def cluster_mean_length(c: FiberCluster) -> float:
    """Arithmetic mean of streamline lengths over the cluster."""
    return float(np.mean([streamline_length(s) for s in c.streamlines]))


def cluster_mean_span(c: FiberCluster) -> float:
    """Arithmetic mean of per-streamline endpoint distances.

    Convention: the bundle span is the mean of per-streamline spans,
    consistent with the mean-length definition above.
    """
    return float(np.mean([streamline_span(s) for s in c.streamlines]))


def bounding_box(c: FiberCluster) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise (min, max) corners over all points of the cluster."""
    pts = c.all_points()
    return pts.min(axis=0), pts.max(axis=0)

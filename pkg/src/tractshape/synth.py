"""Seeded generation of parametric fiber bundles with analytically known shape.

Bundles are tubes around a parametric centerline (straight cylinder, circular
arc, or helix). Each streamline is a centerline copy pushed out by a constant
uniform-in-disk radial offset, plus optional per-point Gaussian jitter.
Determinism: every cluster derives its RNG from a (seed, subject, cluster)
counter, so any single cluster is reproducible in isolation and generation
order never matters.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .geometry import FiberCluster
from .tckio import ClusterEntry, DatasetManifest, SubjectEntry, write_manifest, write_tck

KINDS = ("cylinder", "arc", "helix")


@dataclass(frozen=True)
class BundleSpec:
    """Parameters of one synthetic bundle.

    kind-specific centerline parameters:
      cylinder: length (mm)
      arc:      radius (mm) + angle (rad)
      helix:    radius (mm) + pitch (mm per turn) + turns
    """

    kind: str
    tube_radius: float
    n_streamlines: int
    points_per_streamline: int
    jitter_sigma: float = 0.0
    seed: int = 0
    length: float = 0.0
    radius: float = 0.0
    angle: float = 0.0
    pitch: float = 0.0
    turns: float = 0.0

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown bundle kind {self.kind!r}")
        if not self.tube_radius > 0:
            raise InvalidSpec("tube_radius must be > 0")
        if self.n_streamlines < 1:
            raise InvalidSpec("n_streamlines must be >= 1")
        if self.points_per_streamline < 2:
            raise InvalidSpec("points_per_streamline must be >= 2")
        if self.jitter_sigma < 0:
            raise InvalidSpec("jitter_sigma must be >= 0")
        if self.kind == "cylinder" and not self.length > 0:
            raise InvalidSpec("cylinder needs length > 0")
        if self.kind == "arc" and not (self.radius > 0 and self.angle > 0):
            raise InvalidSpec("arc needs radius > 0 and angle > 0")
        if self.kind == "helix" and not (self.radius > 0 and self.pitch > 0 and self.turns > 0):
            raise InvalidSpec("helix needs radius, pitch, turns > 0")


@dataclass(frozen=True)
class AnalyticTruth:
    """Closed-form centerline properties of the ideal (jitter-free) bundle.

    length/span are known for every kind; volume/surface_area/irregularity
    only for the cylinder (tube around a straight centerline, with end caps).
    """

    length: float
    span: float
    volume: float | None = None
    surface_area: float | None = None
    irregularity: float | None = None


def _centerline(spec: BundleSpec) -> tuple[np.ndarray, AnalyticTruth]:
    t = np.linspace(0.0, 1.0, spec.points_per_streamline)
    if spec.kind == "cylinder":
        L, r = spec.length, spec.tube_radius
        pts = np.column_stack([L * t, np.zeros_like(t), np.zeros_like(t)])
        lateral = 2.0 * math.pi * r * L
        caps = 2.0 * math.pi * r * r
        truth = AnalyticTruth(
            length=L,
            span=L,
            volume=math.pi * r * r * L,
            surface_area=lateral + caps,
            irregularity=(lateral + caps) / lateral,  # = 1 + r/L
        )
    elif spec.kind == "arc":
        R, theta = spec.radius, spec.angle
        phi = theta * t
        pts = np.column_stack([R * np.cos(phi), R * np.sin(phi), np.zeros_like(t)])
        truth = AnalyticTruth(length=R * theta, span=2.0 * R * math.sin(theta / 2.0))
    else:  # helix
        R, pitch, turns = spec.radius, spec.pitch, spec.turns
        phi = 2.0 * math.pi * turns * t
        z = pitch * turns * t
        pts = np.column_stack([R * np.cos(phi), R * np.sin(phi), z])
        length = turns * math.sqrt((2.0 * math.pi * R) ** 2 + pitch ** 2)
        span = float(np.linalg.norm(pts[-1] - pts[0]))
        truth = AnalyticTruth(length=length, span=span)
    return pts, truth


def _chord_frame(centerline: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of the plane perpendicular to the end-to-end chord."""
    chord = centerline[-1] - centerline[0]
    norm = np.linalg.norm(chord)
    u = chord / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
    ref = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(u, ref)) > 0.99:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return e1, e2


def generate_bundle(spec: BundleSpec) -> tuple[FiberCluster, AnalyticTruth]:
    """Generate one bundle; deterministic for a fixed spec (including seed).

    Streamlines are rigid translations of the centerline (so jitter-free
    length and span equal the analytic truth exactly) by uniform-in-disk
    offsets in the chord-normal plane.
    """
    spec.validate()
    centerline, truth = _centerline(spec)
    e1, e2 = _chord_frame(centerline)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))

    streamlines = []
    for _ in range(spec.n_streamlines):
        # uniform in disk of radius tube_radius
        u = rng.random()
        ang = rng.random() * 2.0 * math.pi
        rad = spec.tube_radius * math.sqrt(u)
        pts = centerline + (rad * math.cos(ang)) * e1 + (rad * math.sin(ang)) * e2
        if spec.jitter_sigma > 0:
            pts = pts + rng.normal(0.0, spec.jitter_sigma, size=pts.shape)
        streamlines.append(pts)
    cluster = FiberCluster(id=f"bundle-{spec.seed}", subject_id="", streamlines=streamlines)
    return cluster, truth


# --- dataset generation --------------------------------------------------------

# Documented sampling ranges for per-cluster parameters. Centerline lengths
# are drawn from the interior of LENGTH_RANGE so that jitter-inflated
# polyline lengths still land inside the documented 20-120 mm range.
LENGTH_RANGE = (20.0, 120.0)        # realized cluster length, mm
LENGTH_DRAW = (22.0, 115.0)         # centerline draw, mm
TUBE_RADIUS_RANGE = (1.0, 6.0)      # mm
STREAMLINES_RANGE = (12, 40)        # per cluster
POINTS_RANGE = (40, 120)            # per streamline
JITTER_FRAC = (0.04, 0.10)          # jitter sigma as a fraction of point spacing


def _cluster_seed(seed: int, subject_idx: int, cluster_idx: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(subject_idx, cluster_idx))


def spec_for_cluster(seed: int, subject_idx: int, cluster_idx: int) -> BundleSpec:
    """Draw one cluster's BundleSpec from the documented ranges, reproducibly."""
    ss = _cluster_seed(seed, subject_idx, cluster_idx)
    rng = np.random.Generator(np.random.PCG64(ss))
    kind = KINDS[rng.integers(len(KINDS))]
    length = rng.uniform(*LENGTH_DRAW)
    kw = {}
    if kind == "cylinder":
        kw["length"] = length
    elif kind == "arc":
        angle = rng.uniform(math.pi / 4, math.pi)
        kw["radius"] = length / angle
        kw["angle"] = angle
    else:
        turns = rng.uniform(0.5, 1.5)
        # radius < length / (2*pi*turns) so a positive pitch can hit the drawn length
        frac = rng.uniform(0.3, 0.9)
        radius = frac * length / (2.0 * math.pi * turns)
        circ = 2.0 * math.pi * radius
        per_turn = length / turns
        pitch = math.sqrt(per_turn ** 2 - circ ** 2)
        kw["radius"] = radius
        kw["pitch"] = pitch
        kw["turns"] = turns
    # derive a 63-bit scalar seed for the bundle from the same counter stream
    bundle_seed = int(rng.integers(0, 2 ** 63 - 1))
    points = int(rng.integers(POINTS_RANGE[0], POINTS_RANGE[1] + 1))
    spacing = length / (points - 1)
    return BundleSpec(
        kind=kind,
        tube_radius=float(rng.uniform(*TUBE_RADIUS_RANGE)),
        n_streamlines=int(rng.integers(STREAMLINES_RANGE[0], STREAMLINES_RANGE[1] + 1)),
        points_per_streamline=points,
        jitter_sigma=float(rng.uniform(*JITTER_FRAC) * spacing),
        seed=bundle_seed,
        **kw,
    )


def generate_dataset(out_dir, n_subjects: int, clusters_per_subject: int, seed: int) -> str:
    """Write TCK files plus a JSON manifest; returns the manifest path.

    Ground-truth analytic length/span are recorded in the manifest only where
    fully known; the shape oracle remains the training ground-truth source.
    """
    if clusters_per_subject < 1:
        raise InvalidSpec("clusters_per_subject must be >= 1")
    if n_subjects < 1:
        raise InvalidSpec("n_subjects must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    manifest = DatasetManifest(root=os.path.abspath(out_dir))
    for si in range(n_subjects):
        sid = f"sub-{si:04d}"
        subj_dir = os.path.join(out_dir, sid)
        os.makedirs(subj_dir, exist_ok=True)
        entry = SubjectEntry(subject_id=sid)
        for ci in range(clusters_per_subject):
            cid = f"cl-{ci:03d}"
            spec = spec_for_cluster(seed, si, ci)
            cluster, _truth = generate_bundle(spec)
            rel = os.path.join(sid, f"{cid}.tck")
            write_tck(cluster, os.path.join(out_dir, rel))
            entry.clusters.append(ClusterEntry(cluster_id=cid, file_path=rel))
        manifest.subjects.append(entry)
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest, manifest_path)
    return manifest_path

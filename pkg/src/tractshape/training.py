"""Dataset splitting, pair construction, the training loop, evaluation, and benchmarking."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Adam, scheduler_lr, slice_rows
from .errors import NonFiniteLoss, NonFiniteValue, TooFewSubjects, ZeroVariance
from .geometry import MEASURE_NAMES, FiberCluster
from .metrics import nmse, pearson_r
from .network import (
    Checkpoint,
    ShapeRegressor,
    SubnetworkConfig,
    TargetStandardizer,
    loss_total,
    predict,
)
from .sampling import DEFAULT_N_POINTS, random_sample
from .tckio import DatasetManifest, read_tck
from .voxel import compute_shape_vector


@dataclass
class TrainConfig:
    """Training hyperparameters. Defaults follow the published recipe."""

    batch_size: int = 128          # pairs per batch
    epochs: int = 200
    lr: float = 0.0005
    weight_decay: float = 0.005
    gamma: float = 0.1             # lr decay factor
    lr_step: int = 200             # epochs between decays
    alpha: float = 3.0             # weight of the pairwise Fourier term
    n_points: int = DEFAULT_N_POINTS
    split_fraction: float = 0.8
    seed: int = 42

    def __post_init__(self):
        if min(self.batch_size, self.epochs, self.lr_step, self.n_points) < 1:
            raise ValueError("batch_size, epochs, lr_step, n_points must be positive")
        if not (self.lr > 0 and self.gamma > 0):
            raise ValueError("lr and gamma must be positive")
        if self.weight_decay < 0 or self.alpha < 0:
            raise ValueError("weight_decay and alpha must be >= 0")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must be in (0, 1)")


def desk_config(**overrides) -> TrainConfig:
    """Scaled-down configuration for CPU-sized experiments."""
    base = dict(batch_size=16, epochs=50, lr=1e-3, weight_decay=0.0,
                lr_step=40, gamma=0.1)
    base.update(overrides)
    return TrainConfig(**base)


def split_dataset(manifest: DatasetManifest, fraction: float = 0.8,
                  seed: int = 42) -> tuple[list, list]:
    """Subject-level 80/20 split: all clusters of a subject land on one side."""
    sids = [s.subject_id for s in manifest.subjects]
    if len(sids) < 2:
        raise TooFewSubjects(f"need >= 2 subjects, got {len(sids)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0,))))
    order = rng.permutation(len(sids))
    n_train = min(max(int(round(fraction * len(sids))), 1), len(sids) - 1)
    train = sorted(sids[i] for i in order[:n_train])
    test = sorted(sids[i] for i in order[n_train:])
    return train, test


def make_pairs(keys: list, epoch: int, seed: int) -> list:
    """Seeded per-epoch disjoint pairing; an odd leftover pairs with the first."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2, epoch))))
    order = [keys[i] for i in rng.permutation(len(keys))]
    pairs = [(order[i], order[i + 1]) for i in range(0, len(order) - 1, 2)]
    if len(order) % 2 == 1:
        pairs.append((order[-1], order[0]))
    return pairs


def _cloud_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(7, index))
    return int(ss.generate_state(1)[0])


def load_point_clouds(manifest: DatasetManifest, n_points: int, seed: int,
                      subject_ids=None) -> dict:
    """Read TCK files and sample one fixed point cloud per cluster.

    Sample seeds derive from (seed, cluster index in manifest order), so any
    single cloud is reproducible in isolation.
    """
    wanted = None if subject_ids is None else set(subject_ids)
    clouds = {}
    index = 0
    for subj, cl in manifest.iter_clusters():
        if wanted is None or subj.subject_id in wanted:
            cluster = read_tck(manifest.cluster_path(cl), cluster_id=cl.cluster_id,
                               subject_id=subj.subject_id)
            sample = random_sample(cluster, n_points, _cloud_seed(seed, index))
            clouds[(subj.subject_id, cl.cluster_id)] = sample.points.astype(np.float32)
        index += 1
    return clouds


def train(config: TrainConfig, manifest: DatasetManifest, shapes: dict,
          net_config: SubnetworkConfig = SubnetworkConfig(),
          progress=None) -> tuple[Checkpoint, list]:
    """Run the Siamese training loop; returns (checkpoint, history rows).

    shapes maps (subject_id, cluster_id) to the ground-truth ShapeVector.
    Fully deterministic for a fixed (config, manifest, shapes).
    """
    train_sids, _ = split_dataset(manifest, config.split_fraction, config.seed)
    keys = [(s.subject_id, c.cluster_id) for s in manifest.subjects
            if s.subject_id in set(train_sids) for c in s.clusters]
    missing = [k for k in keys if k not in shapes]
    if missing:
        raise KeyError(f"{len(missing)} training clusters lack ground truth, e.g. {missing[0]}")

    targets = np.array([shapes[k].as_array() for k in keys])
    standardizer = TargetStandardizer.fit(targets)
    z = {k: standardizer.transform(shapes[k].as_array()).astype(np.float32) for k in keys}
    clouds = load_point_clouds(manifest, config.n_points, config.seed, train_sids)

    model = ShapeRegressor(net_config, seed=config.seed)
    opt = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)

    history = []
    for epoch in range(config.epochs):
        opt.lr = scheduler_lr(config.lr, epoch, config.gamma, config.lr_step)
        pairs = make_pairs(keys, epoch, config.seed)
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, len(pairs), config.batch_size):
            batch = pairs[start:start + config.batch_size]
            xab = np.concatenate([clouds[a] for a, _ in batch]
                                 + [clouds[b] for _, b in batch])
            gt1 = np.stack([z[a] for a, _ in batch])
            gt2 = np.stack([z[b] for _, b in batch])
            try:
                # both Siamese branches in one forward: bigger matmuls
                out = model.forward(xab, 2 * len(batch))
                o1 = slice_rows(out, 0, len(batch))
                o2 = slice_rows(out, len(batch), 2 * len(batch))
                total, parts = loss_total(o1, o2, gt1, gt2, config.alpha)
            except NonFiniteValue as e:
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {e}"
                ) from e
            total.backward()
            opt.step()
            opt.zero_grad()
            sums += (parts["l1"], parts["l2"], parts["lsf"], parts["total"])
            n_batches += 1
        means = sums / max(n_batches, 1)
        history.append({"epoch": epoch, "lr": opt.lr, "l1": means[0], "l2": means[1],
                        "lsf": means[2], "total": means[3]})
        if progress is not None:
            progress(history[-1])

    ckpt = Checkpoint(config=net_config,
                      params={k: v.data.copy() for k, v in model.params.items()},
                      standardizer=standardizer, n_points=config.n_points,
                      train_config=asdict(config), seed=config.seed)
    return ckpt, history


# --- evaluation -------------------------------------------------------------------


@dataclass
class MeasureMetrics:
    measure: str
    r: float            # NaN when undefined (constant predictions)
    nmse: float
    note: str = ""


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def averages(self) -> dict:
        rs = np.array([m.r for m in self.rows if np.isfinite(m.r)])
        es = np.array([m.nmse for m in self.rows])
        return {
            "r_mean": float(rs.mean()) if rs.size else float("nan"),
            "r_std": float(rs.std()) if rs.size else float("nan"),
            "nmse_mean": float(es.mean()),
            "nmse_std": float(es.std()),
        }


def predictions_for(ckpt: Checkpoint, manifest: DatasetManifest, subject_ids,
                    seed: int) -> tuple[list, np.ndarray]:
    """Predicted shape vectors for all clusters of the given subjects."""
    clouds = load_point_clouds(manifest, ckpt.n_points, seed, subject_ids)
    reg = ckpt.regressor()
    keys = sorted(clouds)
    preds = np.zeros((len(keys), 5))
    for i, k in enumerate(keys):
        out = reg.forward(clouds[k], 1)
        preds[i] = np.maximum(ckpt.standardizer.inverse(out.data[0]), 0.0)
    return keys, preds


def evaluate(ckpt: Checkpoint, manifest: DatasetManifest, test_ids, shapes: dict,
             seed: int | None = None) -> MetricsReport:
    """Per-measure Pearson r and nMSE on the test subjects."""
    seed = ckpt.seed if seed is None else seed
    keys, preds = predictions_for(ckpt, manifest, test_ids, seed)
    gts = np.array([shapes[k].as_array() for k in keys])
    report = MetricsReport()
    for j, name in enumerate(MEASURE_NAMES):
        err = nmse(preds[:, j], gts[:, j])
        try:
            r = pearson_r(preds[:, j], gts[:, j])
            note = ""
        except ZeroVariance as e:
            r, note = float("nan"), str(e)
        report.rows.append(MeasureMetrics(measure=name, r=r, nmse=err, note=note))
    return report


# --- runtime benchmark --------------------------------------------------------------


@dataclass
class BenchResult:
    method: str
    mean_ms: float
    std_ms: float
    n_timings: int
    per_cluster: list = field(default_factory=list)   # (cluster key, n_streamlines, mean ms)


def bench(ckpt: Checkpoint, clusters: dict, voxel_size: float, repetitions: int,
          warmup: int = 1, seed: int = 42) -> list:
    """Per-cluster wall-clock of neural inference (incl. sampling) vs the voxel oracle.

    clusters maps (subject_id, cluster_id) to FiberCluster. Timing is
    single-threaded per cluster; warm-up iterations are excluded.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    reg = ckpt.regressor()

    def time_neural(cluster: FiberCluster) -> float:
        t0 = time.perf_counter()
        sample = random_sample(cluster, ckpt.n_points, seed)
        predict(sample, ckpt, regressor=reg)
        return (time.perf_counter() - t0) * 1e3

    def time_oracle(cluster: FiberCluster) -> float:
        t0 = time.perf_counter()
        compute_shape_vector(cluster, voxel_size)
        return (time.perf_counter() - t0) * 1e3

    results = []
    for method, fn in (("neural", time_neural), ("oracle", time_oracle)):
        all_ms = []
        per_cluster = []
        for key in sorted(clusters):
            cluster = clusters[key]
            for _ in range(warmup):
                fn(cluster)
            times = [fn(cluster) for _ in range(repetitions)]
            all_ms.extend(times)
            per_cluster.append((key, cluster.n_streamlines, float(np.mean(times))))
        arr = np.array(all_ms)
        results.append(BenchResult(method=method, mean_ms=float(arr.mean()),
                                   std_ms=float(arr.std()), n_timings=arr.size,
                                   per_cluster=per_cluster))
    return results

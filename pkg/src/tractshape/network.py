"""Siamese shared-weight point-cloud regressor and its hybrid pairwise loss.

The subnetwork is a PointNet-style trunk without a spatial transformer: a
shared per-point MLP (3 -> 64 -> 128 -> 1024, relu), column-wise max pooling
over the points of each sample, then a fully connected head
(1024 -> 512 -> 256 -> 5). No input normalization anywhere: absolute size and
position carry signal. Targets are z-scored per measure on the training split;
the statistics live in the checkpoint and are inverted exactly at inference.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .autodiff import (
    Tensor,
    add,
    add_bias,
    dft_magnitude,
    matmul,
    mse,
    relu,
    scalar_mul,
    segment_max,
    sub,
)
from .errors import CheckpointMismatch, IoFailure, SchemaError, ShapeMismatch
from .geometry import ShapeVector
from .sampling import PointCloudSample

CHECKPOINT_MAGIC = b"TSNCKPT1"

DEFAULT_POINT_MLP = (3, 64, 128, 1024)
DEFAULT_HEAD = (1024, 512, 256, 5)
DEFAULT_ALPHA = 3.0

# fixed canonicalization scale (mm): roughly one bundle length
INPUT_SCALE = 50.0


@dataclass(frozen=True)
class SubnetworkConfig:
    point_mlp: tuple = DEFAULT_POINT_MLP
    head: tuple = DEFAULT_HEAD

    def __post_init__(self):
        if self.point_mlp[0] != 3:
            raise ValueError("point MLP input width must be 3")
        if self.head[0] != self.point_mlp[-1]:
            raise ValueError("head input width must match trunk output width")
        if self.head[-1] != 5:
            raise ValueError("head output width must be 5 (one per shape measure)")


@dataclass
class TargetStandardizer:
    """Per-measure z-score statistics computed on the training split."""

    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def fit(cls, targets: np.ndarray) -> "TargetStandardizer":
        targets = np.asarray(targets, dtype=np.float64)
        mu = targets.mean(axis=0)
        sigma = targets.std(axis=0)
        if np.any(sigma <= 0):
            raise ValueError(f"zero variance in a target measure: sigma={sigma}")
        return cls(mu=mu, sigma=sigma)

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mu) / self.sigma

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.sigma + self.mu


class ShapeRegressor:
    """The subnetwork, holding its parameter tensors.

    Weight sharing is by identity: every forward call in a Siamese pair reads
    these same Tensor objects.
    """

    def __init__(self, config: SubnetworkConfig = SubnetworkConfig(), seed: int = 0,
                 params: dict | None = None):
        self.config = config
        if params is not None:
            self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        else:
            self.params = self._init_params(seed)

    def _init_params(self, seed: int) -> dict:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        params = {}
        for prefix, widths in (("trunk", self.config.point_mlp), ("head", self.config.head)):
            for i in range(len(widths) - 1):
                fan_in, fan_out = widths[i], widths[i + 1]
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                # small random biases keep pre-activations off the exact relu kink
                b = rng.uniform(-0.05, 0.05, size=fan_out)
                params[f"{prefix}{i}.w"] = Tensor(w.astype(np.float32), requires_grad=True)
                params[f"{prefix}{i}.b"] = Tensor(b.astype(np.float32), requires_grad=True)
        return params

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def forward(self, points: np.ndarray, n_samples: int = 1) -> Tensor:
        """Run the subnetwork on n_samples stacked point clouds.

        points: (n_samples * N, 3) float array; returns a (n_samples, 5)
        tensor of standardized shape predictions.

        Each cloud is canonicalized first: centered at its centroid (the
        target measures are translation-invariant) and divided by the fixed
        INPUT_SCALE, which preserves absolute size information while keeping
        activations near unit magnitude.
        """
        pts = np.ascontiguousarray(points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] % n_samples:
            raise ShapeMismatch(
                f"forward expects (n_samples * N, 3) points, got {pts.shape} "
                f"for n_samples={n_samples}")
        pts = pts.reshape(n_samples, -1, 3)
        pts = (pts - pts.mean(axis=1, keepdims=True)) / INPUT_SCALE
        x = Tensor(pts.reshape(-1, 3))
        n_trunk = len(self.config.point_mlp) - 1
        for i in range(n_trunk):
            x = add_bias(matmul(x, self.params[f"trunk{i}.w"]), self.params[f"trunk{i}.b"])
            x = relu(x)
        x = segment_max(x, n_samples)
        n_head = len(self.config.head) - 1
        for i in range(n_head):
            x = add_bias(matmul(x, self.params[f"head{i}.w"]), self.params[f"head{i}.b"])
            if i < n_head - 1:
                x = relu(x)
        return x


def loss_sf(o1: Tensor, o2: Tensor, gt1: np.ndarray, gt2: np.ndarray) -> Tensor:
    """Pairwise Fourier loss: MSE of DFT magnitude spectra of the differences.

    The DFT runs along the five-measure axis of each pair; batches average
    over pairs. Ground-truth spectra are constants (no gradient).
    """
    gt_diff = np.asarray(gt1, dtype=np.float32) - np.asarray(gt2, dtype=np.float32)
    gt_mag = dft_magnitude(Tensor(gt_diff))
    out_mag = dft_magnitude(sub(o1, o2))
    return mse(out_mag, gt_mag)


def loss_total(o1: Tensor, o2: Tensor, gt1: np.ndarray, gt2: np.ndarray,
               alpha: float = DEFAULT_ALPHA) -> tuple[Tensor, dict]:
    """Hybrid loss: per-side MSEs plus alpha times the pairwise Fourier term."""
    t1 = Tensor(np.asarray(gt1, dtype=np.float32))
    t2 = Tensor(np.asarray(gt2, dtype=np.float32))
    l1 = mse(o1, t1)
    l2 = mse(o2, t2)
    lsf = loss_sf(o1, o2, gt1, gt2)
    total = add(add(l1, l2), scalar_mul(lsf, alpha))
    parts = {"l1": l1.item(), "l2": l2.item(), "lsf": lsf.item(), "total": total.item()}
    return total, parts


# --- checkpoint -----------------------------------------------------------------


@dataclass
class Checkpoint:
    """Model parameters plus target statistics and a training-config echo."""

    config: SubnetworkConfig
    params: dict                      # name -> float32 ndarray
    standardizer: TargetStandardizer
    n_points: int
    train_config: dict = field(default_factory=dict)
    seed: int = 0
    version: str = __version__

    def regressor(self) -> ShapeRegressor:
        return ShapeRegressor(self.config, params=self.params)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Serialize: magic, u32 header length, JSON header, then raw <f4 arrays."""
    names = sorted(ckpt.params)
    header = {
        "version": ckpt.version,
        "point_mlp": list(ckpt.config.point_mlp),
        "head": list(ckpt.config.head),
        "n_points": ckpt.n_points,
        "seed": ckpt.seed,
        "train_config": ckpt.train_config,
        "mu": [float(v) for v in ckpt.standardizer.mu],
        "sigma": [float(v) for v in ckpt.standardizer.sigma],
        "params": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for n in names:
        buf.write(np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes())
    try:
        with open(path, "wb") as f:
            f.write(buf.getvalue())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if raw[:8] != CHECKPOINT_MAGIC:
        raise SchemaError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = arr.copy()
        offset += count * 4
    config = SubnetworkConfig(point_mlp=tuple(header["point_mlp"]),
                              head=tuple(header["head"]))
    standardizer = TargetStandardizer(mu=np.array(header["mu"], dtype=np.float64),
                                      sigma=np.array(header["sigma"], dtype=np.float64))
    return Checkpoint(config=config, params=params, standardizer=standardizer,
                      n_points=int(header["n_points"]),
                      train_config=header.get("train_config", {}),
                      seed=int(header.get("seed", 0)),
                      version=header.get("version", "?"))


def predict(sample: PointCloudSample, ckpt: Checkpoint,
            regressor: ShapeRegressor | None = None) -> ShapeVector:
    """Inference for one sample: forward pass plus target de-standardization."""
    if sample.n_points != ckpt.n_points:
        raise CheckpointMismatch(
            f"sample has {sample.n_points} points, checkpoint expects {ckpt.n_points}"
        )
    reg = regressor if regressor is not None else ckpt.regressor()
    out = reg.forward(sample.points.astype(np.float32), 1)
    phys = ckpt.standardizer.inverse(out.data[0])
    # raw outputs can dip below zero early in training; clip to the physical domain
    return ShapeVector.from_array(np.maximum(phys, 0.0))

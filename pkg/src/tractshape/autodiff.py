"""Minimal reverse-mode automatic differentiation over dense float32 tensors.

Op set: matmul, add_bias, relu, segment max over rows, mean squared error,
tensor add/sub, scalar add/mul, and differentiable DFT magnitude. Each
forward op checks for NaN/Inf and raises NonFiniteValue. Reductions
accumulate in float64; tensor storage and matmuls stay float32.

A graph instance is confined to one thread; independent graphs may run in
parallel. All ops are bitwise deterministic for fixed inputs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch


def _check_finite(arr: np.ndarray, op: str) -> None:
    # NaN/Inf propagate through the sum, so one reduction checks the whole array
    s = float(np.sum(arr, dtype=np.float64))
    if not math.isfinite(s):
        raise NonFiniteValue(f"{op} produced non-finite values")


class Tensor:
    """A float32 array with an accumulated gradient and a backward closure."""

    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self._grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        """Add g to the gradient buffer.

        own=True promises g is a freshly built array the caller will not
        touch again, so it can be adopted as the buffer without copying.
        """
        if self._grad is None:
            self._grad = g if own else g.copy()
        else:
            self._grad += g

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return self.data.item()

    def backward(self) -> None:
        """Reverse-propagate from this (scalar) tensor through the graph."""
        if self.data.size != 1:
            raise ShapeMismatch("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data), own=True)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
             f"matmul shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data
    _check_finite(out_data, "matmul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T, own=True)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g, own=True)

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    _require(x.data.ndim == 2 and b.data.ndim == 1 and x.shape[1] == b.shape[0],
             f"add_bias shapes {x.shape} + {b.shape}")
    out_data = x.data + b.data
    _check_finite(out_data, "add_bias")

    def backward(g):
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0), own=True)
        if x.requires_grad:
            # g is this node's dead gradient buffer; hand it off without a copy
            x.accumulate_grad(g, own=True)

    return Tensor(out_data, _parents=(x, b), _backward=backward)


def relu(x: Tensor) -> Tensor:
    # max(finite, 0) stays finite: no check needed
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            # g is this node's dead buffer: mask it in place and hand it off
            np.multiply(g, out_data > 0, out=g)
            x.accumulate_grad(g, own=True)

    return Tensor(out_data, _parents=(x,), _backward=backward)


def segment_max(x: Tensor, n_segments: int = 1) -> Tensor:
    """Per-column max over contiguous row blocks; (S*R, F) -> (S, F).

    The gradient routes only to the argmax row of each segment; numpy argmax
    breaks ties toward the lowest row index, which is the documented rule.
    """
    rows, cols = x.shape
    _require(rows % n_segments == 0, f"{rows} rows not divisible into {n_segments} segments")
    per = rows // n_segments
    blocks = x.data.reshape(n_segments, per, cols)
    # a max over finite inputs stays finite: no check needed
    out_data = blocks.max(axis=1)                                 # (S, F)

    def backward(g):
        if x.requires_grad:
            # argmax only here: inference never pays for routing indices.
            # The boolean mask against the exact max keeps numpy's
            # lowest-index tie rule and is much faster than float argmax.
            arg = (blocks == out_data[:, None, :]).argmax(axis=1)
            gx = np.zeros(blocks.shape, dtype=blocks.dtype)
            np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
            x.accumulate_grad(gx.reshape(rows, cols), own=True)

    return Tensor(out_data, _parents=(x,), _backward=backward)


def max_over_rows(x: Tensor) -> Tensor:
    """Column-wise max over all rows; (R, F) -> (1, F)."""
    return segment_max(x, 1)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice x[start:stop]; the gradient scatters back."""
    _require(0 <= start < stop <= x.shape[0],
             f"slice [{start}:{stop}] out of range for {x.shape}")
    out_data = x.data[start:stop]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros(x.shape, dtype=x.data.dtype)
            gx[start:stop] = g
            x.accumulate_grad(gx, own=True)

    return Tensor(out_data, _parents=(x,), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"add shapes {a.shape} + {b.shape}")
    out_data = a.data + b.data
    _check_finite(out_data, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"sub shapes {a.shape} - {b.shape}")
    out_data = a.data - b.data
    _check_finite(out_data, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g, own=True)

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    out_data = x.data * np.float32(c)
    _check_finite(out_data, "scalar_mul")

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * np.float32(c), own=True)

    return Tensor(out_data, _parents=(x,), _backward=backward)


def scalar_add(x: Tensor, c: float) -> Tensor:
    out_data = x.data + np.float32(c)
    _check_finite(out_data, "scalar_add")

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)

    return Tensor(out_data, _parents=(x,), _backward=backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements (float64 accumulation)."""
    _require(pred.shape == target.shape, f"mse shapes {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    out_data = np.float32(np.mean(diff * diff))
    _check_finite(np.asarray(out_data), "mse")
    scale = 2.0 / pred.data.size

    def backward(g):
        gd = (g * scale * diff).astype(np.float32)
        if target.requires_grad:
            target.accumulate_grad(-gd, own=True)
        if pred.requires_grad:
            pred.accumulate_grad(gd, own=True)

    return Tensor(out_data, _parents=(pred, target), _backward=backward)


_DFT_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _dft_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _DFT_CACHE:
        k = np.arange(n)[:, None]
        m = np.arange(n)[None, :]
        ang = 2.0 * np.pi * k * m / n
        _DFT_CACHE[n] = (np.cos(ang), np.sin(ang))
    return _DFT_CACHE[n]


def dft_magnitude(x: Tensor) -> Tensor:
    """|X_k| of the direct DFT along the last axis; (B, N) or (N,) layout.

    X_k = sum_n x_n * e^{-j 2 pi k n / N}, evaluated by the O(N^2)
    definition. The gradient of |X_k| at X_k = 0 is defined as 0
    (documented subgradient choice).
    """
    data = x.data
    squeeze = data.ndim == 1
    if squeeze:
        data = data[None, :]
    _require(data.ndim == 2, f"dft_magnitude needs 1-D or 2-D input, got {x.shape}")
    n = data.shape[1]
    cos_t, sin_t = _dft_tables(n)
    # accumulate the O(N^2) sums in float64; only the output is rounded to f32
    data64 = data.astype(np.float64)
    re = data64 @ cos_t.T        # Re X_k = sum_n x_n cos(2 pi k n / N)
    im = -(data64 @ sin_t.T)     # Im X_k = -sum_n x_n sin(2 pi k n / N)
    mag = np.sqrt(re * re + im * im)
    out_data = mag[0] if squeeze else mag
    _check_finite(out_data, "dft_magnitude")

    def backward(g):
        if not x.requires_grad:
            return
        g2 = g[None, :] if squeeze else g
        safe = np.where(mag == 0.0, 1.0, mag)
        cr = np.where(mag == 0.0, 0.0, g2 * re / safe)
        ci = np.where(mag == 0.0, 0.0, g2 * im / safe)
        gx = (cr @ cos_t - ci @ sin_t).astype(np.float32)
        x.accumulate_grad(gx[0] if squeeze else gx, own=True)

    return Tensor(out_data, _parents=(x,), _backward=backward)


# --- optimizer -----------------------------------------------------------------


class Adam:
    """Adam with coupled-L2 weight decay (decay added to the gradient)."""

    def __init__(self, params, lr: float = 5e-4, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                g = g + np.float32(self.weight_decay) * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= np.float32(self.lr) * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def scheduler_lr(initial_lr: float, step_index: int, gamma: float = 0.1,
                 step_size: int = 200) -> float:
    """Step decay: initial_lr * gamma^floor(step_index / step_size)."""
    return initial_lr * gamma ** (step_index // step_size)

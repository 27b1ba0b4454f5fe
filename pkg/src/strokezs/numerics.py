"""Minimal dense float32 tensor engine with reverse-mode differentiation.

Define-by-run: while a Tape is active (``with Tape() as t:``), every op
appends its backward rule to the tape; ``t.backward(loss)`` seeds the
scalar loss gradient and replays the rules in exact reverse order. With
no active tape, ops are pure functions and safe to call from any thread.
Gradients accumulate additively across fan-out.
"""

from __future__ import annotations

import math
import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "scale",
    "matmul",
    "linear",
    "relu",
    "reshape",
    "transpose",
    "softmax",
    "masked_fill",
    "layer_norm",
    "embedding",
    "conv2d",
    "global_avg_pool",
    "cross_entropy",
    "multi_head_attention",
    "grad_check",
]


class Tensor:
    """A float32 array plus an optional accumulated gradient of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


_tls = threading.local()


def _stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of backward rules for one forward pass. One thread only."""

    def __init__(self):
        self._nodes: list = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, backward_fn) -> None:
        self._nodes.append(backward_fn)

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ValueError("backward target must be a scalar tensor")
        loss.grad = np.ones((), dtype=np.float32)
        for fn in reversed(self._nodes):
            fn()


def _acc(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise ValueError(f"gradient shape {g.shape} != tensor shape {t.data.shape}")
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(np.float32, copy=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; numpy broadcasting is allowed (residuals, biases)."""
    out = Tensor(a.data + b.data)
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            _acc(a, _unbroadcast(out.grad, a.data.shape))
            _acc(b, _unbroadcast(out.grad, b.data.shape))

        tape.record(backward)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(x, out.grad * c)

        tape.record(backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dimensions must match exactly."""
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(f"batch dims differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data)
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            _acc(a, out.grad @ b.data.swapaxes(-1, -2))
            _acc(b, a.data.swapaxes(-1, -2) @ out.grad)

        tape.record(backward)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` for 2-D ``x``."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"linear shapes mismatch: {x.data.shape} @ {w.data.shape}")
    out = Tensor(x.data @ w.data + b.data)
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            _acc(x, out.grad @ w.data.T)
            _acc(w, x.data.T @ out.grad)
            _acc(b, out.grad.sum(axis=0))

        tape.record(backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    tape = active_tape()
    if tape is not None:
        mask = x.data > 0

        def backward():
            if out.grad is not None:
                _acc(x, out.grad * mask)

        tape.record(backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    tape = active_tape()
    if tape is not None:
        orig = x.data.shape

        def backward():
            if out.grad is not None:
                _acc(x, out.grad.reshape(orig))

        tape.record(backward)
    return out


def transpose(x: Tensor, axes) -> Tensor:
    out = Tensor(x.data.transpose(axes))
    tape = active_tape()
    if tape is not None:
        inv = np.argsort(axes)

        def backward():
            if out.grad is not None:
                _acc(x, out.grad.transpose(inv))

        tape.record(backward)
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis. Rows may contain -inf (masked) entries."""
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            inner = (out.grad * y).sum(axis=-1, keepdims=True)
            _acc(x, y * (out.grad - inner))

        tape.record(backward)
    return out


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true; no gradient flows to them."""
    mask = np.broadcast_to(np.asarray(mask, bool), x.data.shape)
    out = Tensor(np.where(mask, np.float32(value), x.data))
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(x, np.where(mask, np.float32(0.0), out.grad))

        tape.record(backward)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = centered * inv
    out = Tensor(xhat * gamma.data + beta.data)
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            lead = tuple(range(out.grad.ndim - 1))
            _acc(gamma, (out.grad * xhat).sum(axis=lead))
            _acc(beta, out.grad.sum(axis=lead))
            dxhat = out.grad * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _acc(x, (inv * (dxhat - m1 - xhat * m2)).astype(np.float32))

        tape.record(backward)
    return out


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]``; backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError(f"index out of range for table of {table.data.shape[0]} rows")
    out = Tensor(table.data[idx])
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, out.grad)
            _acc(table, gt)

        tape.record(backward)
    return out


def _im2col(xp: np.ndarray, h_out: int, w_out: int, stride: int) -> np.ndarray:
    c_in = xp.shape[2]
    cols = np.empty((h_out, w_out, 3, 3, c_in), np.float32)
    for di in range(3):
        for dj in range(3):
            cols[:, :, di, dj, :] = xp[
                di : di + h_out * stride : stride, dj : dj + w_out * stride : stride, :
            ]
    return cols


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with padding 1.

    ``x`` is (H, W, Cin), ``kernel`` is (3, 3, Cin, Cout); the output is
    (ceil(H/stride), ceil(W/stride), Cout).
    """
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    if x.data.ndim != 3 or kernel.data.shape[:2] != (3, 3) or kernel.data.shape[2] != x.data.shape[2]:
        raise ValueError(f"conv2d shapes mismatch: {x.data.shape} with {kernel.data.shape}")
    h, w, c_in = x.data.shape
    c_out = kernel.data.shape[3]
    h_out = -(-h // stride)
    w_out = -(-w // stride)
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    cols = _im2col(xp, h_out, w_out, stride).reshape(h_out * w_out, 9 * c_in)
    wmat = kernel.data.reshape(9 * c_in, c_out)
    out = Tensor((cols @ wmat).reshape(h_out, w_out, c_out))
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            g = out.grad.reshape(h_out * w_out, c_out)
            _acc(kernel, (cols.T @ g).reshape(kernel.data.shape))
            gcols = (g @ wmat.T).reshape(h_out, w_out, 3, 3, c_in)
            gxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    gxp[
                        di : di + h_out * stride : stride,
                        dj : dj + w_out * stride : stride,
                        :,
                    ] += gcols[:, :, di, dj, :]
            _acc(x, gxp[1 : h + 1, 1 : w + 1, :])

        tape.record(backward)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(H, W, C) feature map to a C-vector of per-channel spatial means."""
    if x.data.ndim != 3:
        raise ValueError(f"expected (H, W, C), got {x.data.shape}")
    h, w, _ = x.data.shape
    out = Tensor(x.data.mean(axis=(0, 1)))
    tape = active_tape()
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.broadcast_to(out.grad / np.float32(h * w), x.data.shape)
            _acc(x, g.astype(np.float32))

        tape.record(backward)
    return out


def cross_entropy(logits: Tensor, target_class: int) -> Tensor:
    """Negative log softmax probability of ``target_class``, max-stabilized."""
    k = logits.data.shape[0]
    if logits.data.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D logits vector")
    if not 0 <= target_class < k:
        raise ValueError(f"target class {target_class} out of range for {k} classes")
    shifted = logits.data - logits.data.max()
    lse = np.log(np.exp(shifted).sum())
    out = Tensor(np.float32(lse - shifted[target_class]))
    tape = active_tape()
    if tape is not None:
        probs = np.exp(shifted - lse)

        def backward():
            if out.grad is None:
                return
            g = probs.copy()
            g[target_class] -= 1.0
            _acc(logits, g * out.grad)

        tape.record(backward)
    return out


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    heads: int,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over S key positions, h heads.

    Returns the (T, d) output and the (heads, T, S) attention weights.
    ``mask`` is a boolean (T, S) array marking positions to exclude.
    """
    t_len, d = queries.data.shape
    s_len = keys.data.shape[0]
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x: Tensor, n: int) -> Tensor:
        return transpose(reshape(x, (n, heads, dh)), (1, 0, 2))

    q = split(matmul(queries, wq), t_len)
    k = split(matmul(keys, wk), s_len)
    v = split(matmul(values, wv), s_len)

    scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = masked_fill(scores, mask[None, :, :], -np.inf)
    weights = softmax(scores)
    mixed = matmul(weights, v)  # (heads, T, dh)
    merged = reshape(transpose(mixed, (1, 0, 2)), (t_len, d))
    return matmul(merged, wo), weights


def grad_check(f, x: Tensor, epsilon: float) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must map ``x`` to a scalar Tensor and be smooth at ``x``. The
    relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x.grad = None
    with Tape() as tape:
        out = f(x)
        if not isinstance(out, Tensor) or out.data.shape != ():
            raise ValueError("f must return a scalar Tensor")
        tape.backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + np.float32(epsilon)
        hi = float(flat[i])
        fp = float(f(x).data)
        flat[i] = orig - np.float32(epsilon)
        lo = float(flat[i])
        fm = float(f(x).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (hi - lo)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))

"""Minimal dense-tensor core with reverse-mode differentiation.

A fresh tape is implicit in every forward pass: each tensor records its
parents and a monotonically increasing creation index, and ``backward``
replays the closures in strict reverse creation order, so gradients are
bit-for-bit reproducible for an identical tape. 64-bit floats are the
default; nothing here broadcasts except row-vector bias addition.
"""

from __future__ import annotations

import itertools
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

__all__ = [
    "Tensor",
    "param",
    "constant",
    "matmul",
    "add",
    "scale",
    "scale_rows",
    "mul_const",
    "reshape",
    "concat",
    "gather_rows",
    "segment_sum",
    "segment_softmax",
    "mean_rows",
    "softmax",
    "relu",
    "elu",
    "sum_all",
    "cross_entropy_soft",
    "mse",
    "backward",
    "save_checkpoint",
    "load_checkpoint",
]

_counter = itertools.count()

LOG_EPS = 1e-12


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_order")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward_fn = backward_fn
        self._order = next(_counter)

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64))


def _op(data, parents, backward_fn) -> Tensor:
    return Tensor(data, parents=tuple(parents), backward_fn=backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise InputError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _op(out_data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a row vector added to every row of ``a``."""
    if a.data.shape == b.data.shape:
        def bwd(g):
            a._accumulate(g)
            b._accumulate(g)
    elif a.data.ndim == 2 and b.data.ndim in (1, 2) and b.data.shape[-1] == a.data.shape[1] \
            and (b.data.ndim == 1 or b.data.shape[0] == 1):
        def bwd(g):
            a._accumulate(g)
            b._accumulate(g.sum(axis=0, keepdims=b.data.ndim == 2))
    else:
        raise InputError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")
    return _op(a.data + b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        a._accumulate(g * c)

    return _op(a.data * c, (a,), bwd)


def mul_const(a: Tensor, arr) -> Tensor:
    """Elementwise multiply by a constant array (masking helper)."""
    arr = np.asarray(arr, dtype=a.data.dtype)

    def bwd(g):
        a._accumulate(g * arr)

    return _op(a.data * arr, (a,), bwd)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Row i of ``x`` multiplied by scalar ``s[i]``."""
    if x.data.ndim != 2 or s.data.ndim != 1 or s.data.shape[0] != x.data.shape[0]:
        raise InputError(f"scale_rows shapes: {x.data.shape}, {s.data.shape}")

    def bwd(g):
        x._accumulate(g * s.data[:, None])
        s._accumulate((g * x.data).sum(axis=1))

    return _op(x.data * s.data[:, None], (x, s), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        a._accumulate(g.reshape(a.data.shape))

    return _op(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t._accumulate(g[tuple(index)])

    return _op(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Embedding lookup; duplicate indices scatter-add in the gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise InputError("gather index out of range")

    def bwd(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, idx, g)

    return _op(x.data[idx], (x,), bwd)


def segment_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    ids = np.asarray(segment_ids, dtype=np.int64)
    out_shape = (num_segments,) + values.data.shape[1:]
    out = np.zeros(out_shape, dtype=values.data.dtype)
    np.add.at(out, ids, values.data)

    def bwd(g):
        values._accumulate(g[ids])

    return _op(out, (values,), bwd)


def segment_softmax(values: Tensor, segment_ids) -> Tensor:
    """Softmax over each segment of a 1-D score vector; segments sum to 1."""
    ids = np.asarray(segment_ids, dtype=np.int64)
    if values.data.ndim != 1:
        raise InputError("segment_softmax expects 1-D scores")
    num = int(ids.max()) + 1 if ids.size else 0
    seg_max = np.full(num, -np.inf, dtype=values.data.dtype)
    np.maximum.at(seg_max, ids, values.data)
    e = np.exp(values.data - seg_max[ids])
    denom = np.zeros(num, dtype=values.data.dtype)
    np.add.at(denom, ids, e)
    out = e / denom[ids]

    def bwd(g):
        weighted = np.zeros(num, dtype=out.dtype)
        np.add.at(weighted, ids, out * g)
        values._accumulate(out * (g - weighted[ids]))

    return _op(out, (values,), bwd)


def mean_rows(x: Tensor) -> Tensor:
    """Global average pooling over rows; result keeps a leading axis of 1."""
    n = x.data.shape[0]

    def bwd(g):
        x._accumulate(np.repeat(g, n, axis=0) / n)

    return _op(x.data.mean(axis=0, keepdims=True), (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (out * g).sum(axis=-1, keepdims=True)
        x._accumulate(out * (g - dot))

    return _op(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        x._accumulate(g * mask)

    return _op(np.where(mask, x.data, 0.0), (x,), bwd)


def elu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, np.expm1(x.data))

    def bwd(g):
        x._accumulate(g * np.where(pos, 1.0, out + 1.0))

    return _op(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        x._accumulate(np.full_like(x.data, float(g)))

    return _op(np.asarray(x.data.sum()), (x,), bwd)


def cross_entropy_soft(logits: Tensor, target) -> Tensor:
    """Soft-target cross entropy from raw logits, numerically stable."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    z = logits.data.reshape(-1)
    if t.shape != z.shape:
        raise InputError(f"cross_entropy_soft shapes: {z.shape} vs {t.shape}")
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    loss = float(-(t * (z - lse)).sum())
    p = np.exp(z - lse)

    def bwd(g):
        logits._accumulate((float(g) * (t.sum() * p - t)).reshape(logits.data.shape))

    return _op(np.asarray(loss), (logits,), bwd)


def mse(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise InputError(f"mse shapes: {pred.data.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size

    def bwd(g):
        grad = (2.0 / n) * diff * float(g)
        pred._accumulate(grad)
        if isinstance(target, Tensor):
            target._accumulate(-grad)

    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    return _op(np.asarray((diff * diff).mean()), parents, bwd)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from ``loss``.

    Nodes run in reverse creation order (a valid topological order, since
    parents are always created before children), which makes accumulation
    order, and therefore the resulting bits, deterministic.
    """
    if loss.data.size != 1:
        raise InputError("backward expects a scalar loss")
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._order in nodes:
            continue
        nodes[t._order] = t
        stack.extend(t._parents)
    loss.grad = np.ones_like(loss.data)
    for order in sorted(nodes, reverse=True):
        t = nodes[order]
        if t._backward_fn is not None and t.grad is not None:
            t._backward_fn(t.grad)


# ---------------------------------------------------------------------------
# Checkpoints: versioned container of named float64 little-endian arrays.
#
#   magic  b"PFCK" | version u32 | count u32
#   entry: name_len u32 | name utf-8 | ndim u32 | dims u64 * ndim | f64-le data
#
# All integers little-endian. Round-trips are exact.
# ---------------------------------------------------------------------------

_MAGIC = b"PFCK"
_VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray]) -> None:
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            out[name] = arr.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint: {exc}") from exc
    if offset != len(blob):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    return out

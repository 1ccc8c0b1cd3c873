"""Dense fp32 tensor kernels for the closed op set.

Tensors are C-contiguous float32 numpy arrays throughout; every kernel is a
pure function returning a fresh array. The attention-critical pieces are
softmax with max-subtraction (so -inf mask entries become exact zeros) and
the interleaved-pair rotary rotation.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float32 array (no copy when already one)."""
    return np.ascontiguousarray(np.asarray(x, dtype=np.float32))


def matmul(a: np.ndarray, b: np.ndarray, transpose_a: bool = False,
           transpose_b: bool = False) -> np.ndarray:
    """Batched matrix product contracting the last dims after the transposes.

    The right operand is either 2-D (broadcast over a's batch dims) or carries
    batch dims equal to a's.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if transpose_a:
        a = np.swapaxes(a, -1, -2)
    if transpose_b:
        b = np.swapaxes(b, -1, -2)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul contraction mismatch: {a.shape[-1]} != {b.shape[-2]} "
            f"for {a.shape} x {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(
            f"matmul batch dims must be equal or absent on the right: "
            f"{a.shape} x {b.shape}")
    return np.matmul(a, b)


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    """Softmax over the last dim with max-subtraction.

    -inf entries map to exactly 0; a slice that is entirely -inf cannot be
    normalized and raises.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last dim, got {x.shape}")
    peak = np.max(x, axis=-1, keepdims=True)
    if np.any(np.isneginf(peak)):
        raise ShapeError("softmax slice is entirely -inf; cannot normalize")
    e = np.exp(x - peak)
    return e / np.sum(e, axis=-1, keepdims=True)


def rmsnorm(x: np.ndarray, weight: np.ndarray, eps: float) -> np.ndarray:
    """x / sqrt(mean(x^2) + eps) * weight over the last dim."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    if weight.shape != (x.shape[-1],):
        raise ShapeError(
            f"rmsnorm weight shape {weight.shape} does not match last dim of {x.shape}")
    if eps <= 0:
        raise ShapeError(f"rmsnorm eps must be > 0, got {eps}")
    mean_sq = np.mean(np.square(x), axis=-1, keepdims=True)
    return x / np.sqrt(mean_sq + np.float32(eps)) * weight


def apply_rotary(x: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Rotate consecutive value pairs of the last dim by per-pair angles.

    x is [..., heads, head_dim] with head_dim even; freqs is [..., head_dim/2, 2]
    holding (cos, sin) and broadcasting over the head axis. Pair (x0, x1) maps
    to (x0*cos - x1*sin, x0*sin + x1*cos), preserving each pair's norm.
    """
    x = as_tensor(x)
    freqs = as_tensor(freqs)
    if x.ndim < 2:
        raise ShapeError(f"apply_rotary input must have rank >= 2, got {x.shape}")
    head_dim = x.shape[-1]
    if head_dim % 2 != 0:
        raise ShapeError(f"apply_rotary head_dim must be even, got {head_dim}")
    if freqs.ndim < 2 or freqs.shape[-2:] != (head_dim // 2, 2):
        raise ShapeError(
            f"apply_rotary freqs shape {freqs.shape} does not end in "
            f"({head_dim // 2}, 2)")
    pairs = x.reshape(x.shape[:-1] + (head_dim // 2, 2))
    if freqs.ndim > pairs.ndim:
        raise ShapeError(
            f"apply_rotary freqs rank too high: {freqs.shape} against {x.shape}")
    try:
        np.broadcast_shapes(freqs.shape, pairs.shape)
    except ValueError:
        raise ShapeError(
            f"apply_rotary freqs shape {freqs.shape} does not broadcast over "
            f"{x.shape}") from None
    cos = freqs[..., 0]
    sin = freqs[..., 1]
    x0 = pairs[..., 0]
    x1 = pairs[..., 1]
    out = np.empty_like(pairs)
    out[..., 0] = x0 * cos - x1 * sin
    out[..., 1] = x0 * sin + x1 * cos
    return out.reshape(x.shape)


def scatter_row_update(cache: np.ndarray, row: int, values: np.ndarray) -> np.ndarray:
    """Copy of cache with the row at index `row` of the second-to-last axis
    replaced by `values`; every other row is bitwise unchanged."""
    cache = as_tensor(cache)
    values = as_tensor(values)
    if cache.ndim < 2:
        raise ShapeError(f"scatter_row_update cache must have rank >= 2, got {cache.shape}")
    seq = cache.shape[-2]
    row = int(row)
    if not 0 <= row < seq:
        raise ShapeError(f"scatter_row_update row {row} out of bounds [0, {seq})")
    expected = cache.shape[:-2] + (1,) + cache.shape[-1:]
    if values.shape != expected:
        raise ShapeError(
            f"scatter_row_update values shape {values.shape} is not one row "
            f"{expected} of cache {cache.shape}")
    out = cache.copy()
    out[..., row:row + 1, :] = values
    return out


def gather_rows(table: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Row lookup: output[i...] = table[indices[i...]].

    Indices may arrive as fp32 (graph inputs carry integer ids that way);
    they are rounded to the nearest integer and bounds-checked.
    """
    table = as_tensor(table)
    idx = np.asarray(indices)
    if table.ndim < 1:
        raise ShapeError("gather_rows table must have rank >= 1")
    if idx.dtype.kind == "f":
        idx = np.rint(idx).astype(np.int64)
    else:
        idx = idx.astype(np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"gather_rows index out of bounds [0, {table.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}")
    return table[idx]


def elementwise(mode: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """add / multiply (b equal-shaped or scalar) or unary silu."""
    a = as_tensor(a)
    if mode == "silu":
        if b is not None:
            raise ShapeError("silu is unary")
        # sigmoid via tanh avoids exp overflow for large negative inputs
        return a * (np.float32(0.5) * (np.float32(1.0) + np.tanh(a * np.float32(0.5))))
    if b is None:
        raise ShapeError(f"{mode} requires two operands")
    b = as_tensor(b)
    if b.shape != a.shape and b.size != 1:
        raise ShapeError(
            f"{mode} requires equal shapes or a scalar second operand, "
            f"got {a.shape} and {b.shape}")
    operand = b if b.shape == a.shape else b.reshape(())
    if mode == "add":
        return a + operand
    if mode == "multiply":
        return a * operand
    raise ShapeError(f"unknown elementwise mode {mode!r}")


def add(a, b):
    return elementwise("add", a, b)


def multiply(a, b):
    return elementwise("multiply", a, b)


def silu(x):
    return elementwise("silu", x)

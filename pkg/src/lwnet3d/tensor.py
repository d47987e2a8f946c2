"""Dense 5-D arrays in (N, C, D, H, W) layout.

Tensors are plain :class:`numpy.ndarray` objects. This module only adds the
construction helpers, shape checks and the small set of elementwise and
reduction primitives the layers are written against. ``D`` is the spectral
axis.
"""

from __future__ import annotations

import operator
from functools import reduce as _fold
from typing import Iterable, Sequence, Union

import numpy as np

DTYPE = np.float32
DTYPE64 = np.float64

_MAX_ELEMENTS = 2**40

Shape5 = tuple[int, int, int, int, int]
Scalar = Union[int, float]


def _check_shape(shape: Sequence[int]) -> Shape5:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 5:
        raise ValueError(f"expected 5 extents (N, C, D, H, W), got {shape}")
    if any(s < 0 for s in shape):
        raise ValueError(f"extents must be non-negative, got {shape}")
    if _fold(operator.mul, shape, 1) > _MAX_ELEMENTS:
        raise OverflowError(f"element count of {shape} exceeds {_MAX_ELEMENTS}")
    return shape  # type: ignore[return-value]


def fill(shape: Sequence[int], value: Scalar, dtype=DTYPE) -> np.ndarray:
    return np.full(_check_shape(shape), value, dtype=dtype)


def zeros(shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
    return fill(shape, 0.0, dtype)


def ones(shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
    return fill(shape, 1.0, dtype)


def offset(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major flat offset of ``(n, c, d, h, w)``."""
    n, c, d, h, w = index
    _, C, D, H, W = shape
    return (((n * C + c) * D + d) * H + h) * W + w


def unravel(shape: Sequence[int], flat: int) -> tuple[int, ...]:
    out = []
    for extent in reversed(tuple(shape)):
        flat, r = divmod(flat, extent)
        out.append(r)
    return tuple(reversed(out))


_EWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def ewise(op: str, a: np.ndarray, b) -> np.ndarray:
    """Elementwise ``add``/``sub``/``mul``, ``scale`` by a scalar, or
    ``relu_mask_apply`` (keep ``a`` where ``b > 0``).

    Tensor-tensor forms require equal shapes; a scalar ``b`` or a
    per-channel vector of length C are the only broadcasts accepted.
    """
    a = np.asarray(a)
    if op == "scale":
        if np.ndim(b) != 0:
            raise ValueError("scale takes a scalar")
        return a * a.dtype.type(b)
    if op == "relu_mask_apply":
        b = np.asarray(b)
        if b.shape != a.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        return np.where(b > 0, a, a.dtype.type(0))
    try:
        fn = _EWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if np.ndim(b) == 0:
        return fn(a, a.dtype.type(b))
    b = np.asarray(b)
    if b.shape == a.shape:
        return fn(a, b)
    if a.ndim == 5 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return fn(a, b.reshape(1, -1, 1, 1, 1))
    raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def reduce(op: str, a: np.ndarray, axes: Iterable[int] | None = None) -> np.ndarray:
    """Sum, mean or max over ``axes``; reduced extents are kept as 1."""
    a = np.asarray(a)
    if axes is None:
        axes = range(a.ndim)
    axes = tuple(sorted(set(int(ax) for ax in axes)))
    for ax in axes:
        if not 0 <= ax < a.ndim:
            raise ValueError(f"axis {ax} out of range for rank {a.ndim}")
    if op == "sum":
        return a.sum(axis=axes, keepdims=True)
    if op == "mean":
        return a.mean(axis=axes, keepdims=True)
    if op == "max":
        return a.max(axis=axes, keepdims=True)
    raise ValueError(f"unknown reduction {op!r}")


def triple(
    value: int | Sequence[int], name: str = "extent", minimum: int = 1
) -> tuple[int, int, int]:
    """Normalize an int or (depth, height, width) triple."""
    if isinstance(value, (int, np.integer)):
        value = (int(value),) * 3
    t = tuple(int(v) for v in value)
    if len(t) != 3 or any(v < minimum for v in t):
        raise ValueError(f"{name} must be three integers >= {minimum}, got {value!r}")
    return t  # type: ignore[return-value]

"""Dense-tensor substrate: quadratic means, masked axis reductions, broadcasting.

Tensors are plain float64 numpy arrays in row-major layout. The contract this
module adds on top of numpy:

* every operation raises :class:`NonFiniteError` instead of letting NaN or
  infinity propagate,
* axis reductions collapse masked axes to size 1 and take the quadratic mean
  of each collapsed slice, which is the sharing scheme the optimizer's
  memory-reduced slot variables rely on,
* binary broadcasting is restricted to equal-rank size-1 stretching; rank
  promotion is rejected.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError

__all__ = [
    "AxisMask",
    "as_tensor",
    "ensure_finite",
    "m2",
    "m2_over_axes",
    "broadcast_binary",
    "broadcast_to_full",
]


@dataclass(frozen=True)
class AxisMask:
    """Per-axis reduction flags; True means the axis is collapsed to size 1."""

    reduced: tuple[bool, ...]

    @classmethod
    def none(cls, rank: int) -> "AxisMask":
        return cls(tuple(False for _ in range(rank)))

    @classmethod
    def all_axes(cls, rank: int) -> "AxisMask":
        return cls(tuple(True for _ in range(rank)))

    @classmethod
    def for_axes(cls, rank: int, axes: tuple[int, ...]) -> "AxisMask":
        return cls(tuple(i in axes for i in range(rank)))

    @property
    def rank(self) -> int:
        return len(self.reduced)

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.reduced) if r)

    def reduced_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        self.check_rank(shape)
        return tuple(1 if r else n for n, r in zip(shape, self.reduced))

    def check_rank(self, shape: tuple[int, ...]) -> None:
        if len(shape) != self.rank:
            raise ShapeError(
                f"axis mask of rank {self.rank} does not match tensor of rank {len(shape)}"
            )


def as_tensor(data, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """float64, C-order, finite-checked view/copy of ``data``."""
    x = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        x = x.reshape(shape)
    return ensure_finite(x, "as_tensor")


def ensure_finite(x: np.ndarray, context: str = "op") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite value produced by {context}")
    return x


def m2(x: np.ndarray) -> float:
    """Quadratic mean of all entries: sqrt(mean(x**2)). Zero iff x is all zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("m2 of an empty tensor is undefined")
    with np.errstate(over="ignore", invalid="ignore"):
        out = float(np.sqrt(np.mean(np.square(x))))
    if not np.isfinite(out):
        raise NonFiniteError("non-finite value produced by m2")
    return out


def m2_over_axes(x: np.ndarray, mask: AxisMask) -> np.ndarray:
    """Quadratic mean over the masked axes, keeping them as size-1 dims.

    An all-false mask is the identity (every slice is a single entry and the
    signed value comes back unchanged). An all-true mask yields a tensor with
    one entry equal to ``m2(x)``.
    """
    x = np.asarray(x, dtype=np.float64)
    mask.check_rank(x.shape)
    if not mask.axes:
        return x
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.sqrt(np.mean(np.square(x), axis=mask.axes, keepdims=True))
    return ensure_finite(out, "m2_over_axes")


def _check_broadcast(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> None:
    if len(a_shape) != len(b_shape):
        raise ShapeError(f"rank mismatch: {a_shape} vs {b_shape}")
    for da, db in zip(a_shape, b_shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes {a_shape} and {b_shape} are not size-1 broadcastable")


def broadcast_binary(op, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise ``op`` with size-1 axes stretched; equal ranks required."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_broadcast(a.shape, b.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        out = op(a, b)
    return ensure_finite(out, getattr(op, "__name__", "broadcast_binary"))


def broadcast_to_full(x: np.ndarray, shape: tuple[int, ...], mask: AxisMask) -> np.ndarray:
    """Stretch a reduced-shape tensor back to the full shape of its owner."""
    x = np.asarray(x, dtype=np.float64)
    mask.check_rank(shape)
    if x.shape != mask.reduced_shape(shape):
        raise ShapeError(f"{x.shape} is not the reduction of {shape} under {mask.reduced}")
    return np.broadcast_to(x, shape)

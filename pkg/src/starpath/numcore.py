"""Dense float64 vector primitives for iterates and gradients.

A ``ParamVector`` is a one-dimensional, C-contiguous ``numpy.float64``
array. Every function here returns a fresh array and never mutates its
inputs, so vectors can be shared freely.
"""

from __future__ import annotations

from typing import Iterable, Union

import numpy as np
import numpy.typing as npt

from starpath.errors import DimensionMismatchError

ParamVector = npt.NDArray[np.float64]


def as_vector(data: Union[Iterable[float], npt.ArrayLike]) -> ParamVector:
    """Copy *data* into a finite 1-D float64 vector.

    Raises ``ValueError`` for non-1-D, empty or non-finite input.
    """
    arr = np.atleast_1d(np.array(data, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"parameter vectors are 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("parameter vectors need dim >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector contains NaN or Inf")
    return np.ascontiguousarray(arr)


def zeros(dim: int) -> ParamVector:
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    return np.zeros(dim, dtype=np.float64)


def check_dims(a: ParamVector, b: ParamVector) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(a.shape[0], b.shape[0])


def dot(a: ParamVector, b: ParamVector) -> float:
    """Inner product ``sum_j a_j * b_j``."""
    check_dims(a, b)
    return float(np.dot(a, b))


def norm2(a: ParamVector) -> float:
    """Euclidean norm, ``sqrt(dot(a, a))``."""
    return float(np.sqrt(np.dot(a, a)))


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``alpha * x + y`` as a new vector."""
    check_dims(x, y)
    return alpha * x + y


def distance(a: ParamVector, b: ParamVector) -> float:
    """``norm2(a - b)``."""
    check_dims(a, b)
    return norm2(a - b)


def is_finite(a: ParamVector) -> bool:
    return bool(np.all(np.isfinite(a)))

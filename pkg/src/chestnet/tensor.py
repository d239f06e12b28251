"""Dense row-major tensors and the primitive ops the layers are built on.

``Tensor`` is a thin immutable wrapper around a numpy array. The layers in
:mod:`chestnet.nn` work on plain ndarrays for speed; anything that accepts an
array also accepts a ``Tensor`` because it implements ``__array__``.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

SUPPORTED_DTYPES = (np.float32, np.float64)


def _check_dtype(dtype) -> np.dtype:
    dtype = np.dtype(dtype)
    if dtype.type not in SUPPORTED_DTYPES:
        raise TypeError(f"unsupported precision {dtype}; use float32 or float64")
    return dtype


def _check_shape(shape: Iterable[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ValueError("shape must have at least one dimension")
    for d in shape:
        if d <= 0:
            raise ValueError(f"dimensions must be >= 1, got {shape}")
    return shape


class Tensor:
    """Immutable N-dimensional float tensor stored in row-major order."""

    __slots__ = ("_array",)

    def __init__(self, data, dtype=np.float32):
        dtype = _check_dtype(dtype)
        arr = np.array(data, dtype=dtype, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        _check_shape(arr.shape)
        arr.setflags(write=False)
        self._array = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        arr.setflags(write=False)
        t._array = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def dtype(self) -> np.dtype:
        return self._array.dtype

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def data(self) -> np.ndarray:
        """Flat read-only view of the values in row-major order."""
        return self._array.reshape(-1)

    @property
    def strides(self) -> tuple[int, ...]:
        """Element (not byte) strides derived from the shape."""
        strides = []
        step = 1
        for d in reversed(self.shape):
            strides.append(step)
            step *= d
        return tuple(reversed(strides))

    def offset(self, index: Sequence[int]) -> int:
        if len(index) != self.rank:
            raise IndexError(f"expected {self.rank} indices, got {len(index)}")
        for i, d in zip(index, self.shape):
            if not 0 <= i < d:
                raise IndexError(f"index {tuple(index)} out of range for shape {self.shape}")
        return sum(i * s for i, s in zip(index, self.strides))

    def __getitem__(self, index):
        return self._array[index]

    def numpy(self) -> np.ndarray:
        """Return a writable copy."""
        return self._array.copy()

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and np.dtype(dtype) != self.dtype:
            return self._array.astype(dtype)
        return self._array

    def astype(self, dtype) -> "Tensor":
        return Tensor(self._array, dtype=dtype)

    def tolist(self):
        return self._array.tolist()

    def equal(self, other: "Tensor") -> bool:
        """Bit-exact equality of shape, dtype and values."""
        other_arr = np.asarray(other)
        return (
            self.shape == other_arr.shape
            and self.dtype == other_arr.dtype
            and self._array.tobytes() == np.ascontiguousarray(other_arr).tobytes()
        )

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


def tensor_new(shape, init="zeros", *, value=0.0, data=None, low=-1.0, high=1.0,
               seed=None, dtype=np.float32) -> Tensor:
    """Create a tensor.

    Args:
        shape: dimension sequence, every entry >= 1.
        init: one of ``"zeros"``, ``"constant"``, ``"uniform"``, ``"data"``.
        value: fill value for ``"constant"``.
        data: flat or nested values for ``"data"``; element count must match.
        low, high: bounds for ``"uniform"``.
        seed: seed for ``"uniform"``; same (seed, shape) gives the same tensor.
        dtype: float32 (default) or float64.
    """
    shape = _check_shape(shape)
    dtype = _check_dtype(dtype)
    if init == "zeros":
        arr = np.zeros(shape, dtype=dtype)
    elif init == "constant":
        arr = np.full(shape, value, dtype=dtype)
    elif init == "uniform":
        if seed is None:
            raise ValueError("seeded-uniform init needs a seed")
        rng = np.random.default_rng(seed)
        arr = rng.uniform(low, high, size=shape).astype(dtype)
    elif init == "data":
        if data is None:
            raise ValueError("explicit init needs data")
        flat = np.asarray(data, dtype=dtype).reshape(-1)
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"data has {flat.size} values, shape {shape} needs {int(np.prod(shape))}")
        arr = flat.reshape(shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor._wrap(arr)


def _binary_operand(a: Tensor, b):
    if isinstance(b, (int, float, np.floating, np.integer)):
        return np.asarray(b, dtype=a.dtype)
    b_arr = np.asarray(b)
    if b_arr.shape != a.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b_arr.shape}")
    return b_arr.astype(a.dtype, copy=False)


def add(a: Tensor, b) -> Tensor:
    return Tensor._wrap(np.asarray(a) + _binary_operand(a, b))


def sub(a: Tensor, b) -> Tensor:
    return Tensor._wrap(np.asarray(a) - _binary_operand(a, b))


def mul(a: Tensor, b) -> Tensor:
    return Tensor._wrap(np.asarray(a) * _binary_operand(a, b))


def scale(a: Tensor, alpha: float) -> Tensor:
    return Tensor._wrap(np.asarray(a) * a.dtype.type(alpha))


def max0(a: Tensor) -> Tensor:
    return Tensor._wrap(np.maximum(np.asarray(a), a.dtype.type(0)))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch ``add``/``sub``/``mul``/``scale``/``max0`` by name."""
    if op in _ELEMENTWISE:
        return _ELEMENTWISE[op](a, b)
    if op == "scale":
        return scale(a, b)
    if op == "max0":
        return max0(a)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    if a_arr.ndim != 2 or b_arr.ndim != 2:
        raise ValueError("matmul expects rank-2 tensors")
    if a_arr.shape[1] != b_arr.shape[0]:
        raise ValueError(f"inner dimensions differ: {a_arr.shape} x {b_arr.shape}")
    if a_arr.dtype != b_arr.dtype:
        raise TypeError("matmul operands must share a precision")
    return Tensor._wrap(a_arr @ b_arr)


def reshape(a: Tensor, new_shape) -> Tensor:
    new_shape = _check_shape(new_shape)
    if int(np.prod(new_shape)) != a.size:
        raise ValueError(f"cannot reshape {a.shape} to {new_shape}")
    return Tensor._wrap(np.asarray(a).reshape(new_shape))


def transpose2d(a: Tensor) -> Tensor:
    if a.rank != 2:
        raise ValueError("transpose2d expects a rank-2 tensor")
    return Tensor._wrap(np.asarray(a).T)


def _check_axis(a: Tensor, axis: int) -> int:
    if not 0 <= axis < a.rank:
        raise ValueError(f"axis {axis} out of range for rank {a.rank}")
    return axis


def sum_axis(a: Tensor, axis: int) -> Tensor:
    return Tensor._wrap(np.asarray(a).sum(axis=_check_axis(a, axis)))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    return Tensor._wrap(np.asarray(a).mean(axis=_check_axis(a, axis)))

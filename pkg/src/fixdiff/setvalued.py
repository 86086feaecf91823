"""
Finite sets of matrices and the excess metric.

A MatrixSet stores its elements as one (k, r, c) stack; vectors are kept as
single columns. The excess gap(A, B) is evaluated on the finite generating
sets, never on their convex hulls, so it upper-bounds the hull excess.
"""

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from fixdiff.errors import ArgumentError, NonFiniteError, ShapeError
from fixdiff.linalg import operator_norms


@dataclass(frozen=True)
class MatrixSet:
    """Nonempty finite set of equally shaped matrices."""

    stack: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.stack, dtype=np.float64)
        if s.ndim != 3:
            raise ShapeError(f"MatrixSet stack must be 3-D, got ndim={s.ndim}")
        if s.shape[0] == 0:
            raise ArgumentError("MatrixSet must be nonempty")
        if not np.all(np.isfinite(s)):
            raise NonFiniteError("MatrixSet has non-finite entries")
        object.__setattr__(self, "stack", s)

    @classmethod
    def of(cls, elements: Iterable[Union[np.ndarray, Sequence[float], float]]) -> "MatrixSet":
        """Build from matrices, vectors (stored as columns) or scalars."""
        mats = []
        for e in elements:
            a = np.asarray(e, dtype=np.float64)
            if a.ndim == 0:
                a = a.reshape(1, 1)
            elif a.ndim == 1:
                a = a.reshape(-1, 1)
            mats.append(a)
        if not mats:
            raise ArgumentError("MatrixSet must be nonempty")
        shape = mats[0].shape
        if any(m.shape != shape for m in mats):
            raise ShapeError("MatrixSet elements must share one shape")
        return cls(np.stack(mats))

    @classmethod
    def zero(cls, shape: Tuple[int, int]) -> "MatrixSet":
        return cls(np.zeros((1,) + tuple(shape)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.stack.shape[1], self.stack.shape[2]

    def __len__(self) -> int:
        return self.stack.shape[0]

    def __iter__(self):
        return iter(self.stack)

    def union(self, other: "MatrixSet") -> "MatrixSet":
        _same_shape(self, other)
        return MatrixSet(np.concatenate([self.stack, other.stack]))


def _same_shape(a: MatrixSet, b: MatrixSet) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"set element shapes differ: {a.shape} vs {b.shape}")


# -------------------- EXCESS --------------------


def gap(a: MatrixSet, b: MatrixSet) -> float:
    """Excess of A over B: max over a of min over b of ||a - b||."""
    _same_shape(a, b)
    diffs = a.stack[:, None, :, :] - b.stack[None, :, :, :]
    return float(operator_norms(diffs).min(axis=1).max())


def sup_norm(a: MatrixSet) -> float:
    """Largest element norm, identical to gap(A, {0})."""
    return gap(a, MatrixSet.zero(a.shape))


# -------------------- MINKOWSKI OPERATIONS --------------------


def minkowski_sum(a: MatrixSet, b: MatrixSet) -> MatrixSet:
    _same_shape(a, b)
    s = a.stack[:, None] + b.stack[None, :]
    return MatrixSet(s.reshape((-1,) + a.shape))


def set_product(c: MatrixSet, a: MatrixSet) -> MatrixSet:
    """{C A : C in c, A in a}."""
    if c.shape[1] != a.shape[0]:
        raise ShapeError(f"cannot multiply {c.shape} by {a.shape}")
    s = np.matmul(c.stack[:, None], a.stack[None, :])
    return MatrixSet(s.reshape((-1,) + s.shape[-2:]))


def affine_apply(a: MatrixSet, x: MatrixSet) -> MatrixSet:
    """{A1 X + A2 : [A1 | A2] in a, X in x} with X of shape (p1, p2)."""
    p1, p2 = x.shape
    if a.shape[1] != p1 + p2:
        raise ShapeError(f"blocks of width {a.shape[1]} do not split as {p1}+{p2}")
    a1 = a.stack[:, :, :p1]
    a2 = a.stack[:, :, p1:]
    s = np.matmul(a1[:, None], x.stack[None, :]) + a2[:, None]
    return MatrixSet(s.reshape((-1,) + s.shape[-2:]))


def block(a: MatrixSet, rows: slice = slice(None), cols: slice = slice(None)) -> MatrixSet:
    """Projection of every element onto a block."""
    return MatrixSet(a.stack[:, rows, cols])


def inverse(a: MatrixSet) -> MatrixSet:
    if a.shape[0] != a.shape[1]:
        raise ShapeError("inverse needs square elements")
    return MatrixSet(np.linalg.inv(a.stack))


def transpose(a: MatrixSet) -> MatrixSet:
    return MatrixSet(np.swapaxes(a.stack, 1, 2))

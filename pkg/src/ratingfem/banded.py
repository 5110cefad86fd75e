"""Square banded matrices in LAPACK band storage and their LU solves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import InconsistentInputError, SingularSystemError

PIVOT_TOLERANCE = 1e-14


class BandedMatrix:
    """Square matrix stored by diagonals.

    ``data[upper + i - j, j] == A[i, j]`` for ``-upper <= j - i <= lower``,
    the layout LAPACK's ``*gbsv`` family expects (without the fill rows).
    """

    def __init__(self, data, lower: int, upper: int):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] != lower + upper + 1:
            raise InconsistentInputError(
                f"band storage must have {lower + upper + 1} rows, got shape {data.shape}"
            )
        self.data = data
        self.lower = lower
        self.upper = upper

    @classmethod
    def zeros(cls, dimension: int, lower: int, upper: int) -> BandedMatrix:
        return cls(np.zeros((lower + upper + 1, dimension)), lower, upper)

    @classmethod
    def from_dense(cls, dense, lower: int, upper: int) -> BandedMatrix:
        dense = np.asarray(dense, dtype=float)
        n = dense.shape[0]
        out = cls.zeros(n, lower, upper)
        for k in range(-upper, lower + 1):
            diag = np.diagonal(dense, offset=-k)
            out.set_diagonal(k, diag)
        return out

    @property
    def dimension(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return (self.dimension, self.dimension)

    def diagonal(self, k: int = 0) -> np.ndarray:
        """Diagonal ``k`` below the main one (negative ``k`` is above)."""
        row = self.upper + k
        if abs(k) >= self.dimension:
            return self.data[row, :0]
        if k >= 0:
            return self.data[row, : self.dimension - k]
        return self.data[row, -k:]

    def set_diagonal(self, k: int, values) -> None:
        row = self.upper + k
        if abs(k) >= self.dimension:
            return
        if k >= 0:
            self.data[row, : self.dimension - k] = values
        else:
            self.data[row, -k:] = values

    def to_dense(self) -> np.ndarray:
        n = self.dimension
        dense = np.zeros((n, n))
        for k in range(-self.upper, self.lower + 1):
            if abs(k) < n:
                dense += np.diag(self.diagonal(k), -k)
        return dense

    def copy(self) -> BandedMatrix:
        return BandedMatrix(self.data.copy(), self.lower, self.upper)

    def transpose(self) -> BandedMatrix:
        out = BandedMatrix.zeros(self.dimension, self.upper, self.lower)
        for k in range(-self.upper, self.lower + 1):
            out.set_diagonal(-k, self.diagonal(k))
        return out

    T = property(transpose)

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dimension:
            raise InconsistentInputError(
                f"vector length {x.shape[0]} does not match dimension {self.dimension}"
            )
        y = np.zeros_like(x)
        n = self.dimension
        for k in range(-self.upper, self.lower + 1):
            d = self.diagonal(k)
            if d.size == 0:
                continue
            if k >= 0:
                y[k:] += d * x[: n - k]
            else:
                y[: n + k] += d * x[-k:]
        return y

    __matmul__ = matvec

    def __add__(self, other: BandedMatrix) -> BandedMatrix:
        return self._combine(other, 1.0)

    def __sub__(self, other: BandedMatrix) -> BandedMatrix:
        return self._combine(other, -1.0)

    def __mul__(self, scalar: float) -> BandedMatrix:
        return BandedMatrix(self.data * scalar, self.lower, self.upper)

    __rmul__ = __mul__

    def _combine(self, other, sign):
        if other.dimension != self.dimension:
            raise InconsistentInputError("matrix dimensions differ")
        lower = max(self.lower, other.lower)
        upper = max(self.upper, other.upper)
        out = BandedMatrix.zeros(self.dimension, lower, upper)
        out.data[upper - self.upper : upper + self.lower + 1] += self.data
        out.data[upper - other.upper : upper + other.lower + 1] += sign * other.data
        return out

    def __repr__(self):
        return f"BandedMatrix(n={self.dimension}, lower={self.lower}, upper={self.upper})"


@dataclass
class BandedLU:
    """LU factors with partial pivoting; solves with the matrix or its transpose."""

    factors: np.ndarray
    pivots: np.ndarray
    lower: int
    upper: int

    def solve(self, rhs, transpose: bool = False) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        b = rhs.reshape(rhs.shape[0], -1)
        x, info = lapack.dgbtrs(
            self.factors, self.lower, self.upper, b, self.pivots, trans=1 if transpose else 0
        )
        if info != 0:
            raise SingularSystemError(f"dgbtrs failed with info={info}")
        return x.reshape(rhs.shape)


def lu_factor_banded(matrix: BandedMatrix) -> BandedLU:
    """Factor ``matrix``; raises :class:`SingularSystemError` on a tiny pivot."""
    kl, ku = matrix.lower, matrix.upper
    ab = np.zeros((2 * kl + ku + 1, matrix.dimension))
    ab[kl:] = matrix.data
    scale = np.max(np.abs(matrix.data)) if matrix.data.size else 0.0
    if scale == 0.0:
        raise SingularSystemError("matrix is identically zero")
    lu, piv, info = lapack.dgbtrf(ab, kl, ku)
    if info > 0:
        raise SingularSystemError(f"exact zero pivot in column {info - 1}")
    pivots_diag = np.abs(lu[kl + ku])
    worst = int(np.argmin(pivots_diag))
    if pivots_diag[worst] < PIVOT_TOLERANCE * scale:
        raise SingularSystemError(
            f"pivot {pivots_diag[worst]:.3e} in column {worst} is below {PIVOT_TOLERANCE:g} * scale"
        )
    return BandedLU(lu, piv, kl, ku)


def solve_banded(matrix: BandedMatrix, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != matrix.dimension:
        raise InconsistentInputError(
            f"rhs length {rhs.shape[0]} does not match dimension {matrix.dimension}"
        )
    return lu_factor_banded(matrix).solve(rhs)

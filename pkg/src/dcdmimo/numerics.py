"""Complex linear algebra primitives and reduced-precision emulation.

All arrays are NumPy ``complex128``/``float64``. Matrices are stored row-major
(C order) and every routine accepts optional leading batch dimensions, so a
``(S, B, U)`` stack of channel matrices is processed as ``S`` independent
problems.

Reductions (``dotc``, ``dotu``, ``vecnorm2``, ``matvec``) accumulate strictly in
ascending index order through ``np.add.accumulate``. No pairwise or blocked
summation is used, so results are bitwise reproducible for a given input.

Reduced precision is emulated: values live in binary64 and are rounded to
binary32/binary16 (round-to-nearest-even) at designated storage boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "PrecisionMode",
    "FP64",
    "DimensionError",
    "SingularMatrixError",
    "round_precision",
    "dotc",
    "dotu",
    "vecnorm2",
    "sqnorm",
    "matvec",
    "cholesky",
    "hermitian_solve",
]

Format = Literal["fp64", "fp32", "fp16"]
Scope = Literal["messages", "full"]

_NUMPY_FORMAT = {"fp32": np.float32, "fp16": np.float16}
_BYTES_PER_REAL = {"fp64": 8, "fp32": 4, "fp16": 2}


class DimensionError(ValueError):
    """Operand shapes are inconsistent."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Cholesky pivot fell below the singularity threshold."""


@dataclass(frozen=True)
class PrecisionMode:
    """Arithmetic format and where rounding is applied.

    ``scope="messages"`` rounds only values that cross a cluster boundary
    (fused estimates, broadcast symbols). ``scope="full"`` additionally rounds
    every stored operand inside the local solvers.
    """

    format: Format = "fp64"
    scope: Scope = "messages"

    def __post_init__(self):
        if self.format not in ("fp64", "fp32", "fp16"):
            raise ValueError(f"unknown precision format {self.format!r}")
        if self.scope not in ("messages", "full"):
            raise ValueError(f"unknown precision scope {self.scope!r}")

    @property
    def bytes_per_real(self) -> int:
        return _BYTES_PER_REAL[self.format]

    @property
    def bytes_per_complex(self) -> int:
        return 2 * _BYTES_PER_REAL[self.format]

    @property
    def rounds_internally(self) -> bool:
        return self.scope == "full" and self.format != "fp64"

    def store(self, x):
        """Round ``x`` if this mode emulates full-storage precision."""
        if self.scope == "full":
            return round_precision(x, self)
        return x

    def message(self, x):
        """Round ``x`` as it is sent between nodes (both scopes)."""
        return round_precision(x, self)

    @classmethod
    def parse(cls, fmt: str, scope: str = "messages") -> "PrecisionMode":
        return cls(format=fmt, scope=scope)  # type: ignore[arg-type]


FP64 = PrecisionMode("fp64", "messages")


def _round_real(x: np.ndarray, fmt: Format) -> np.ndarray:
    with np.errstate(over="ignore"):
        return x.astype(_NUMPY_FORMAT[fmt]).astype(np.float64)


def round_precision(v, mode: PrecisionMode | str):
    """Round every real scalar of ``v`` to ``mode``'s format and re-widen.

    Complex values have their real and imaginary parts rounded independently.
    Rounding is round-to-nearest-even; overflow yields signed infinity and NaN
    passes through. ``fp64`` is the identity.
    """
    fmt = mode if isinstance(mode, str) else mode.format
    if fmt == "fp64":
        return v
    if fmt not in _NUMPY_FORMAT:
        raise ValueError(f"unknown precision format {fmt!r}")
    scalar = np.ndim(v) == 0
    a = np.asarray(v)
    if np.iscomplexobj(a):
        a = a.astype(np.complex128)
        # assign parts separately: re + 1j*im turns an infinite im into nan re
        out = np.empty_like(a)
        out.real = _round_real(a.real, fmt)
        out.imag = _round_real(a.imag, fmt)
    else:
        out = _round_real(a.astype(np.float64), fmt)
    return out[()] if scalar else out


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(
            f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}"
        )


def dotu(a, b) -> np.ndarray:
    """Unconjugated inner product ``sum_k a_k b_k`` over the last axis."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_length(a, b)
    return np.add.accumulate(a * b, axis=-1)[..., -1]


def dotc(a, b) -> np.ndarray:
    """Conjugated inner product ``a^H b`` over the last axis."""
    a = np.asarray(a)
    return dotu(np.conj(a), b)


def sqnorm(v) -> np.ndarray:
    """Squared Euclidean norm over the last axis, sequentially accumulated."""
    v = np.asarray(v)
    return np.add.accumulate(v.real * v.real + v.imag * v.imag, axis=-1)[..., -1]


def vecnorm2(v) -> np.ndarray:
    """Euclidean norm ``||v||_2`` over the last axis."""
    return np.sqrt(sqnorm(v))


def matvec(A, v, precision: PrecisionMode = FP64) -> np.ndarray:
    """Matrix-vector product ``A v`` with batch broadcasting.

    Inputs and output are rounded to ``precision``'s format.
    """
    A = np.asarray(A)
    v = np.asarray(v)
    if A.ndim < 2:
        raise DimensionError("A must be at least two-dimensional")
    if A.shape[-1] != v.shape[-1]:
        raise DimensionError(
            f"A has {A.shape[-1]} columns but v has length {v.shape[-1]}"
        )
    A = round_precision(A, precision)
    v = round_precision(v, precision)
    out = dotu(A, v[..., None, :])
    return round_precision(out, precision)


def cholesky(A, herm_tol: float = 1e-10, pivot_tol: float = 1e-14) -> np.ndarray:
    """Lower Cholesky factor of a (batch of) hermitian positive definite matrices.

    Raises
    ------
    ValueError
        If ``A`` is not hermitian to within ``herm_tol`` (relative to its
        largest entry).
    SingularMatrixError
        If a squared pivot is below ``pivot_tol`` times the largest diagonal
        entry, or the matrix is indefinite.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"expected square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A), axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    asym = np.abs(A - np.conj(np.swapaxes(A, -1, -2))) / scale
    if np.any(asym > herm_tol):
        raise ValueError("matrix is not hermitian")
    diag_max = np.max(np.real(np.diagonal(A, axis1=-2, axis2=-1)), axis=-1)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    pivots = np.real(np.diagonal(L, axis1=-2, axis2=-1)) ** 2
    if np.any(pivots < pivot_tol * diag_max[..., None]) or np.any(diag_max <= 0):
        raise SingularMatrixError("matrix is numerically singular")
    return L


def _cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # b has shape (..., n, k); forward then backward substitution
    n = L.shape[-1]
    z = np.empty_like(b)
    for i in range(n):
        acc = b[..., i, :]
        if i:
            acc = acc - np.einsum("...j,...jk->...k", L[..., i, :i], z[..., :i, :])
        z[..., i, :] = acc / L[..., i, i, None]
    x = np.empty_like(b)
    LH = np.conj(np.swapaxes(L, -1, -2))
    for i in range(n - 1, -1, -1):
        acc = z[..., i, :]
        if i < n - 1:
            acc = acc - np.einsum(
                "...j,...jk->...k", LH[..., i, i + 1:], x[..., i + 1:, :]
            )
        x[..., i, :] = acc / LH[..., i, i, None]
    return x


def hermitian_solve(A, b) -> np.ndarray:
    """Solve ``A x = b`` for hermitian positive definite ``A`` via Cholesky.

    ``b`` may be a vector ``(..., n)`` or a stack of right-hand sides
    ``(..., n, k)``; the result has the same shape as ``b``.
    """
    A = np.asarray(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    n = A.shape[-1]
    L = cholesky(A)
    if b.ndim >= 2 and b.shape[-2] == n and b.ndim == A.ndim:
        return _cho_solve(L, b)
    if b.shape[-1] != n:
        raise DimensionError(f"A is {n}x{n} but b has length {b.shape[-1]}")
    return _cho_solve(L, b[..., None])[..., 0]

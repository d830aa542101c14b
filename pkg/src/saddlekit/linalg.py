"""Sparse and dense symmetric linear algebra.

Sparse matrices are ``scipy.sparse`` CSR arrays.  :class:`DimMatrix` pairs a
matrix with the :class:`~saddlekit.units.Dimension` it carries as an operator
between coefficient vectors (dimensionless bases), so that sums of
incompatible terms are caught at construction time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .units import DIMENSIONLESS, Dimension, DimensionError, Quantity, format_unit

__all__ = [
    "CholeskyFactor",
    "DimMatrix",
    "NoConvergence",
    "NotPositiveDefinite",
    "SparseFactor",
    "assert_finite",
    "cholesky",
    "factorize",
    "sparse_factor",
    "gen_sym_eig",
    "jacobi_eig",
    "mm_read",
    "mm_write",
    "spd_interpolate",
    "sym_eig",
]

CHOLESKY_RTOL = 1e-10
EIG_RTOL = 1e-9
JACOBI_MAX_N = 64
JACOBI_MAX_SWEEPS = 60
MM_HEADER = "%%MatrixMarket matrix coordinate real symmetric"


class NotPositiveDefinite(np.linalg.LinAlgError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class NoConvergence(RuntimeError):
    pass


def assert_finite(x, what: str = "array") -> None:
    data = x.data if sp.issparse(x) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{what} contains NaN or Inf")


@dataclass(frozen=True)
class DimMatrix:
    """A matrix (sparse or dense) with the dimension it carries as an operator."""

    matrix: object
    dim: Dimension = DIMENSIONLESS

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __mul__(self, c) -> "DimMatrix":
        if isinstance(c, Quantity):
            return DimMatrix(self.matrix * c.value, self.dim * c.dim)
        return DimMatrix(self.matrix * float(c), self.dim)

    __rmul__ = __mul__

    def __neg__(self) -> "DimMatrix":
        return DimMatrix(-self.matrix, self.dim)

    def __add__(self, other: "DimMatrix") -> "DimMatrix":
        if self.dim != other.dim:
            raise DimensionError(
                f"cannot add operators of dimension {format_unit(self.dim)} and {format_unit(other.dim)}")
        return DimMatrix(self.matrix + other.matrix, self.dim)

    def __sub__(self, other: "DimMatrix") -> "DimMatrix":
        return self + (-other)

    @property
    def T(self) -> "DimMatrix":
        return DimMatrix(self.matrix.T, self.dim)

    def __matmul__(self, other: "DimMatrix") -> "DimMatrix":
        return DimMatrix(self.matrix @ other.matrix, self.dim * other.dim)

    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)


@dataclass(frozen=True)
class CholeskyFactor:
    """``P A P^T = L L^T`` with ``L`` stored in LAPACK lower band format.

    ``perm[i]`` is the original index of the ``i``-th row of the permuted
    matrix.  ``dim`` is the dimension of the factored operator, so solves
    map a right-hand side of dimension ``e`` to ``e / dim``.
    """

    perm: np.ndarray
    band: np.ndarray
    dim: Dimension = DIMENSIONLESS
    scale: float = 1.0
    ordering: str = "rcm"

    @property
    def n(self) -> int:
        return self.band.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.band.shape[0] - 1

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.band))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has {b.shape[0]} rows, factor is {self.n}x{self.n}")
        x = np.empty_like(b)
        y = scipy.linalg.cho_solve_banded((self.band, True), b[self.perm], check_finite=False)
        x[self.perm] = y
        return x / self.scale if self.scale != 1.0 else x

    def solve_dim(self, rhs_dim: Dimension) -> Dimension:
        return rhs_dim / self.dim

    def scaled(self, c: float | Quantity) -> "CholeskyFactor":
        """Factor of ``c * A`` without refactoring."""
        if isinstance(c, Quantity):
            value, dim = c.value, self.dim * c.dim
        else:
            value, dim = float(c), self.dim
        if value <= 0:
            raise NotPositiveDefinite(f"scaling by non-positive factor {value}")
        return CholeskyFactor(self.perm, self.band, dim, self.scale * value, self.ordering)

    def lower_dense(self) -> np.ndarray:
        """Dense ``L`` of the permuted (and scaled) matrix; small matrices only."""
        n, kd = self.n, self.bandwidth
        L = np.zeros((n, n))
        for d in range(kd + 1):
            idx = np.arange(n - d)
            L[idx + d, idx] = self.band[d, : n - d]
        return L * np.sqrt(self.scale)


def _ordering(a: sp.csr_matrix, ordering: str) -> np.ndarray:
    if ordering == "natural":
        return np.arange(a.shape[0])
    if ordering == "rcm":
        return np.asarray(reverse_cuthill_mckee(a, symmetric_mode=True), dtype=np.int64)
    raise ValueError(f"unknown ordering {ordering!r}")


def cholesky(m, ordering: Literal["natural", "rcm"] = "rcm", dim: Dimension | None = None) -> CholeskyFactor:
    """Cholesky factorization of a sparse SPD matrix after a bandwidth-reducing permutation.

    Raises :class:`NotPositiveDefinite` with the (original) index of the
    first non-positive pivot.
    """
    if isinstance(m, DimMatrix):
        dim = m.dim if dim is None else dim
        m = m.matrix
    a = sp.csr_matrix(m, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"matrix must be square, got {a.shape}")
    assert_finite(a, "matrix")
    perm = _ordering(a, ordering)
    pa = a[perm][:, perm].tocoo()
    lower = pa.row >= pa.col
    rows, cols, vals = pa.row[lower], pa.col[lower], pa.data[lower]
    kd = int((rows - cols).max()) if rows.size else 0
    band = np.zeros((kd + 1, n))
    band[rows - cols, cols] = vals
    c, info = lapack.dpbtrf(band, lower=1)
    if info > 0:
        pivot = int(perm[info - 1])
        raise NotPositiveDefinite(f"non-positive pivot at index {pivot} (step {info})", pivot=pivot)
    if info < 0:
        raise ValueError(f"dpbtrf: illegal argument {-info}")
    return CholeskyFactor(perm, c, dim if dim is not None else DIMENSIONLESS, 1.0, ordering)


@dataclass(frozen=True)
class SparseFactor:
    """SuperLU factorization of an SPD matrix, symmetric ordering, no pivoting.

    With ``components > 1`` the matrix is ``I_c (x) A_s`` in component-major
    layout and only the scalar block ``A_s`` is factored.  Interface matches
    :class:`CholeskyFactor`.
    """

    lu: object
    n: int
    dim: Dimension = DIMENSIONLESS
    scale: float = 1.0
    components: int = 1

    @property
    def nnz(self) -> int:
        return int(self.lu.L.nnz + self.lu.U.nnz)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has {b.shape[0]} rows, factor is {self.n}x{self.n}")
        c = self.components
        if c == 1:
            x = self.lu.solve(b)
        else:
            ns = self.n // c
            k = 1 if b.ndim == 1 else b.shape[1]
            cols = b.reshape(c, ns, k).transpose(1, 0, 2).reshape(ns, c * k)
            y = self.lu.solve(np.ascontiguousarray(cols))
            x = y.reshape(ns, c, k).transpose(1, 0, 2).reshape(b.shape)
        return x / self.scale if self.scale != 1.0 else x

    def solve_dim(self, rhs_dim: Dimension) -> Dimension:
        return rhs_dim / self.dim

    def scaled(self, c: float | Quantity) -> "SparseFactor":
        if isinstance(c, Quantity):
            value, dim = c.value, self.dim * c.dim
        else:
            value, dim = float(c), self.dim
        if value <= 0:
            raise NotPositiveDefinite(f"scaling by non-positive factor {value}")
        return SparseFactor(self.lu, self.n, dim, self.scale * value, self.components)


def _component_block(a: sp.csr_matrix, c: int) -> sp.csr_matrix | None:
    """Scalar block ``A_s`` if ``a == I_c (x) A_s``, else ``None``."""
    n = a.shape[0]
    if c == 1 or n % c:
        return None
    ns = n // c
    blk = a[:ns, :ns]
    coo = a.tocoo()
    if np.any(coo.row // ns != coo.col // ns):
        return None
    for i in range(1, c):
        other = a[i * ns:(i + 1) * ns, i * ns:(i + 1) * ns]
        d = abs(other - blk)
        if d.nnz and d.max() > 1e-14 * abs(blk).max():
            return None
    return blk


def sparse_factor(m, dim: Dimension | None = None, components: int = 1) -> SparseFactor:
    """Sparse SPD factorization through SuperLU with minimum-degree ordering.

    Raises :class:`NotPositiveDefinite` if a pivot is not positive.
    """
    if isinstance(m, DimMatrix):
        dim = m.dim if dim is None else dim
        m = m.matrix
    a = sp.csr_matrix(m, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"matrix must be square, got {a.shape}")
    assert_finite(a, "matrix")
    blk = _component_block(a, components)
    if blk is None:
        blk, components = a, 1
    lu = spla.splu(sp.csc_matrix(blk), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    piv = lu.U.diagonal()
    if np.any(piv <= 0):
        k = int(np.flatnonzero(piv <= 0)[0])
        orig = int(np.flatnonzero(lu.perm_c == k)[0])
        raise NotPositiveDefinite(f"non-positive pivot {piv[k]:.3e} at index {orig}", pivot=orig)
    return SparseFactor(lu, n, dim if dim is not None else DIMENSIONLESS, 1.0, components)


def factorize(m, dim: Dimension | None = None, backend: Literal["banded", "superlu"] = "superlu",
              components: int = 1):
    """Dispatch to :func:`cholesky` (RCM + banded) or :func:`sparse_factor`."""
    if backend == "banded":
        return cholesky(m, dim=dim)
    if backend == "superlu":
        return sparse_factor(m, dim=dim, components=components)
    raise ValueError(f"unknown factorization backend {backend!r}")


def jacobi_eig(a: np.ndarray, rtol: float = 1e-14, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi eigen-decomposition of a dense symmetric matrix."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n <= 1 or scale == 0.0:
        return np.diag(a).copy(), v
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= rtol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _check_symmetric(a: np.ndarray, what: str) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be square")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(np.abs(a).max(), 1e-300)):
        raise ValueError(f"{what} is not symmetric")


def sym_eig(m, method: Literal["auto", "jacobi", "lapack"] = "auto"):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Small matrices use cyclic Jacobi; larger ones LAPACK ``syevd``.
    """
    a = m.dense() if isinstance(m, DimMatrix) else (m.toarray() if sp.issparse(m) else np.asarray(m, float))
    _check_symmetric(a, "matrix")
    assert_finite(a)
    if method == "jacobi" or (method == "auto" and a.shape[0] <= JACOBI_MAX_N):
        return jacobi_eig(a)
    w, v = scipy.linalg.eigh(a)
    return w, v


def gen_sym_eig(a, b, method: Literal["auto", "jacobi", "lapack"] = "auto"):
    """Generalized pairs ``a x = lam b x`` with ``b`` SPD; eigenvectors b-orthonormal."""
    a = a.toarray() if sp.issparse(a) else np.asarray(a, float)
    b = b.toarray() if sp.issparse(b) else np.asarray(b, float)
    _check_symmetric(a, "a")
    _check_symmetric(b, "b")
    try:
        L = np.linalg.cholesky(b)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("b is not positive definite") from None
    if method == "lapack" or (method == "auto" and a.shape[0] > JACOBI_MAX_N):
        return scipy.linalg.eigh(a, b)
    Linv_a = scipy.linalg.solve_triangular(L, a, lower=True)
    c = scipy.linalg.solve_triangular(L, Linv_a.T, lower=True)
    c = 0.5 * (c + c.T)
    w, y = sym_eig(c, method="jacobi")
    x = scipy.linalg.solve_triangular(L.T, y, lower=False)
    return w, x


def _spd_eig(a: np.ndarray, what: str):
    w, q = scipy.linalg.eigh(a)
    if w[0] <= 1e-14 * max(abs(w[-1]), 1e-300):
        raise NotPositiveDefinite(f"{what} is not positive definite (min eigenvalue {w[0]:.3e})")
    return w, q


def spd_interpolate(v, w, theta: float) -> np.ndarray:
    """Interpolation ``V^{1/2} (V^{-1/2} W V^{-1/2})^theta V^{1/2}`` of SPD matrices."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    v = v.toarray() if sp.issparse(v) else np.asarray(v, float)
    w = w.toarray() if sp.issparse(w) else np.asarray(w, float)
    if v.shape != w.shape:
        raise ValueError("matrices must have equal size")
    ev, qv = _spd_eig(0.5 * (v + v.T), "V")
    _spd_eig(0.5 * (w + w.T), "W")
    vh = (qv * np.sqrt(ev)) @ qv.T
    vmh = (qv / np.sqrt(ev)) @ qv.T
    inner = vmh @ w @ vmh
    ei, qi = _spd_eig(0.5 * (inner + inner.T), "V^{-1/2} W V^{-1/2}")
    inner_theta = (qi * ei ** theta) @ qi.T
    out = vh @ inner_theta @ vh
    return 0.5 * (out + out.T)


def mm_write(path, m, comment: str = "") -> None:
    """Write a symmetric matrix in MatrixMarket coordinate format (lower triangle)."""
    a = sp.coo_matrix(m)
    scipy.io.mmwrite(path, a, comment=comment, field="real", symmetry="symmetric")


def mm_read(path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().strip()
    if not re.match(r"%%MatrixMarket\s+matrix\s+coordinate\s+real\s+(symmetric|general)", header, re.I):
        raise ValueError(f"unsupported MatrixMarket header {header!r}")
    return sp.csr_matrix(scipy.io.mmread(path))

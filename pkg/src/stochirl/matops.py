"""Symmetric vectorization, Kronecker helpers and least squares.

Conventions used throughout the package
---------------------------------------
``vec`` stacks columns (Fortran order).  ``svec`` takes the upper triangle
row by row and doubles the off-diagonal entries::

    svec(P) = [p11, 2 p12, ..., 2 p1n, p22, 2 p23, ..., pnn]

so that ``xbar(x) @ svec(P) == x @ P @ x`` with
``xbar(x) = [x1 x1, x1 x2, ..., x1 xn, x2 x2, ..., xn xn]``.

For a gain ``L`` of shape ``(m, n)`` the matrix ``lbar(L)`` has shape
``(n*n, m(m+1)/2)`` and satisfies

    kron(x, x) @ lbar(L) @ svec(S) == (L x) @ S @ (L x)

for every symmetric ``m x m`` matrix ``S``.  In other words
``lbar(L) = kron(L.T, L.T) @ duplication(m)``; the gain is passed in its
natural ``(m, n)`` orientation.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, SingularSystemError

__all__ = [
    "sym_dim",
    "svec",
    "smat",
    "xbar",
    "duplication",
    "lbar",
    "kron",
    "vec",
    "unvec",
    "symmetrize",
    "numeric_rank",
    "least_squares",
    "LstsqResult",
]


def sym_dim(n):
    """Length of ``svec`` for an ``n x n`` symmetric matrix."""
    return n * (n + 1) // 2


def _triu(n):
    return np.triu_indices(n)


def svec(P):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"svec needs a square matrix, got shape {P.shape}")
    n = P.shape[0]
    iu, ju = _triu(n)
    v = P[iu, ju].copy()
    v[iu != ju] *= 2.0
    return v


def smat(v, n):
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != sym_dim(n):
        raise DimensionError(
            f"svec vector of length {v.size} does not match n={n} "
            f"(expected {sym_dim(n)})"
        )
    iu, ju = _triu(n)
    P = np.zeros((n, n))
    vals = np.where(iu == ju, v, 0.5 * v)
    P[iu, ju] = vals
    P[ju, iu] = vals
    return P


def xbar(x):
    """Quadratic monomials of ``x`` in ``svec`` order.

    Accepts a single vector of shape ``(n,)`` or a batch ``(..., n)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    iu, ju = _triu(n)
    return x[..., iu] * x[..., ju]


@lru_cache(maxsize=32)
def _duplication(n):
    iu, ju = _triu(n)
    T = np.zeros((n * n, sym_dim(n)))
    for c, (i, j) in enumerate(zip(iu, ju)):
        if i == j:
            T[i * n + i, c] = 1.0
        else:
            T[i * n + j, c] = 0.5
            T[j * n + i, c] = 0.5
    T.setflags(write=False)
    return T


def duplication(n):
    """Matrix ``T`` with ``vec(P) == T @ svec(P)`` for symmetric ``P``.

    The returned array is shared and read-only.
    """
    if n < 1:
        raise DimensionError("dimension must be positive")
    return _duplication(int(n))


def kron(a, b):
    """Kronecker product of two matrices.

    Same values as :func:`numpy.kron` for 2-D input, computed by a single
    broadcast multiply (noticeably cheaper for the small matrices formed
    inside iteration loops).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    (p, q), (r, s) = a.shape, b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(p * r, q * s)


def lbar(L, T_m=None):
    L = np.atleast_2d(np.asarray(L, dtype=float))
    m = L.shape[0]
    if T_m is None:
        T_m = duplication(m)
    elif T_m.shape != (m * m, sym_dim(m)):
        raise DimensionError(
            f"duplication matrix of shape {T_m.shape} does not match L with {m} rows"
        )
    return kron(L.T, L.T) @ T_m


def vec(M):
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def unvec(v, rows, cols):
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise DimensionError(f"cannot reshape {v.size} entries to {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def _rank_tol(shape, smax):
    return max(shape) * np.finfo(float).eps * smax


def numeric_rank(M, scale_columns=False):
    """Numerical rank with the ``max(l, p) * eps * sigma_max`` cutoff.

    With ``scale_columns`` every nonzero column is first normalized to unit
    length, which makes the test insensitive to the physical units of the
    regressors (it does not change the exact rank).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    if scale_columns:
        norms = np.linalg.norm(M, axis=0)
        norms[norms == 0.0] = 1.0
        M = M / norms
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > _rank_tol(M.shape, s[0])))


@dataclass(frozen=True)
class LstsqResult:
    solution: np.ndarray
    residual: float
    rank: int
    singular_values: np.ndarray

    @property
    def condition(self):
        s = self.singular_values
        return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def least_squares(Phi, psi):
    """Solve ``min ||Phi theta - psi||_2`` through an SVD.

    Raises
    ------
    SingularSystemError
        If ``Phi`` has fewer rows than columns or is numerically rank
        deficient.  The exception carries the detected rank.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    psi = np.asarray(psi, dtype=float).ravel()
    l, p = Phi.shape
    if psi.size != l:
        raise DimensionError(f"right-hand side has {psi.size} rows, Phi has {l}")
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(psi))):
        raise SingularSystemError("least-squares data contain non-finite values", 0, p)
    if l < p:
        raise SingularSystemError(
            f"underdetermined system: {l} equations for {p} unknowns", min(l, p), p
        )
    U, s, Vt = np.linalg.svd(Phi, full_matrices=False)
    rank = 0 if s[0] == 0.0 else int(np.sum(s > _rank_tol(Phi.shape, s[0])))
    if rank < p:
        raise SingularSystemError(
            f"regressor matrix is rank deficient (rank {rank} < {p})", rank, p
        )
    theta = Vt.T @ ((U.T @ psi) / s)
    res = float(np.linalg.norm(Phi @ theta - psi))
    return LstsqResult(theta, res, rank, s)

"""Dense linear-algebra kernel.

Matrix exponentials and their time integrals for generator matrices with a
zero first column, the vec/vech stacking operators with the duplication,
selection and commutation matrices, and a jitter-repairing Cholesky factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "InvalidInputError",
    "NotPSDError",
    "StructuredExpResult",
    "expm_generic",
    "expm_and_integral",
    "vec",
    "vech",
    "unvec",
    "structural_matrices",
    "cholesky_psd",
]

DIAG_TOL = 1e-10
CLOSED_FORM_TOL = 1e-6
SYMMETRY_TOL = 1e-12


class InvalidInputError(ValueError):
    """Raised for non-finite, non-square or otherwise malformed input."""


class NotPSDError(np.linalg.LinAlgError):
    """Raised when a matrix is indefinite beyond the repair tolerance."""

    def __init__(self, eigenvalue: float, message: str | None = None):
        self.eigenvalue = float(eigenvalue)
        super().__init__(message or f"matrix is not PSD (min eigenvalue {eigenvalue:.3e})")


@dataclass(frozen=True)
class StructuredExpResult:
    exp: NDArray
    integral: NDArray
    method: str  # "closed_form" or "augmented_generic"


def _square(A: ArrayLike) -> NDArray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return A


def expm_generic(A: ArrayLike, t: float = 1.0) -> NDArray:
    """Return ``exp(A t)`` by scaling and squaring (Pade)."""
    A = _square(A)
    if not np.isfinite(t):
        raise InvalidInputError("t must be finite")
    return sla.expm(A * t)


def _closed_form_applicable(A: NDArray, tol: float) -> bool:
    if A.shape[0] < 2:
        return False
    if np.any(A[:, 0] != 0.0):
        return False
    C = A[1:, 1:]
    if np.any(np.tril(C, -1) != 0.0):
        return False
    return bool(np.min(np.abs(np.diag(C))) >= max(tol, DIAG_TOL))


def expm_and_integral(A: ArrayLike, t: float,
                      closed_form_tol: float = CLOSED_FORM_TOL) -> StructuredExpResult:
    r"""Compute ``exp(A t)`` together with ``\int_0^t exp(A s) ds``.

    When ``A = [[0, b^T], [0, C]]`` with ``C`` upper triangular and every
    ``|c_ii| >= closed_form_tol``, the block closed form is used:

    .. math::

        e^{At} = \begin{pmatrix} 1 & b^T C^{-1}(e^{Ct}-I) \\ 0 & e^{Ct} \end{pmatrix},
        \quad
        \int_0^t e^{As} ds = \begin{pmatrix} t & b^T C^{-2}(e^{Ct}-I) - t b^T C^{-1}
        \\ 0 & C^{-1}(e^{Ct}-I) \end{pmatrix}.

    Otherwise both blocks are read off ``exp([[A, I], [0, 0]] t)``, whose top
    right block is the integral.
    """
    A = _square(A)
    if not np.isfinite(t) or t < 0:
        raise InvalidInputError(f"t must be finite and non-negative, got {t}")
    n = A.shape[0]
    if t == 0.0:
        return StructuredExpResult(np.eye(n), np.zeros((n, n)), "closed_form")

    if _closed_form_applicable(A, closed_form_tol):
        b = A[0, 1:]
        C = A[1:, 1:]
        eC = sla.expm(C * t)
        m = n - 1
        diff = eC - np.eye(m)
        Cinv_diff = sla.solve_triangular(C, diff, lower=False)
        Cinv2_diff = sla.solve_triangular(C, Cinv_diff, lower=False)
        # b^T C^{-1} as a row: solve C^T r = b
        bC = sla.solve_triangular(C, b, trans="T", lower=False)

        E = np.zeros((n, n))
        E[0, 0] = 1.0
        E[0, 1:] = b @ Cinv_diff
        E[1:, 1:] = eC

        I = np.zeros((n, n))
        I[0, 0] = t
        I[0, 1:] = b @ Cinv2_diff - t * bC
        I[1:, 1:] = Cinv_diff
        return StructuredExpResult(E, I, "closed_form")

    big = np.zeros((2 * n, 2 * n))
    big[:n, :n] = A
    big[:n, n:] = np.eye(n)
    eb = sla.expm(big * t)
    return StructuredExpResult(eb[:n, :n].copy(), eb[:n, n:].copy(), "augmented_generic")


def vec(M: ArrayLike) -> NDArray:
    """Column-stacking vectorisation."""
    M = np.asarray(M, dtype=float)
    return M.reshape(-1, order="F")


def unvec(v: ArrayLike, rows: int) -> NDArray:
    v = np.asarray(v, dtype=float)
    return v.reshape(rows, -1, order="F")


def vech(S: ArrayLike, tol: float = SYMMETRY_TOL) -> NDArray:
    """Stack the lower triangle of a symmetric matrix column by column."""
    S = _square(S)
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > tol * scale:
        raise InvalidInputError("vech requires a symmetric matrix")
    d = S.shape[0]
    return np.concatenate([S[j:, j] for j in range(d)])


@lru_cache(maxsize=16)
def _structural(d: int) -> tuple[NDArray, NDArray, NDArray]:
    pairs = [(i, j) for j in range(d) for i in range(j, d)]  # vech order
    m = len(pairs)
    dup = np.zeros((d * d, m))
    sel = np.zeros((m, d * d))
    for k, (i, j) in enumerate(pairs):
        dup[i + j * d, k] = 1.0
        dup[j + i * d, k] = 1.0
        sel[k, i + j * d] = 1.0
    comm = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            # vec(M)[i + j d] = M[i, j]  ->  vec(M^T)[j + i d]
            comm[j + i * d, i + j * d] = 1.0
    for arr in (dup, sel, comm):
        arr.setflags(write=False)
    return dup, sel, comm


def structural_matrices(d: int) -> tuple[NDArray, NDArray, NDArray]:
    """Return ``(G_d, H_d, Lambda_d)``: duplication, selection, commutation.

    ``G_d @ vech(S) == vec(S)`` for symmetric ``S``, ``H_d @ vec(M)`` picks the
    lower triangle of ``M`` in vech order, ``Lambda_d @ vec(M) == vec(M.T)``.
    The returned arrays are read-only and shared.
    """
    if int(d) != d or d < 1:
        raise InvalidInputError(f"dimension must be a positive integer, got {d}")
    return _structural(int(d))


def cholesky_psd(S: ArrayLike, tol: float = 1e-8) -> NDArray:
    """Lower Cholesky factor of a symmetric PSD matrix.

    Matrices that are indefinite only within ``tol * ||S||`` are repaired by
    adding ``eps * I`` with ``eps`` the smallest power of ten that yields
    positive pivots. Anything worse raises :class:`NotPSDError`.
    """
    S = _square(S)
    S = 0.5 * (S + S.T)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass

    norm = float(np.linalg.norm(S, 2))
    lam_min = float(np.linalg.eigvalsh(S)[0])
    if lam_min < -tol * max(norm, np.finfo(float).tiny):
        raise NotPSDError(lam_min)

    n = S.shape[0]
    scale = max(norm, 1e-300)
    start = int(np.floor(np.log10(scale * np.finfo(float).eps)))
    for p in range(start, start + 40):
        eps = 10.0 ** p
        try:
            return np.linalg.cholesky(S + eps * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise NotPSDError(lam_min, "jitter repair failed")

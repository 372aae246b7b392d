"""Dense linear-algebra kernels for small problems.

Thin contracts over LAPACK (through numpy/scipy): symmetric and general
eigenvalues, checked linear solves and Kronecker-structured products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

MAX_GENERAL_DIM = 512
SYMMETRY_RTOL = 1e-10
COND_LIMIT = 1e12


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a system is singular to working tolerance."""

    def __init__(self, message: str, cond: float):
        super().__init__(f"{message} (condition estimate {cond:.3e})")
        self.cond = cond


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    max_imag: float
    spectral_radius: float


def _square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def check_symmetric(M, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    M = _square(M)
    scale = np.abs(M).max()
    if np.abs(M - M.T).max() > rtol * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    return M


def sym_eigenvalues(M) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix."""
    return np.linalg.eigvalsh(check_symmetric(M))


def general_eigenvalues(M) -> Spectrum:
    M = _square(M)
    if M.shape[0] > MAX_GENERAL_DIM:
        raise ValueError(f"dimension {M.shape[0]} exceeds {MAX_GENERAL_DIM}")
    ev = np.linalg.eigvals(M) if M.size else np.zeros(0, complex)
    ev = ev.astype(complex)
    return Spectrum(
        eigenvalues=ev,
        max_imag=float(np.abs(ev.imag).max(initial=0.0)),
        spectral_radius=float(np.abs(ev).max(initial=0.0)),
    )


def spectral_radii(stack: np.ndarray) -> np.ndarray:
    """Spectral radius of each matrix in a ``(N, m, m)`` stack."""
    return np.abs(np.linalg.eigvals(stack)).max(axis=-1)


def log_abs_det_shifted(M, lam: complex) -> float:
    """log|det(M - lam I)| through LU with partial pivoting."""
    M = np.asarray(M)
    lu, _ = sla.lu_factor(M - lam * np.eye(M.shape[0]), check_finite=False)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(np.abs(np.diag(lu)))))


def eigenvalue_residual_ok(M, lam: complex, rtol: float = 1e-6) -> bool:
    """Check |det(M - lam I)| <= rtol * ||M||^n (done in log space)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    norm = np.linalg.norm(M, 2)
    if norm == 0.0:
        return abs(lam) <= rtol
    return log_abs_det_shifted(M, lam) <= np.log(rtol) + n * np.log(norm)


def condition_estimate(M) -> float:
    """1-norm condition number estimate from the LU factors (LAPACK gecon)."""
    M = _square(M)
    anorm = np.abs(M).sum(axis=0).max()
    lu, piv, info = lapack.dgetrf(M)
    if info > 0:
        return np.inf
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    return np.inf if rcond == 0 else 1.0 / rcond


def solve(M, rhs) -> np.ndarray:
    """Solve ``M x = rhs``, refusing systems with condition estimate above 1e12."""
    M = _square(M)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != M.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has {M.shape[0]}")
    anorm = np.abs(M).sum(axis=0).max()
    lu, piv, info = lapack.dgetrf(M)
    if info > 0:
        raise SingularMatrixError("exactly singular matrix", np.inf)
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > COND_LIMIT:
        raise SingularMatrixError("matrix is singular to working precision", cond)
    x, info = lapack.dgetrs(lu, piv, rhs)
    return x


def kron_apply(F, v, n: int) -> np.ndarray:
    """Compute ``(F kron I_n) v`` without forming the Kronecker product.

    ``v`` is the stack of ``m`` blocks of length ``n``; a leading batch axis
    is allowed (shape ``(..., m*n)``).
    """
    F = np.asarray(F, dtype=float)
    m = F.shape[1]
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != m * n:
        raise ValueError(f"vector length {v.shape[-1]} != {m}*{n}")
    blocks = v.reshape(v.shape[:-1] + (m, n))
    out = np.matmul(F, blocks)
    return out.reshape(v.shape[:-1] + (F.shape[0] * n,))

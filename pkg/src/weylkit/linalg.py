"""
Dense complex matrix primitives.

Everything here is built on the Hermitian eigendecomposition (``numpy.linalg.eigh``).
Matrices are small (n <= ~64), so robustness is preferred over speed.

Branch convention: every complex square root uses the branch with ``Im sqrt >= 0``.
"""
from __future__ import annotations

import numpy as np

from .errors import BranchPointError, InvalidInputError, SingularityError

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10


def as_matrix(A, n=None) -> np.ndarray:
    """Coerce scalars, 1x1 lists and arrays to a square complex 2-D array."""
    A = np.asarray(A, dtype=complex)
    if A.ndim == 0:
        A = A.reshape(1, 1) if n is None else A * np.eye(n, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("expected a square matrix", shape=list(A.shape))
    if n is not None and A.shape[0] != n:
        raise InvalidInputError("matrix has wrong dimension", expected=n, got=A.shape[0])
    return A


def opnorm(A) -> float:
    """Spectral norm; 0 for empty input."""
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def hermitian_defect(A) -> float:
    """Relative anti-Hermitian part ||A - A*|| / max(1, ||A||)."""
    A = np.asarray(A)
    return opnorm(A - A.conj().T) / max(1.0, opnorm(A))


def check_hermitian(A, tol=HERMITIAN_TOL, name="matrix") -> np.ndarray:
    A = as_matrix(A)
    d = hermitian_defect(A)
    if d > tol:
        raise InvalidInputError(f"{name} is not Hermitian", defect=d, tol=tol)
    return 0.5 * (A + A.conj().T)


def hermitian_part(A) -> np.ndarray:
    A = np.asarray(A)
    return 0.5 * (A + A.conj().T)


def imag_part(A) -> np.ndarray:
    """Operator imaginary part (A - A*) / 2i."""
    A = np.asarray(A)
    return (A - A.conj().T) / 2j


def min_eig(A) -> float:
    """Smallest eigenvalue of the Hermitian part of A."""
    return float(np.linalg.eigvalsh(hermitian_part(A))[0])


def _psd_eigh(A, psd_tol):
    A = check_hermitian(A)
    w, U = np.linalg.eigh(A)
    scale = max(abs(w[0]), abs(w[-1])) if w.size else 0.0
    if w.size and w[0] < -psd_tol * max(scale, 1e-300):
        raise InvalidInputError("matrix is not positive semidefinite",
                                min_eigenvalue=float(w[0]), tol=psd_tol)
    return np.clip(w, 0.0, None), U


def psd_clamp(A, psd_tol=PSD_TOL) -> np.ndarray:
    """Project a nominally PSD matrix onto the PSD cone (clamping O(tol) dust)."""
    w, U = _psd_eigh(A, psd_tol)
    return (U * w) @ U.conj().T


def hermitian_sqrt(A, psd_tol=PSD_TOL) -> np.ndarray:
    """PSD square root via eigendecomposition; small negative eigenvalues are clamped."""
    w, U = _psd_eigh(A, psd_tol)
    return (U * np.sqrt(w)) @ U.conj().T


def inv_sqrt(A, floor=1e-14) -> np.ndarray:
    """A^{-1/2} for positive definite A; raises SingularityError below ``floor``."""
    A = check_hermitian(A)
    w, U = np.linalg.eigh(A)
    if w[0] < floor:
        raise SingularityError("eigenvalue below floor in inv_sqrt",
                               eigenvalue=float(w[0]), floor=floor)
    return (U / np.sqrt(w)) @ U.conj().T


def hermitian_function(A, f) -> np.ndarray:
    """f(A) for Hermitian A and a vectorized scalar function f."""
    A = check_hermitian(A)
    w, U = np.linalg.eigh(A)
    return (U * f(w)) @ U.conj().T


def sin_cos(alpha):
    """(sin(alpha), cos(alpha)) by spectral calculus of the Hermitian alpha."""
    alpha = check_hermitian(alpha, name="alpha")
    w, U = np.linalg.eigh(alpha)
    Uh = U.conj().T
    return (U * np.sin(w)) @ Uh, (U * np.cos(w)) @ Uh


def csqrt(w):
    """Elementwise complex square root with Im >= 0."""
    s = np.sqrt(np.asarray(w, dtype=complex))
    return np.where(s.imag < 0, -s, s)


def principal_sqrt_shifted(z, V0) -> np.ndarray:
    """(zI - V0)^{1/2} with the branch Im sqrt >= 0 on each eigenvalue of V0."""
    V0 = check_hermitian(V0, name="V0")
    lam, U = np.linalg.eigh(V0)
    z = complex(z)
    if z.imag == 0 and np.any(np.abs(lam - z.real) <= 1e-14 * max(1.0, abs(z.real))):
        raise BranchPointError("z coincides with an eigenvalue of V0", z=[z.real, z.imag])
    return (U * csqrt(z - lam)) @ U.conj().T


def random_hermitian(n, rng, scale=1.0) -> np.ndarray:
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (G + G.conj().T)


def random_unitary(n, rng) -> np.ndarray:
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def orth_columns(X, rank_tol=1e-8) -> np.ndarray:
    """Orthonormal basis of the column span of X (SVD, relative threshold)."""
    X = np.asarray(X, dtype=complex)
    if X.size == 0:
        return X.reshape(X.shape[0], 0)
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    r = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, :r]

"""
Donoghue-type m-operators for a Hermitian matrix A compressed to a subspace N.

M(z) = B^*(zA + I)(A - z)^{-1} B, with B an isometry onto N.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, InvariantError, ReducibleError
from .herglotz import HerglotzRep, OperatorMeasure, eval_rep
from .linalg import check_hermitian, opnorm, orth_columns

DEFAULT_GRID = (1j, 2j, 1 + 1j, -1 + 0.5j)
RANK_TOL = 1e-8
CLUSTER_TOL = 1e-10


@dataclass(frozen=True)
class SubspacedOperator:
    A: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        A = check_hermitian(np.atleast_2d(np.asarray(self.A, dtype=complex)), name="A")
        N = np.asarray(self.N, dtype=complex)
        if N.ndim == 1:
            N = N[:, None]
        if N.ndim != 2 or N.shape[0] != A.shape[0] or N.shape[1] == 0:
            raise InvalidInputError("N must be a (dim, k) matrix with k >= 1",
                                    shape=list(N.shape), dim=A.shape[0])
        d = opnorm(N.conj().T @ N - np.eye(N.shape[1]))
        if d > 1e-12:
            raise InvalidInputError("N columns are not orthonormal", deviation=d)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "N", N)

    @classmethod
    def from_span(cls, A, vectors):
        """Orthonormalize the given columns first."""
        return cls(A, orth_columns(np.atleast_2d(np.asarray(vectors, dtype=complex))))

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def k(self):
        return self.N.shape[1]

    def spectral(self):
        """Clustered eigen-decomposition: list of (lambda, Q) with Q orthonormal columns."""
        w, U = np.linalg.eigh(self.A)
        scale = CLUSTER_TOL * max(1.0, float(np.max(np.abs(w))))
        groups = []
        start = 0
        for j in range(1, len(w) + 1):
            if j == len(w) or w[j] - w[j - 1] > scale:
                groups.append((float(np.mean(w[start:j])), U[:, start:j]))
                start = j
        return groups


def _resolvent(A, z):
    return np.linalg.inv(A - z * np.eye(A.shape[0]))


def donoghue_M(S: SubspacedOperator, z, check_tol=1e-12) -> np.ndarray:
    z = complex(z)
    if z.imag == 0:
        raise InvalidInputError("z must be off the real axis", z=[z.real, z.imag])
    B, A = S.N, S.A
    R = _resolvent(A, z)
    M = B.conj().T @ (z * A + np.eye(S.dim)) @ R @ B
    alt = z * np.eye(S.k) + (z * z + 1) * (B.conj().T @ R @ B)
    d = opnorm(M - alt)
    if d > check_tol * max(1.0, opnorm(M)):
        raise InvariantError("the two forms of M disagree", residual=d)
    return M


@dataclass
class DonoghueMeasure:
    measure: OperatorMeasure
    weights: np.ndarray  # (lambda^2 + 1)^{-1}
    normalization_residual: float
    representation_residual: float

    @property
    def rep(self):
        return HerglotzRep(np.zeros((self.measure.dim,) * 2), np.zeros((self.measure.dim,) * 2),
                           self.measure)


def donoghue_measure(S: SubspacedOperator, check_points=DEFAULT_GRID,
                     norm_tol=1e-12, rep_tol=1e-10) -> DonoghueMeasure:
    """Atoms (lambda^2 + 1) B^* E_lambda B; checks normalization and the representation."""
    B = S.N
    atoms = []
    total = np.zeros((S.k, S.k), dtype=complex)
    for lam, Q in S.spectral():
        sig = B.conj().T @ Q @ Q.conj().T @ B
        atoms.append((lam, (lam * lam + 1) * sig))
        total += sig
    mu = OperatorMeasure(S.k, atoms=atoms)
    nres = opnorm(total - np.eye(S.k))
    if nres > norm_tol:
        raise InvariantError("measure normalization failed", residual=nres)
    rep = HerglotzRep(np.zeros((S.k, S.k)), np.zeros((S.k, S.k)), mu)
    rres = max(opnorm(eval_rep(rep, z) - donoghue_M(S, z)) for z in check_points)
    if rres > rep_tol:
        raise InvariantError("representation does not reproduce M", residual=rres)
    w = np.array([1.0 / (lam * lam + 1) for lam, _ in atoms])
    return DonoghueMeasure(mu, w, nres, rres)


def lower_bound(z) -> float:
    """2 / [(|z|^2 + 1) + sqrt((|z|^2 - 1)^2 + 4 (Re z)^2)]."""
    z = complex(z)
    r2 = abs(z) ** 2
    return 2.0 / ((r2 + 1) + np.sqrt((r2 - 1) ** 2 + 4 * z.real ** 2))


def _ratio(lam, z):
    """(lambda^2 + 1)/|lambda - z|^2 without overflow for large lambda."""
    if abs(lam) <= 1.0:
        return (lam * lam + 1) / abs(lam - z) ** 2
    r = 1.0 / lam
    return (1 + r * r) / ((1 - z.real * r) ** 2 + (z.imag * r) ** 2)


def optimizing_lambda(z) -> Optional[float]:
    """Real lambda minimizing (lambda^2 + 1)/|lambda - z|^2.

    None when no finite lambda attains the infimum: at z = +-i every lambda
    ties, and on the imaginary axis with |z| < 1 the infimum sits at infinity.
    """
    z = complex(z)
    x, r2 = z.real, abs(z) ** 2
    if x == 0:
        return 0.0 if r2 > 1 else None
    # roots of x lam^2 - (|z|^2 - 1) lam - x = 0; their product is -1
    c = r2 - 1
    q = c + np.copysign(np.hypot(c, 2 * x), c)
    roots = (q / (2 * x), -2 * x / q)
    return float(min(roots, key=lambda lam: _ratio(lam, z)))


def _all_tie(z):
    return z.real == 0 and np.isclose(abs(z.imag), 1.0)


@dataclass
class BoundRow:
    z: complex
    min_eig: float
    bound: float
    satisfied: bool
    attained: Optional[bool]


@dataclass
class BoundReport:
    rows: List[BoundRow]
    slack: float

    @property
    def passed(self):
        return all(r.satisfied for r in self.rows)


def lower_bound_check(S: SubspacedOperator, z_grid=DEFAULT_GRID, slack=1e-10,
                      tight_tol=1e-6) -> BoundReport:
    """min eig (Im z)^{-1} Im M(z) against the bound; 'attained' is set when the optimizer is in spec(A)."""
    spec = np.array([lam for lam, _ in S.spectral()])
    rows = []
    for z in z_grid:
        z = complex(z)
        M = donoghue_M(S, z)
        Im = (M - M.conj().T) / 2j / z.imag
        mn = float(np.linalg.eigvalsh(Im)[0])
        b = lower_bound(z)
        lam = optimizing_lambda(z)
        attained = None
        if _all_tie(z) or (lam is not None
                           and np.min(np.abs(spec - lam)) <= 1e-9 * max(1.0, abs(lam))):
            attained = abs(mn - b) <= tight_tol
        rows.append(BoundRow(z, mn, b, mn >= b - slack, attained))
    return BoundReport(rows, slack)


@dataclass
class SimplicityReport:
    simple: bool
    resolvent_rank: int
    krylov_rank: int
    dim: int
    rank_tol: float

    def __bool__(self):
        return self.simple


def _rank(X, rank_tol):
    if X.size == 0:
        return 0
    s = np.linalg.svd(X, compute_uv=False)
    return int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0


def krylov_basis(S: SubspacedOperator, rank_tol=RANK_TOL):
    """Orthonormal basis of span{A^j N}, built by block Arnoldi with reorthogonalization."""
    A = S.A
    Q = orth_columns(S.N, rank_tol)
    basis = [Q]
    while Q.shape[1] and sum(b.shape[1] for b in basis) < S.dim:
        W = A @ Q
        full = np.hstack(basis)
        for _ in range(2):
            W = W - full @ (full.conj().T @ W)
        scale = max(1.0, opnorm(A))
        s = np.linalg.svd(W, compute_uv=False) if W.size else np.zeros(0)
        if not s.size or s[0] <= rank_tol * scale:
            break
        Q = orth_columns(W, rank_tol * scale / s[0])
        basis.append(Q)
    return np.hstack(basis)


def simplicity_check(S: SubspacedOperator, z_samples: Optional[Sequence[complex]] = None,
                     rank_tol=RANK_TOL) -> SimplicityReport:
    """Rank of [(A - z)^{-1} N for z in samples] and of the Krylov matrix; must agree."""
    d = S.dim
    if z_samples is None:
        # distinct points on a circle in the upper half-plane
        r = max(1.0, opnorm(S.A)) + 1.0
        t = np.linspace(0.15, np.pi - 0.15, d)
        z_samples = r * np.exp(1j * t)
    cols = [_resolvent(S.A, complex(z)) @ S.N for z in z_samples]
    rr = _rank(np.hstack(cols), rank_tol)
    K = [S.N]
    for _ in range(d - 1):
        K.append(S.A @ K[-1])
    Kmat = np.hstack(K)
    # column scaling keeps powers of A from swamping the rank threshold
    norms = np.linalg.norm(Kmat, axis=0)
    Kmat = Kmat / np.where(norms > 0, norms, 1.0)
    kr = _rank(Kmat, rank_tol)
    kb = krylov_basis(S, rank_tol).shape[1]
    if (rr == d) != (kr == d) or (kr == d) != (kb == d):
        raise InvariantError("resolvent and Krylov rank tests disagree",
                             resolvent_rank=rr, krylov_rank=kr, arnoldi_rank=kb)
    return SimplicityReport(rr == d, rr, kr, d, rank_tol)


@dataclass
class Fiber:
    lam: float
    sigma: np.ndarray  # B^* E B, k x k
    basis: np.ndarray  # orthonormal basis of ran(sigma), k x r
    weights: np.ndarray  # eigenvalues of sigma on that basis


@dataclass
class Diagonalization:
    fibers: List[Fiber]
    U: np.ndarray  # (sum r_m) x dim, unitary onto the model space coordinates
    Lambda: np.ndarray
    unitarity_residual: float
    intertwining_residual: float
    coimage_residual: float


def diagonalize(S: SubspacedOperator, rank_tol=RANK_TOL, check_tol=1e-10) -> Diagonalization:
    """Unitary onto the direct sum of ran(sigma_m) carrying A to multiplication by lambda_m.

    For u in C^dim the m-th component is sigma_m^{-1/2} B^* E_m u expressed in the
    eigenbasis of sigma_m; in these coordinates the weighted model norm becomes
    the Euclidean one, so U is a plain unitary matrix.
    """
    rep = simplicity_check(S, rank_tol=rank_tol)
    if not rep.simple:
        K = krylov_basis(S, rank_tol)
        comp = _complement(K, S.dim)
        raise ReducibleError("N is not cyclic for A", cyclic_basis=K, complement_basis=comp)
    B = S.N
    fibers, rows, lams = [], [], []
    for lam, Q in S.spectral():
        E = Q @ Q.conj().T
        sig = B.conj().T @ E @ B
        w, V = np.linalg.eigh(sig)
        keep = w > rank_tol * max(1.0, w[-1])
        w, V = w[keep], V[:, keep]
        fibers.append(Fiber(lam, sig, V, w))
        rows.append((V / np.sqrt(w)).conj().T @ B.conj().T @ E)
        lams.extend([lam] * len(w))
    U = np.vstack(rows)
    Lam = np.diag(lams)
    if U.shape[0] != S.dim:
        raise InvariantError("model space dimension differs from dim(A)",
                             model_dim=U.shape[0], dim=S.dim)
    unit = max(opnorm(U.conj().T @ U - np.eye(S.dim)), opnorm(U @ U.conj().T - np.eye(S.dim)))
    inter = opnorm(U @ S.A - Lam @ U)
    # N itself goes to the functions lambda -> (constant) sigma^{1/2} coordinates
    coim = 0.0
    for f, blk in zip(fibers, _split(U @ B, [len(f.weights) for f in fibers])):
        coim = max(coim, opnorm(blk - np.sqrt(f.weights)[:, None] * f.basis.conj().T))
    if max(unit, inter) > check_tol:
        raise InvariantError("diagonalization residuals too large", unitarity=unit,
                             intertwining=inter)
    return Diagonalization(fibers, U, Lam, unit, inter, coim)


def _split(X, sizes):
    out, i = [], 0
    for s in sizes:
        out.append(X[i:i + s])
        i += s
    return out


def _complement(K, dim):
    if K.shape[1] == 0:
        return np.eye(dim, dtype=complex)
    Q, _ = np.linalg.qr(np.hstack([K, np.eye(dim)]))
    return Q[:, K.shape[1]:dim]


def invariant_residual(A, Z) -> float:
    """||(I - Q) A Q|| for Q the orthogonal projection onto span Z."""
    Q = Z @ Z.conj().T
    return opnorm((np.eye(A.shape[0]) - Q) @ A @ Q)


@dataclass
class ResidualIdentity:
    identity_residual: float
    t: np.ndarray
    limit_residuals: np.ndarray

    @property
    def decays_like_inverse_t(self):
        r = self.limit_residuals
        if np.all(r < 1e-14):
            return True
        rates = r[:-1] / np.maximum(r[1:], 1e-300)
        steps = self.t[1:] / self.t[:-1]
        return bool(np.all(np.abs(rates / steps - 1) < 0.1))


def residual_identity_check(S: SubspacedOperator, z, t=(1e2, 1e3, 1e4)) -> ResidualIdentity:
    """(zA + I)(A - z)^{-1} = zI + (z^2 + 1)(A - z)^{-1}, plus -z (A - z)^{-1} -> I along z = it."""
    z = complex(z)
    if z.imag == 0:
        raise InvalidInputError("z must be off the real axis", z=[z.real, z.imag])
    A = S.A
    I = np.eye(S.dim)
    R = _resolvent(A, z)
    ident = opnorm((z * A + I) @ R - (z * I + (z * z + 1) * R))
    t = np.asarray(t, dtype=float)
    lim = np.array([opnorm(-1j * s * _resolvent(A, 1j * s) - I) for s in t])
    return ResidualIdentity(ident, t, lim)


def canned_examples():
    """The cyclic and degenerate toy pairs."""
    v = np.array([[1.0], [1.0]]) / np.sqrt(2)
    return {
        "cyclic": SubspacedOperator(np.diag([1.0, 2.0]), v),
        "degenerate": SubspacedOperator(np.diag([1.0, 1.0]), np.array([[1.0], [0.0]])),
    }


def random_subspaced(rng, dim, k, optimizer_z=None):
    """Random (A, N); with optimizer_z, spec(A) is forced to contain the optimizing lambda."""
    from .linalg import random_hermitian, random_unitary

    A = random_hermitian(dim, rng)
    N = random_unitary(dim, rng)[:, :k]
    lam = None if optimizer_z is None else optimizing_lambda(optimizer_z)
    if lam is not None:
        # put lam into spec(A) with its eigenvector inside N so the bound is attained
        w, U = np.linalg.eigh(A)
        w[0] = lam
        A = (U * w) @ U.conj().T
        A = (A + A.conj().T) / 2
        N = orth_columns(np.hstack([U[:, :1], N[:, :k - 1]]))
    return SubspacedOperator(A, N)

"""
Independent finite-difference oracle.

Operators are discretized on a cell-centred grid: nodes sit at a + (j + 1/2) h,
so every boundary point (and the interface point x0 of a full-line window)
lies half-way between two nodes.  Boundary conditions are imposed through a
ghost node u_g = r u_1 which only modifies a diagonal block, so the matrix
stays exactly Hermitian.  For the Robin condition sin(a) u' + cos(a) u = 0,
written in the eigenbasis of a and discretized as

    sin(a) (u_1 - u_g)/h + cos(a) (u_1 + u_g)/2 = 0,

the ghost factor is r = (sin a + (h/2) cos a) / (sin a - (h/2) cos a);
components with |sin a| <= 1e-8 are treated as Dirichlet (r = -1).

Potential values are cell averages of V over each dual cell.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid
from scipy.sparse.linalg import eigsh, splu

from .errors import InvalidInputError, InvariantError, SingularityError
from .linalg import as_matrix, check_hermitian, opnorm, sin_cos
from .ode import GridPotential, fundamental_system

DIRICHLET_SPLIT = 1e-8


@dataclass(frozen=True, eq=False)
class FdOperator:
    nodes: np.ndarray
    h: float
    n: int
    H: sp.csr_matrix
    kind: str  # "halfline" or "line"
    x0: float
    alpha: Optional[np.ndarray] = None
    ghost_left: Optional[np.ndarray] = None  # u_g = ghost_left @ u_1 (halfline only)

    @property
    def size(self):
        return self.H.shape[0]

    def dense(self):
        return self.H.toarray()

    def flat(self, u):
        u = np.asarray(u, dtype=complex)
        return u.reshape(self.size, -1)

    def unflat(self, v, k=None):
        v = np.asarray(v)
        return v.reshape(len(self.nodes), self.n, -1) if k is None or k > 1 \
            else v.reshape(len(self.nodes), self.n)

    def inner(self, u, v):
        """h * sum u^* v over nodes (matrix of inner products for stacked columns)."""
        return self.h * (self.flat(u).conj().T @ self.flat(v))

    @cached_property
    def _eigh(self):
        w, Vv = np.linalg.eigh(self.dense())
        return w, Vv / np.sqrt(self.h)

    def eig(self):
        """Eigenvalues and eigenfunctions (columns normalized in the h-weighted norm)."""
        return self._eigh

    def interface_values(self, u):
        """(u(x0), u'(x0)) reconstructed from nodal values.

        ``u`` has shape (nodes, n, k).
        """
        u = np.asarray(u).reshape(len(self.nodes), self.n, -1)
        if self.kind == "halfline":
            g = np.einsum("ij,jk->ik", self.ghost_left, u[0])
            return 0.5 * (g + u[0]), (u[0] - g) / self.h
        c = int(np.searchsorted(self.nodes, self.x0))
        return 0.5 * (u[c - 1] + u[c]), (u[c] - u[c - 1]) / self.h


def _laplacian_blocks(N, n, h, left_block, right_block):
    main = sp.eye(N, format="csr") * 2.0
    off = sp.diags([np.ones(N - 1), np.ones(N - 1)], [-1, 1], format="csr")
    T = sp.kron((main - off) / h ** 2, sp.eye(n), format="csr")
    corr = sp.lil_matrix((N * n, N * n), dtype=complex)
    corr[:n, :n] = -left_block / h ** 2
    corr[-n:, -n:] = corr[-n:, -n:].toarray() - right_block / h ** 2
    return T + corr.tocsr()


def _potential_blocks(V: GridPotential, nodes, h):
    return sp.block_diag([V.cell_average(x - h / 2, x + h / 2) for x in nodes], format="csr")


def _steps(length, h):
    N = int(round(length / h))
    if N < 2 or abs(N * h - length) > 1e-9 * max(1.0, length):
        raise InvalidInputError("h must divide the interval", length=length, h=h)
    return N


def robin_ghost(alpha, h):
    """Hermitian ghost factor R with u_g = R u_1 for the condition at the left end."""
    alpha = check_hermitian(alpha, name="alpha")
    a, Q = np.linalg.eigh(alpha)
    s, c = np.sin(a), np.cos(a)
    r = np.where(np.abs(s) <= DIRICHLET_SPLIT, -1.0, (s + 0.5 * h * c) / (s - 0.5 * h * c))
    return (Q * r) @ Q.conj().T


def discretize(V: GridPotential, interval, h, alpha) -> FdOperator:
    """Half-line operator on [a, b]: Robin (alpha) at a, Dirichlet at b."""
    a, b = map(float, interval)
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    N = _steps(b - a, h)
    nodes = a + h * (np.arange(N) + 0.5)
    R = robin_ghost(alpha, h)
    H = _laplacian_blocks(N, n, h, R, -np.eye(n)) + _potential_blocks(V, nodes, h)
    H = sp.csr_matrix(H)
    d = abs(H - H.conj().T).max() if H.nnz else 0.0
    if d > 1e-12 * max(1.0, abs(H).max()):
        raise InvariantError("fd assembly is not Hermitian", defect=float(d))
    return FdOperator(nodes, float(h), n, H, "halfline", a, alpha, R)


def discretize_line(V: GridPotential, X, h) -> FdOperator:
    """Full-line window [x0 - X, x0 + X] with Dirichlet caps; x0 sits between two nodes."""
    n = V.dim
    N = _steps(2 * X, h)
    if N % 2:
        raise InvalidInputError("X/h must be an integer so that x0 falls between nodes")
    a = V.x0 - X
    nodes = a + h * (np.arange(N) + 0.5)
    I = np.eye(n)
    H = _laplacian_blocks(N, n, h, -I, -I) + _potential_blocks(V, nodes, h)
    return FdOperator(nodes, float(h), n, sp.csr_matrix(H), "line", V.x0)


# ----------------------------------------------------------------------------
# resolvent
# ----------------------------------------------------------------------------

class Resolvent:
    """Sparse LU factorization of H - z, reusable for many right-hand sides."""

    def __init__(self, op: FdOperator, z):
        z = complex(z)
        if abs(z.imag) < 1e-12:
            near = eigsh(op.H.astype(complex), k=1, sigma=z.real, which="LM",
                         return_eigenvectors=False)
            if np.min(np.abs(near - z.real)) < 1e-12:
                raise SingularityError("z is within 1e-12 of an fd eigenvalue", z=[z.real, z.imag])
        self.op = op
        self.z = z
        A = (op.H - z * sp.eye(op.size, format="csr")).tocsc()
        self._lu = splu(A)

    def __call__(self, f):
        f = np.asarray(f, dtype=complex)
        shape = f.shape
        return self._lu.solve(f.reshape(self.op.size, -1)).reshape(shape)


def resolvent_apply(op: FdOperator, z, f):
    """Solve (H_fd - z) u = f for f of shape (nodes, n) or (nodes, n, k)."""
    return Resolvent(op, z)(f)


@dataclass
class StoneReport:
    stone: np.ndarray
    eigensum: np.ndarray
    difference: float
    eps: float


def stone_formula(op: FdOperator, f, g, lam1, lam2, eps, nodes=None) -> StoneReport:
    """(1/2 pi i) int [(f, R(l + i eps) g) - (f, R(l - i eps) g)] dl over [lam1, lam2]

    compared with the eigen-projector sum over (lam1, lam2].
    """
    if nodes is None:
        nodes = int(np.ceil(4 * (lam2 - lam1) / eps)) + 1
    lam = np.linspace(lam1, lam2, nodes)
    F, G = op.flat(f), op.flat(g)
    vals = []
    for l in lam:
        up = F.conj().T @ Resolvent(op, complex(l, eps))(G) * op.h
        dn = F.conj().T @ Resolvent(op, complex(l, -eps))(G) * op.h
        vals.append((up - dn) / (2j * np.pi))
    stone = trapezoid(np.array(vals), lam, axis=0)
    w, U = op.eig()
    sel = (w > lam1) & (w <= lam2)
    cf = op.h * (U[:, sel].conj().T @ F)
    cg = op.h * (U[:, sel].conj().T @ G)
    eigsum = cf.conj().T @ cg
    return StoneReport(stone, eigsum, opnorm(stone - eigsum), eps)


# ----------------------------------------------------------------------------
# Parseval and eigen-expansions
# ----------------------------------------------------------------------------

def expansion_coefficients(op: FdOperator, u):
    w, U = op.eig()
    return w, op.h * (U.conj().T @ op.flat(u))


def parseval_check(op: FdOperator, u) -> float:
    """|h sum |u|^2 - sum_k |c_k|^2| for the fd eigen-expansion of u."""
    _, c = expansion_coefficients(op, u)
    nrm = float(np.real(np.trace(op.inner(u, u))))
    return abs(nrm - float(np.sum(np.abs(c) ** 2)))


def boundary_vectors(op: FdOperator, alpha=None):
    """Columns [a; b] per eigenfunction, with u = theta a + phi b near x0.

    a = cos u(x0) + sin u'(x0),  b = -sin u(x0) + cos u'(x0).
    For half-line operators only b is returned (theta-component vanishes).
    """
    w, U = op.eig()
    alpha = op.alpha if alpha is None else alpha
    S, C = sin_cos(alpha)
    u0, du0 = op.interface_values(U.reshape(len(op.nodes), op.n, -1))
    a = C @ u0 + S @ du0
    b = -S @ u0 + C @ du0
    return w, a, b


def fd_halfline_atoms(op: FdOperator, lam1=-np.inf, lam2=np.inf):
    """Point masses of the fd m-function measure: b b^* per eigenvalue in (lam1, lam2]."""
    w, a, b = boundary_vectors(op)
    sel = (w > lam1) & (w <= lam2)
    return w[sel], np.einsum("ik,jk->kij", b[:, sel], b[:, sel].conj())


def fd_line_measure(op: FdOperator, alpha, lam1, lam2):
    """Omega((lam1, lam2]) of the fd full-line window as a 2n x 2n matrix."""
    w, a, b = boundary_vectors(op, alpha)
    sel = (w > lam1) & (w <= lam2)
    ab = np.vstack([a[:, sel], b[:, sel]])
    return ab @ ab.conj().T


# ----------------------------------------------------------------------------
# poles of capped m-functions
# ----------------------------------------------------------------------------

def _capped_theta_phi(V, alpha, lam, L):
    fs = fundamental_system(V, complex(lam), alpha, V.x0 + L, nodes=[V.x0 + L])
    return fs.theta[-1], fs.phi[-1]


def cayley_phase(V, alpha, lam, L):
    """Signed eigenphase nearest 0 of the unitary Cayley transform of m_L(lam).

    (m - i)(m + i)^{-1} is similar to (theta + i phi)(theta - i phi)^{-1}; a pole
    of m_L is an eigenvalue 1 of this unitary, crossed with increasing phase.
    """
    th, ph = _capped_theta_phi(V, alpha, lam, L)
    Uc = np.linalg.solve((th - 1j * ph).T, (th + 1j * ph).T).T
    ang = np.angle(np.linalg.eigvals(Uc))
    return float(ang[np.argmin(np.abs(ang))])


def _bisect_pole(V, alpha, L, lo, hi, xtol):
    flo, fhi = cayley_phase(V, alpha, lo, L), cayley_phase(V, alpha, hi, L)
    if not (flo < 0 < fhi):
        return None
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        fm = cayley_phase(V, alpha, mid, L)
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class PoleReport:
    h: float
    fd_eigs: np.ndarray
    poles: np.ndarray
    diffs: np.ndarray
    tolerance: float
    passed: bool
    multiplicity: np.ndarray = None
    extrapolated: bool = False


def _clusters(w, rel=1e-9):
    groups = []
    for x in w:
        if groups and abs(x - groups[-1][-1]) <= rel * max(1.0, abs(x)):
            groups[-1].append(x)
        else:
            groups.append([x])
    return np.array([np.mean(g) for g in groups]), np.array([len(g) for g in groups])


def fd_capped_eigs(V, alpha, L, h, extrapolate=False):
    """Eigenvalues of the capped fd problem; with ``extrapolate`` the (h, h/2)
    Richardson combination (4 w_{h/2} - w_h)/3 of the lowest ones."""
    w = discretize(V, (V.x0, V.x0 + L), h, alpha).eig()[0]
    if not extrapolate:
        return w
    w2 = discretize(V, (V.x0, V.x0 + L), h / 2, alpha).eig()[0][:len(w)]
    return (4 * w2 - w) / 3


def ml_poles_vs_eigs(V: GridPotential, alpha, L, h, lam_max=6.0, count=None, C=4.0,
                     extrapolate=False) -> PoleReport:
    """Poles of the Dirichlet-capped m_L located by bisection, matched to fd eigenvalues.

    Only fd eigenvalues with |lam| <= ``lam_max`` (and at most ``count`` clusters)
    are compared: the second-order fd error behaves like lam^2 h^2 / 12, so a
    fixed C h^2 tolerance needs a bounded spectral window.  Deep Robin bound
    states (alpha eigenvalues near 0 mod pi) fall outside it.
    """
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    w = fd_capped_eigs(V, alpha, L, h, extrapolate)
    if lam_max is not None:
        w = w[np.abs(w) <= lam_max]
    w, mult = _clusters(w)
    if count is not None:
        w, mult = w[:count], mult[:count]
    tol = max(1e-6, C * h * h)
    poles = []
    for k, lf in enumerate(w):
        gap_l = lf - w[k - 1] if k > 0 else np.inf
        gap_r = w[k + 1] - lf if k + 1 < len(w) else np.inf
        room = 0.45 * min(gap_l, gap_r)
        width = min(room, max(1e-3, 20 * h * h * (1 + abs(lf)) ** 2))
        pole = None
        while pole is None and width <= room * (1 + 1e-12):
            pole = _bisect_pole(V, alpha, L, lf - width, lf + width, 1e-13 * max(1.0, abs(lf)))
            width *= 2
        poles.append(np.nan if pole is None else pole)
    poles = np.array(poles)
    diffs = np.abs(poles - w)
    ok = bool(len(w) > 0 and np.all(np.isfinite(diffs)) and np.all(diffs <= tol))
    return PoleReport(h, w, poles, diffs, tol, ok, mult, extrapolate)

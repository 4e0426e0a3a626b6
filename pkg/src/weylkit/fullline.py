"""
Full-line Weyl-Titchmarsh block function, Green's function and the Donoghue
block function built from the two half-line m-functions at x0.

Block index 0 refers to the left half-line (the '-' side), index 1 to the
right half-line ('+').
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, ResolutionError, SingularityError
from .herglotz import HerglotzEvaluator, interval_measure
from .halfline import (DEFAULT_TOL, MCache, _solution_at, left_halfline_m, m_exact_tail,
                       sample_weyl_solution, weyl_m)
from .linalg import (as_matrix, check_hermitian, hermitian_sqrt, imag_part, inv_sqrt, opnorm,
                     sin_cos)
from .ode import GridPotential


@dataclass
class BlockMatrix2:
    """2 x 2 array of n x n blocks."""

    b00: np.ndarray
    b01: np.ndarray
    b10: np.ndarray
    b11: np.ndarray

    @property
    def n(self):
        return self.b00.shape[0]

    def full(self) -> np.ndarray:
        return np.block([[self.b00, self.b01], [self.b10, self.b11]])

    @classmethod
    def from_full(cls, A, n=None):
        A = np.asarray(A)
        n = A.shape[0] // 2 if n is None else n
        return cls(A[:n, :n].copy(), A[:n, n:].copy(), A[n:, :n].copy(), A[n:, n:].copy())

    def block(self, j, k):
        return (self.b00, self.b01, self.b10, self.b11)[2 * j + k]

    def adjoint(self):
        return BlockMatrix2.from_full(self.full().conj().T)

    def __matmul__(self, other):
        return BlockMatrix2.from_full(self.full() @ other.full())

    def __add__(self, other):
        return BlockMatrix2.from_full(self.full() + other.full())

    def __sub__(self, other):
        return BlockMatrix2.from_full(self.full() - other.full())


@dataclass(eq=False)
class FullLineProblem:
    """Potential with x0 in its interior, a boundary parameter and an fd window half-width."""

    V: GridPotential
    alpha: np.ndarray
    X: float = 60.0
    tol: float = DEFAULT_TOL
    method: str = "doubling"
    cache: MCache = field(default_factory=MCache, repr=False)

    def __post_init__(self):
        self.alpha = check_hermitian(as_matrix(self.alpha, self.V.dim), name="alpha")

    @property
    def x0(self):
        return self.V.x0

    @property
    def n(self):
        return self.V.dim

    @classmethod
    def constant(cls, V0, alpha=None, x0=0.0, X=60.0):
        V0 = as_matrix(V0)
        n = V0.shape[0]
        V = GridPotential(x0, np.array([x0 - 1.0, x0 + 1.0]), V0[None])
        return cls(V, np.zeros((n, n)) if alpha is None else alpha, X)

    @classmethod
    def free(cls, n=1, alpha=None, x0=0.0, X=60.0):
        return cls.constant(np.zeros((n, n)), alpha, x0, X)

    def with_method(self, method):
        return FullLineProblem(self.V, self.alpha, self.X, self.tol, method)

    def m_plus(self, z):
        if self.method == "exact-tail":
            return m_exact_tail(self.V, self.alpha, z)
        return weyl_m(self.V, self.alpha, z, tol=self.tol, cache=self.cache).m

    def m_minus(self, z):
        if self.method == "exact-tail":
            return -m_exact_tail(self.V.left_part_reflected(), -self.alpha, z)
        return left_halfline_m(self.V, self.alpha, z, tol=self.tol, cache=self.cache).m


def block_M(p: FullLineProblem, z, check_tol=1e-9) -> BlockMatrix2:
    """M_00 = W^{-1}, M_01 = W^{-1}(m_- + m_+)/2, M_10 = (m_- + m_+)W^{-1}/2, M_11 = m_+ W^{-1} m_-."""
    mp, mm = p.m_plus(z), p.m_minus(z)
    return _block_from_m(mp, mm, check_tol)


def _block_from_m(mp, mm, check_tol=1e-9):
    W = mm - mp
    sv = np.linalg.svd(W, compute_uv=False)
    if sv[-1] <= 1e-14 * max(1.0, sv[0]):
        raise SingularityError("W(z) = m_- - m_+ is singular", smallest_singular_value=float(sv[-1]))
    Wi = np.linalg.inv(W)
    s = mm + mp
    b11 = mp @ Wi @ mm
    alt = mm @ Wi @ mp
    d = opnorm(b11 - alt)
    if d > check_tol * max(1.0, opnorm(b11)):
        raise InvariantError("the two forms of the (1,1) block disagree", residual=d)
    return BlockMatrix2(Wi, 0.5 * Wi @ s, 0.5 * s @ Wi, b11)


def block_evaluator(p: FullLineProblem, donoghue=False) -> HerglotzEvaluator:
    if donoghue:
        return HerglotzEvaluator(func=lambda z: donoghue_block_M(p, z).full(), dim=2 * p.n,
                                 name="MDo")
    return HerglotzEvaluator(func=lambda z: block_M(p, z).full(), dim=2 * p.n, name="M")


# ----------------------------------------------------------------------------
# Weyl solutions on the whole line and the Green's function
# ----------------------------------------------------------------------------

def weyl_solutions(p: FullLineProblem, z, x):
    """(psi_-, psi_+, m_-, m_+) sampled at the points x (any side of x0).

    psi_+ decays at +inf, psi_- at -inf; both satisfy the alpha-normalization at x0.
    Decaying directions use the stable sweep, the growing directions propagate
    the x0 data exactly.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V, a, x0, n = p.V, p.alpha, p.x0, p.n
    z = complex(z)
    S, C = sin_cos(a)
    right = x >= x0
    psi_p = np.zeros((len(x), n, n), dtype=complex)
    psi_m = np.zeros_like(psi_p)
    pp, _, mp = sample_weyl_solution(V, a, z, np.concatenate([[x0], x[right]]))
    psi_p[right] = pp[1:]
    Vr = V.reflected()
    pr, _, mr = sample_weyl_solution(Vr, -a, z, np.concatenate([[x0], 2 * x0 - x[~right]]))
    psi_m[~right] = pr[1:]
    mm = -mr
    y0p, yp0p = C - S @ mp, S + C @ mp
    y0m, yp0m = C - S @ mm, S + C @ mm
    for k in np.nonzero(~right)[0]:
        psi_p[k] = _solution_at(V, z, y0p, yp0p, x[k])[0]
    for k in np.nonzero(right)[0]:
        psi_m[k] = _solution_at(V, z, y0m, yp0m, x[k])[0]
    return psi_m, psi_p, mm, mp


def fullline_green(p: FullLineProblem, z, x, xp) -> np.ndarray:
    """G(z, x, x') = psi_-(z, x) W^{-1} psi_+(conj z, x')^* for x <= x', mirrored otherwise."""
    z = complex(z)
    ym, yp, mm, mp = weyl_solutions(p, z, [x])
    bm, bp, bmm, bmp = weyl_solutions(p, z.conjugate(), [xp])
    Wi = np.linalg.inv(mm - mp)
    if x <= xp:
        return ym[0] @ Wi @ bp[0].conj().T
    return yp[0] @ Wi @ bm[0].conj().T


def omega_measure(p: FullLineProblem, lam1, lam2, resolution=None, atoms=(), threads=None,
                  donoghue=False, method="exact-tail"):
    """Omega((lam1, lam2]) of the block function as a 2n x 2n IntervalMeasure.

    Evaluations near the real axis use the exact-tail m-functions by default.
    """
    q = p.with_method(method) if method != p.method else p
    return interval_measure(block_evaluator(q, donoghue), lam1, lam2, resolution, atoms, threads)


# ----------------------------------------------------------------------------
# T and E blocks, Donoghue block function
# ----------------------------------------------------------------------------

def t_e_blocks(m_plus_i, m_minus_i, floor=1e-14, check_tol=1e-10):
    """(T, E, T^{-1}) built from m_+(i) and m_-(i).

    With P_+ = [Im m_+(i)]^{-1/2}, P_- = [-Im m_-(i)]^{-1/2}, W_i = m_-(i) - m_+(i):

        T = [[m_-(i) P_-, -m_+(i) P_+], [-P_-, P_+]]
        E = [[0, E01], [E01^*, 0]],   E01 = P_- [m_+(i) - m_-(i)^*] P_+ / 2
        T^{-1} = [[P_-^{-1} W_i^{-1}, P_-^{-1} W_i^{-1} m_+(i)],
                  [P_+^{-1} W_i^{-1}, P_+^{-1} W_i^{-1} m_-(i)]]

    E equals -T^* Re(M(i)) T, the constant that makes T^* M T + E take the
    value iI at z = i.
    """
    mp = as_matrix(m_plus_i)
    mm = as_matrix(m_minus_i, mp.shape[0])
    Imp, Imm = imag_part(mp), -imag_part(mm)
    Pp, Pm = inv_sqrt(Imp, floor), inv_sqrt(Imm, floor)
    Pp_inv, Pm_inv = hermitian_sqrt(Imp), hermitian_sqrt(Imm)
    Wi = np.linalg.inv(mm - mp)
    T = BlockMatrix2(mm @ Pm, -mp @ Pp, -Pm, Pp)
    E01 = 0.5 * Pm @ (mp - mm.conj().T) @ Pp
    E = BlockMatrix2(np.zeros_like(E01), E01, E01.conj().T, np.zeros_like(E01))
    Tinv = BlockMatrix2(Pm_inv @ Wi, Pm_inv @ Wi @ mp, Pp_inv @ Wi, Pp_inv @ Wi @ mm)
    I = np.eye(2 * mp.shape[0])
    r1 = opnorm(T.full() @ Tinv.full() - I)
    r2 = opnorm(Tinv.full() @ T.full() - I)
    if max(r1, r2) > check_tol * max(1.0, opnorm(T.full()) * opnorm(Tinv.full())):
        raise InvariantError("T and its closed-form inverse disagree", residuals=[r1, r2])
    return T, E, Tinv


def donoghue_parts(p: FullLineProblem):
    return t_e_blocks(p.m_plus(1j), p.m_minus(1j))


def donoghue_block_M(p: FullLineProblem, z) -> BlockMatrix2:
    """T^* M(z) T + E."""
    T, E, _ = donoghue_parts(p)
    M = block_M(p, z)
    return BlockMatrix2.from_full(T.full().conj().T @ M.full() @ T.full() + E.full())


# ----------------------------------------------------------------------------
# frames on the fd grid and the projection oracle
# ----------------------------------------------------------------------------

@dataclass
class LineFrames:
    """Cut frames Psi_- (supported left of x0) and Psi_+ (x >= x0) on an fd grid."""

    nodes: np.ndarray
    h: float
    columns: np.ndarray  # (nodes * n, 2n)
    gram: np.ndarray
    raw_gram: np.ndarray

    @property
    def gram_deviation(self):
        return opnorm(self.gram - np.eye(self.gram.shape[0]))

    @property
    def raw_deviation(self):
        return opnorm(self.raw_gram - np.eye(self.raw_gram.shape[0]))

    def project(self, u):
        """P u = sum_j Psi_j (Psi_j, u) for u of shape (nodes * n, k)."""
        F = self.columns
        return F @ (self.h * (F.conj().T @ u))

    def idempotency_residual(self):
        """||P^2 - P||, computed exactly from the Gram matrix."""
        G = self.gram
        return float(np.max(np.abs(np.linalg.eigvals((G - np.eye(len(G))) @ G)))) if G.size else 0.0


def minimal_operator_frames(p: FullLineProblem, z=1j, h=0.01, X=None, lowdin=True,
                            max_deviation=1e-3) -> LineFrames:
    """Frames for N_z = N_- + N_+ sampled on the cell-centred fd grid of the window."""
    X = p.X if X is None else X
    z = complex(z)
    N = int(round(2 * X / h))
    nodes = p.x0 - X + h * (np.arange(N) + 0.5)
    n = p.n
    psi_m, psi_p, mm, mp = weyl_solutions(p, z, nodes)
    # normalizers use the L-doubling m-functions
    Np = inv_sqrt(imag_part(p.m_plus(z)) / z.imag, floor=1e-300)
    Nm = inv_sqrt(-imag_part(p.m_minus(z)) / z.imag, floor=1e-300)
    right = nodes >= p.x0
    F = np.zeros((N, n, 2 * n), dtype=complex)
    F[~right, :, :n] = psi_m[~right] @ Nm
    F[right, :, n:] = psi_p[right] @ Np
    F = F.reshape(N * n, 2 * n)
    raw = h * (F.conj().T @ F)
    dev = opnorm(raw - np.eye(2 * n))
    if dev > max_deviation:
        raise ResolutionError("frame Gram deviation too large for this grid", deviation=dev,
                              h=h, limit=max_deviation)
    G = raw
    if lowdin:
        F = F @ inv_sqrt(raw)
        G = h * (F.conj().T @ F)
    return LineFrames(nodes, h, F, G, raw)


def donoghue_block_oracle(p: FullLineProblem, z, h=0.01, X=None, frames=None,
                          op=None) -> BlockMatrix2:
    """Matrix elements (Psi_j, (zH + I)(H - z)^{-1} Psi_k) of the fd full-line operator."""
    from .oracle import Resolvent, discretize_line

    X = p.X if X is None else X
    z = complex(z)
    if op is None:
        op = discretize_line(p.V, X, h)
    if frames is None:
        frames = minimal_operator_frames(p, 1j, h, X)
    F = frames.columns
    RF = Resolvent(op, z)(F)
    M = h * (F.conj().T @ (z * F + (z * z + 1) * RF))
    return BlockMatrix2.from_full(M)

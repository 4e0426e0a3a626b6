"""
Half-line Weyl-Titchmarsh m-functions on [x0, inf).

The limit-point m-function is approximated by Dirichlet-capped problems on
[x0, x0 + L] with L doubled until successive values agree.  A capped value is
obtained by a backward sweep: start from the cap with the exact
constant-cell ratio Y'Y^{-1} of the last piece, propagate the stacked data
[Y; Y'] leftwards through the cells with QR re-orthonormalization, and read off

    m = (-sin(a) Y0 + cos(a) Y0') (cos(a) Y0 + sin(a) Y0')^{-1}

at x0.  The same sweep with the decaying exponential in the frozen tail gives
the square-integrable Weyl solution itself, which is what frames, Green's
functions and quadrature identities sample.
"""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (ConvergenceError, DomainError, InvalidInputError, SingularityError,
                     TransformSingularityError)
from .linalg import as_matrix, check_hermitian, imag_part, inv_sqrt, opnorm, sin_cos
from .ode import FundamentalSystem, GridPotential, apply_transfer, mode_roots, transfer_coeffs

MAX_GROWTH = 20.0  # max Re(s) * length per sweep chunk before re-orthonormalizing
DEFAULT_TOL = 1e-10


class _CapSingular(Exception):
    pass


# ----------------------------------------------------------------------------
# cache
# ----------------------------------------------------------------------------

def _alpha_key(alpha):
    return hashlib.sha1(np.ascontiguousarray(alpha).tobytes()).hexdigest()


class MCache:
    """Capped m-values keyed by (z, L, cap, alpha hash).

    Reads are lock-free dictionary lookups; insertion takes a lock so that a
    single writer stores each key.
    """

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    def get(self, key):
        return self._data.get(key)

    def put(self, key, value):
        with self._lock:
            self._data.setdefault(key, value)
        return self._data[key]

    def __len__(self):
        return len(self._data)


# ----------------------------------------------------------------------------
# tail ratios
# ----------------------------------------------------------------------------

def _tail_ratio_modes(s, ell, cap):
    """Y'(t)/Y(t) at the start of a constant piece of length ell, per mode."""
    if cap == "decay":
        return -s
    w = s * ell
    q = np.exp(-2 * w)
    small = np.abs(w) < 1e-4
    w2 = w * w
    if cap == "dirichlet":
        # -s coth(s ell);  w coth w = 1 + w^2/3 - ...
        denom = 1 - q
        if np.any((np.abs(denom) < 1e-13) & ~small):
            raise _CapSingular()
        safe = np.where(small, 1.0, denom)
        big = -s * (1 + q) / safe
        ser = -(1 + w2 / 3 - w2 * w2 / 45) / ell
        return np.where(small, ser, big)
    if cap == "neumann":
        # -s tanh(s ell)
        denom = 1 + q
        if np.any(np.abs(denom) < 1e-13):
            raise _CapSingular()
        big = -s * (1 - q) / denom
        ser = -s * s * ell * (1 - w2 / 3)
        return np.where(small, ser, big)
    raise InvalidInputError(f"unknown cap {cap!r}")


# ----------------------------------------------------------------------------
# backward sweep
# ----------------------------------------------------------------------------

@dataclass
class _Sweep:
    V: GridPotential
    z: complex
    # chunk records, right to left: (left, right, cell index, state Q at right)
    chunks: list
    R: list  # R factors; R[0] from the starting state
    tail: tuple  # (start, cell index) of the exponential tail, or None
    Y0: np.ndarray
    Y0p: np.ndarray


def _sweep(V: GridPotential, z, L=None, cap="decay") -> _Sweep:
    n = V.dim
    x0 = V.x0
    if cap == "decay":
        start = V.tail_start
        ci_last = len(V.cells) - 1
        lam, U = V.cell_eig(ci_last)
        s = mode_roots(lam, z)
        if np.any(s.real <= 0):
            raise DomainError("z lies in the essential spectrum of the tail", z=[z.real, z.imag])
        ratio = _tail_ratio_modes(s, None, "decay")
        interior = V.pieces(x0, start)
        tail = (start, ci_last)
    else:
        pcs = V.pieces(x0, x0 + L)
        l_last, r_last, ci_last = pcs[-1]
        lam, U = V.cell_eig(ci_last)
        s = mode_roots(lam, z)
        ratio = _tail_ratio_modes(s, r_last - l_last, cap)
        interior = pcs[:-1]
        tail = None
    Rt = (U * ratio) @ U.conj().T
    S = np.vstack([np.eye(n, dtype=complex), Rt])
    Q, R0 = np.linalg.qr(S)
    Rs = [R0]
    chunks = []
    for l, r, ci in reversed(interior):
        lam, U = V.cell_eig(ci)
        s = mode_roots(lam, z)
        rate = max(float(np.max(s.real)), 1e-300)
        k = max(1, int(np.ceil((r - l) * rate / MAX_GROWTH)))
        bounds = np.linspace(l, r, k + 1)
        for a, b in zip(bounds[::-1][1:], bounds[::-1][:-1]):
            chunks.append((a, b, ci, Q))
            Y, Yp = apply_transfer(U, s, -(b - a), Q[:n], Q[n:])
            Q, Rk = np.linalg.qr(np.vstack([Y, Yp]))
            Rs.append(Rk)
    return _Sweep(V, complex(z), chunks, Rs, tail, Q[:n], Q[n:])


def _boundary_solve(Y0, Y0p, alpha):
    """(m, G^{-1}) from data (Y0, Y0') of the chosen solution at x0."""
    S, C = sin_cos(alpha)
    G = C @ Y0 + S @ Y0p
    if np.linalg.cond(G) > 1e12:
        raise _CapSingular()
    Ginv = np.linalg.inv(G)
    return (-S @ Y0 + C @ Y0p) @ Ginv, Ginv


def m_capped(V: GridPotential, alpha, z, L, cap="dirichlet", cache: Optional[MCache] = None):
    """m_L(z) for the problem on [x0, x0 + L] with a Dirichlet or Neumann cap at x0 + L.

    ``cap="decay"`` ignores L and uses the exact decaying tail solution.
    """
    alpha = check_hermitian(as_matrix(alpha, V.dim), name="alpha")
    z = complex(z)
    key = None
    if cache is not None:
        key = (z, None if cap == "decay" else float(L), cap, _alpha_key(alpha))
        hit = cache.get(key)
        if hit is not None:
            return hit
    sw = _sweep(V, z, L, cap)
    m, _ = _boundary_solve(sw.Y0, sw.Y0p, alpha)
    if cache is not None:
        m = cache.put(key, m)
    return m


def m_exact_tail(V: GridPotential, alpha, z):
    """Limit-point m-function from the exact exponential tail (no truncation)."""
    try:
        return m_capped(V, alpha, z, None, cap="decay")
    except _CapSingular:
        raise SingularityError("boundary data singular: z is an eigenvalue", z=[z.real, z.imag])


# ----------------------------------------------------------------------------
# weyl_m
# ----------------------------------------------------------------------------

@dataclass
class WeylResult:
    z: complex
    alpha: np.ndarray
    m: np.ndarray
    truncation_length: float
    cauchy_gap: float
    disk_diameter: float
    history: list = field(default_factory=list, repr=False)


def default_schedule(V: GridPotential, levels=24):
    L0 = (V.tail_start - V.x0) + 8.0
    return [L0 * 2.0 ** k for k in range(levels)]


def _capped_pair(V, alpha, z, L, cache):
    for attempt in range(6):
        Lp = L * (1 + 1e-3 * attempt * (1 + attempt))
        try:
            mD = m_capped(V, alpha, z, Lp, "dirichlet", cache)
            mN = m_capped(V, alpha, z, Lp, "neumann", cache)
            return Lp, mD, mN
        except _CapSingular:
            continue
    raise ConvergenceError("capped problem singular for all perturbed L", L=L)


def weyl_m(V: GridPotential, alpha, z, L_schedule=None, tol=DEFAULT_TOL,
           cache: Optional[MCache] = None) -> WeylResult:
    """Half-line m-function by Dirichlet truncation with L-doubling.

    Stops at the first level where the change from the previous level and the
    Dirichlet/Neumann diameter are both below ``tol``.  Real z is accepted when
    it lies in the resolvent set.
    """
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    z = complex(z)
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    if z.imag < 0:
        r = weyl_m(V, alpha, z.conjugate(), L_schedule, tol, cache)
        return WeylResult(z, alpha, r.m.conj().T, r.truncation_length, r.cauchy_gap,
                          r.disk_diameter, r.history)
    sched = list(L_schedule) if L_schedule is not None else default_schedule(V)
    if any(b <= a for a, b in zip(sched, sched[1:])) or sched[0] <= 0:
        raise InvalidInputError("L schedule must be positive and increasing")
    prev = None
    gap = float("inf")
    hist = []
    for L in sched:
        Lp, mD, mN = _capped_pair(V, alpha, z, L, cache)
        disk = opnorm(mD - mN)
        if prev is not None:
            gap = opnorm(mD - prev)
        hist.append((Lp, gap, disk))
        if prev is not None and gap < tol and disk < tol:
            return WeylResult(z, alpha, mD, Lp, gap, disk, hist)
        prev = mD
    raise ConvergenceError("L-doubling did not reach tolerance", z=[z.real, z.imag],
                           tol=tol, cauchy_gap=gap, disk_diameter=hist[-1][2],
                           truncation_length=hist[-1][0])


def weyl_evaluator(V: GridPotential, alpha, tol=1e-8, side="+", method="doubling"):
    """HerglotzEvaluator for m_+ (side '+') or -m_- (side '-').

    ``method="exact-tail"`` skips L-doubling and closes the sweep with the
    exact decaying solution of the frozen tail; it is much cheaper near the
    real axis, where doubling needs very long truncations.
    """
    from .herglotz import HerglotzEvaluator

    if method not in ("doubling", "exact-tail"):
        raise InvalidInputError("method must be 'doubling' or 'exact-tail'", method=method)
    cache = MCache()
    # -m_- is the reflected '+' problem with boundary parameter -alpha
    W, a = (V, alpha) if side == "+" else (V.left_part_reflected(), -as_matrix(alpha, V.dim))
    if method == "exact-tail":
        f = lambda z: m_exact_tail(W, a, z)
    else:
        f = lambda z: weyl_m(W, a, z, tol=tol, cache=cache).m
    return HerglotzEvaluator(func=f, dim=V.dim, name=f"m{side}")


# ----------------------------------------------------------------------------
# Weyl solutions
# ----------------------------------------------------------------------------

def weyl_solution(fs: FundamentalSystem, m) -> np.ndarray:
    """psi = theta + phi m at every node of the fundamental system."""
    m = as_matrix(m, fs.dim)
    return fs.theta + fs.phi @ m


def weyl_solution_derivative(fs: FundamentalSystem, m) -> np.ndarray:
    return fs.theta_p + fs.phi_p @ m


def sample_weyl_solution(V: GridPotential, alpha, z, nodes):
    """Square-integrable Weyl solution psi and psi' at nodes >= x0 (stable sweep).

    Normalized by sin(a) psi'(x0) + cos(a) psi(x0) = I.  Returns (psi, dpsi, m)
    with m the exact-tail m-function consistent with psi.
    """
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    z = complex(z)
    nodes = np.asarray(nodes, dtype=float)
    if nodes.size and nodes.min() < V.x0 - 1e-12:
        raise DomainError("sample nodes must be >= x0")
    sw = _sweep(V, z, None, "decay")
    try:
        m, Ginv = _boundary_solve(sw.Y0, sw.Y0p, alpha)
    except _CapSingular:
        raise SingularityError("boundary data singular: z is an eigenvalue")
    # B[j] = (R_last ... R_{j+1})^{-1}
    nR = len(sw.R)
    B = [None] * nR
    B[-1] = np.eye(n, dtype=complex)
    for j in range(nR - 2, -1, -1):
        B[j] = np.linalg.solve(sw.R[j + 1], B[j + 1])
    psi = np.zeros((len(nodes), n, n), dtype=complex)
    dpsi = np.zeros_like(psi)
    # tail
    t0, ci = sw.tail
    sel = nodes >= t0
    if np.any(sel):
        lam, U = V.cell_eig(ci)
        s = mode_roots(lam, z)
        d = nodes[sel] - t0
        e = np.exp(-s[None, :] * d[:, None])
        F = np.linalg.solve(sw.R[0], B[0]) @ Ginv
        UhF = U.conj().T @ F
        psi[sel] = np.einsum("ij,kj,jl->kil", U, e, UhF)
        dpsi[sel] = np.einsum("ij,kj,jl->kil", U, -s[None, :] * e, UhF)
    # interior chunks: chunk k (0-based) starts from state Q at its right end,
    # whose accumulated factor is B[k]
    for k, (a, b, ci, Q) in enumerate(sw.chunks):
        sel = (nodes >= a) & (nodes < b)
        if not np.any(sel):
            continue
        lam, U = V.cell_eig(ci)
        s = mode_roots(lam, z)
        d = -(b - nodes[sel])
        c, sc, ss = transfer_coeffs(s[None, :], d[:, None])
        F = B[k] @ Ginv
        Uh = U.conj().T
        A1, A2 = Uh @ (Q[:n] @ F), Uh @ (Q[n:] @ F)
        psi[sel] = np.einsum("ij,kj,jl->kil", U, c, A1) + np.einsum("ij,kj,jl->kil", U, sc, A2)
        dpsi[sel] = np.einsum("ij,kj,jl->kil", U, ss, A1) + np.einsum("ij,kj,jl->kil", U, c, A2)
    return psi, dpsi, m


def _solution_at(V, z, Y0, Y0p, x):
    """Propagate data at x0 to a single point x (either side)."""
    y, yp = Y0, Y0p
    if x >= V.x0:
        for l, r, ci in V.pieces(V.x0, x):
            lam, U = V.cell_eig(ci)
            y, yp = apply_transfer(U, mode_roots(lam, z), r - l, y, yp)
    else:
        for l, r, ci in reversed(V.pieces(x, V.x0)):
            lam, U = V.cell_eig(ci)
            y, yp = apply_transfer(U, mode_roots(lam, z), -(r - l), y, yp)
    return y, yp


# ----------------------------------------------------------------------------
# Green's function
# ----------------------------------------------------------------------------

def greens_halfline(V: GridPotential, alpha, z, x, xp, tol=DEFAULT_TOL) -> np.ndarray:
    """G(z, x, x') = phi(z, x) psi(conj z, x')^* for x <= x', psi(z, x) phi(conj z, x')^* otherwise."""
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    z = complex(z)
    if min(x, xp) < V.x0:
        raise DomainError("x and x' must be >= x0")
    S, C = sin_cos(alpha)
    # the Weyl solutions are sampled from the stable sweep; m from weyl_m
    # would agree to tol and is not needed here
    lo, hi, swap = (x, xp, False) if x <= xp else (xp, x, True)
    if not swap:
        ph, _ = _solution_at(V, z, -S, C, lo)
        psi, _, _ = sample_weyl_solution(V, alpha, z.conjugate(), [hi])
        return ph @ psi[0].conj().T
    psi, _, _ = sample_weyl_solution(V, alpha, z, [hi])
    ph, _ = _solution_at(V, z.conjugate(), -S, C, lo)
    return psi[0] @ ph.conj().T


# ----------------------------------------------------------------------------
# boundary-condition change and Donoghue transform
# ----------------------------------------------------------------------------

def lft_coefficients(alpha, beta):
    """Blocks (A, B, C, D) of R(beta) R(alpha)^{-1} for rotations R(a) = [[cos, sin], [-sin, cos]]."""
    sa, ca = sin_cos(alpha)
    sb, cb = sin_cos(beta)
    A = cb @ ca + sb @ sa
    B = -cb @ sa + sb @ ca
    C = -sb @ ca + cb @ sa
    D = sb @ sa + cb @ ca
    return A, B, C, D


def lft_transform(m_alpha, alpha, beta, floor=1e-12) -> np.ndarray:
    """m_beta = (C + D m_alpha)(A + B m_alpha)^{-1}."""
    m_alpha = as_matrix(m_alpha)
    n = m_alpha.shape[0]
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    beta = check_hermitian(as_matrix(beta, n), name="beta")
    A, B, C, D = lft_coefficients(alpha, beta)
    den = A + B @ m_alpha
    sv = np.linalg.svd(den, compute_uv=False)
    if sv[-1] < floor * max(1.0, sv[0]):
        raise TransformSingularityError("A + B m_alpha is singular", smallest_singular_value=float(sv[-1]))
    return np.linalg.solve(den.T, (C + D @ m_alpha).T).T


def donoghue_m_halfline(m_at_i, m_at_z, side="+", floor=1e-14) -> np.ndarray:
    """+-[+-Im m(i)]^{-1/2} [m(z) - Re m(i)] [+-Im m(i)]^{-1/2}."""
    if side not in ("+", "-"):
        raise InvalidInputError("side must be '+' or '-'")
    sgn = 1.0 if side == "+" else -1.0
    mi = as_matrix(m_at_i)
    mz = as_matrix(m_at_z, mi.shape[0])
    P = inv_sqrt(sgn * imag_part(mi), floor=floor)
    re = 0.5 * (mi + mi.conj().T)
    return sgn * (P @ (mz - re) @ P)


# ----------------------------------------------------------------------------
# deficiency frames
# ----------------------------------------------------------------------------

@dataclass
class DeficiencyFrame:
    z: complex
    side: str
    nodes: np.ndarray
    columns: np.ndarray  # (nodes, n, n): column j of each slice is the sample of Psi_j
    normalizer: np.ndarray
    gram: np.ndarray
    tail_bound: float

    @property
    def gram_deviation(self):
        return opnorm(self.gram - np.eye(self.gram.shape[0]))


def trapezoid_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    w = np.zeros(len(nodes))
    dx = np.diff(nodes)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def deficiency_frame(V: GridPotential, alpha, z, grid_extent=60.0, h=1e-3, side="+",
                     tol=DEFAULT_TOL) -> DeficiencyFrame:
    """Orthonormal frame psi [+-(Im z)^{-1} Im m]^{-1/2} sampled on [x0, x0 + extent].

    For side '-' the frame lives on (-inf, x0]; its nodes are returned in
    decreasing x so that they mirror the '+' construction on the reflected
    potential.
    """
    z = complex(z)
    if z.imag == 0:
        raise DomainError("deficiency frames need Im z != 0")
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    if side == "+":
        W, a = V, alpha
        m = weyl_m(W, a, z, tol=tol).m
        sgn = 1.0
    elif side == "-":
        W, a = V.left_part_reflected(), -alpha
        m = -weyl_m(W, a, z, tol=tol).m
        sgn = -1.0
    else:
        raise InvalidInputError("side must be '+' or '-'")
    k = max(2, int(round(grid_extent / h)))
    t = np.linspace(0.0, grid_extent, k + 1)
    psi, _, _ = sample_weyl_solution(W, a, z, W.x0 + t)
    norm = inv_sqrt(sgn * imag_part(m) / z.imag, floor=1e-300)
    cols = psi @ norm
    w = trapezoid_weights(t)
    gram = np.einsum("k,kji,kjl->il", w, cols.conj(), cols)
    # tail beyond the extent: |psi| decays at least like exp(-kappa x)
    lam, _ = W.cell_eig(len(W.cells) - 1)
    kappa = float(np.min(mode_roots(lam, z).real))
    last = float(np.max(np.linalg.norm(cols[-1], axis=0) ** 2))
    tail = last / (2 * kappa) if kappa > 0 else float("inf")
    x = V.x0 + sgn * t
    return DeficiencyFrame(z, side, x, cols, norm, gram, tail)


# ----------------------------------------------------------------------------
# left half-line and spectral measure
# ----------------------------------------------------------------------------

def left_halfline_m(V: GridPotential, alpha, z, L_schedule=None, tol=DEFAULT_TOL,
                    cache: Optional[MCache] = None) -> WeylResult:
    """m_-(z) = -m^{refl}_{+,-alpha}(z) with V reflected about x0."""
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    r = weyl_m(V.left_part_reflected(), -alpha, z, L_schedule, tol, cache)
    return WeylResult(r.z, alpha, -r.m, r.truncation_length, r.cauchy_gap, r.disk_diameter,
                      r.history)


def spectral_measure_halfline(V: GridPotential, alpha, lam1, lam2, resolution=None,
                              tol=1e-10, atoms=(), threads=None, method="exact-tail"):
    """Measure of (lam1, lam2] for m_{+,alpha} by Stieltjes inversion (an IntervalMeasure)."""
    from .herglotz import interval_measure

    ev = weyl_evaluator(V, alpha, tol=tol, method=method)
    return interval_measure(ev, lam1, lam2, resolution, atoms, threads)

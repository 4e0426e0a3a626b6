"""
Exact propagation of -Y'' + (V - z) Y = 0 for piecewise-constant Hermitian V.

On a cell where V = Vc is constant, write Vc = U diag(lam) U^* and
s_j = sqrt(lam_j - z) (principal branch, Re s_j >= 0).  The propagator over a
step d is, in the eigenbasis of Vc,

    [ cosh(s d)        sinh(s d)/s ]
    [ s sinh(s d)      cosh(s d)   ]

which is exact up to roundoff.  Because U is unitary the eigenbasis is
perfectly conditioned for every z; the 2n x 2n matrix exponential is kept as
an alternative method for cross-checking.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm

from .errors import DomainError, InvalidInputError
from .linalg import as_matrix, check_hermitian, opnorm, sin_cos


# ----------------------------------------------------------------------------
# potentials
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridPotential:
    """Piecewise-constant Hermitian potential.

    ``edges`` has one more entry than ``cells``; V is frozen at ``cells[0]``
    left of ``edges[0]`` and at ``cells[-1]`` right of ``edges[-1]``.  The
    reference point ``x0`` must lie in ``[edges[0], edges[-1]]``; for a
    half-line problem it equals ``edges[0]``.
    """

    x0: float
    edges: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        cells = np.asarray(self.cells, dtype=complex)
        if cells.ndim == 1:
            cells = cells.reshape(-1, 1, 1)
        if cells.ndim != 3 or cells.shape[1] != cells.shape[2]:
            raise InvalidInputError("cells must be a stack of square matrices")
        if len(cells) < 1 or len(edges) != len(cells) + 1:
            raise InvalidInputError("need len(edges) == len(cells) + 1 >= 2")
        if np.any(np.diff(edges) <= 0):
            raise InvalidInputError("cell edges must be strictly increasing")
        if not (edges[0] <= self.x0 <= edges[-1]):
            raise InvalidInputError("x0 must lie within the cell edges")
        cells = np.array([check_hermitian(c, tol=1e-12, name="cell value") for c in cells])
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "cells", cells)

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls, V0, x0=0.0, length=1.0):
        V0 = as_matrix(V0)
        return cls(x0, np.array([x0, x0 + length]), V0[None])

    @classmethod
    def free(cls, n=1, x0=0.0, length=1.0):
        return cls.constant(np.zeros((n, n)), x0, length)

    @classmethod
    def from_function(cls, f, a, b, h, x0=None):
        """Sample a smooth potential at cell midpoints (second-order accurate)."""
        ncell = max(1, int(round((b - a) / h)))
        edges = np.linspace(a, b, ncell + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        cells = np.array([as_matrix(f(x)) for x in mids])
        return cls(a if x0 is None else x0, edges, cells)

    # basic queries --------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.cells.shape[1]

    @property
    def tail_start(self) -> float:
        """Right end of the non-constant part, never left of x0."""
        return max(self.edges[-1], self.x0) if len(self.cells) > 1 else self.x0

    def cell_index(self, x) -> np.ndarray:
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return np.clip(idx, 0, len(self.cells) - 1)

    def value_at(self, x) -> np.ndarray:
        return self.cells[self.cell_index(x)]

    @cached_property
    def _eig(self):
        return [np.linalg.eigh(c) for c in self.cells]

    def cell_eig(self, k):
        return self._eig[k]

    def pieces(self, a, b):
        """Constant pieces (left, right, cell index) covering [a, b], left to right."""
        if not b > a:
            return []
        out = []
        cuts = [a] + [e for e in self.edges if a < e < b] + [b]
        for l, r in zip(cuts[:-1], cuts[1:]):
            out.append((l, r, int(self.cell_index(0.5 * (l + r)))))
        return out

    # derived potentials ---------------------------------------------------
    def reflected(self) -> "GridPotential":
        """Mirror image about x0: x -> 2 x0 - x."""
        return GridPotential(self.x0, 2 * self.x0 - self.edges[::-1], self.cells[::-1].copy())

    def right_part(self) -> "GridPotential":
        """Restriction to [x0, inf) with the same frozen tail."""
        keep = self.edges > self.x0
        edges = np.concatenate([[self.x0], self.edges[keep]])
        if len(edges) < 2:
            return GridPotential(self.x0, np.array([self.x0, self.x0 + 1.0]), self.cells[-1:])
        first = int(self.cell_index(self.x0))
        return GridPotential(self.x0, edges, self.cells[first:first + len(edges) - 1])

    def left_part_reflected(self) -> "GridPotential":
        return self.reflected().right_part()

    def refine(self, h):
        """Split cells so that no cell is longer than h (same function)."""
        edges = [self.edges[0]]
        cells = []
        for l, r, c in zip(self.edges[:-1], self.edges[1:], self.cells):
            k = max(1, int(np.ceil((r - l) / h - 1e-9)))
            for j in range(1, k + 1):
                edges.append(l + (r - l) * j / k)
                cells.append(c)
        return GridPotential(self.x0, np.array(edges), np.array(cells))

    def cell_average(self, a, b):
        """Mean of V over [a, b] (exact for piecewise-constant data)."""
        acc = np.zeros((self.dim, self.dim), dtype=complex)
        for l, r, k in self.pieces(a, b):
            acc += (r - l) * self.cells[k]
        return acc / (b - a)


# ----------------------------------------------------------------------------
# per-cell propagation
# ----------------------------------------------------------------------------

def mode_roots(lam, z):
    """s_j = sqrt(lam_j - z) with Re s_j >= 0."""
    return np.sqrt(np.asarray(lam, dtype=complex) - complex(z))


def _sinhc(w):
    w = np.asarray(w, dtype=complex)
    small = np.abs(w) < 1e-3
    ws = np.where(small, 1.0, w)
    w2 = w * w
    return np.where(small, 1 + w2 / 6 + w2 * w2 / 120, np.sinh(ws) / ws)


def transfer_coeffs(s, d):
    """(cosh(s d), sinh(s d)/s, s sinh(s d)) for mode roots s and steps d (broadcast)."""
    w = s * d
    return np.cosh(w), d * _sinhc(w), s * s * d * _sinhc(w)


def apply_transfer(U, s, d, Y, Yp):
    """Propagate (Y, Y') by a signed step d in a constant cell given by its modes."""
    c, sc, ss = transfer_coeffs(s, d)
    Uh = U.conj().T
    a, b = Uh @ Y, Uh @ Yp
    return U @ (c[:, None] * a + sc[:, None] * b), U @ (ss[:, None] * a + c[:, None] * b)


def propagate_cell(Vc, z, h, Y, Yp, method="eig"):
    """Exact solution of Y'' = (Vc - z) Y over a step h > 0; returns (Y(h), Y'(h))."""
    if not h > 0:
        raise InvalidInputError("step must be positive", h=h)
    Vc = check_hermitian(Vc, name="Vc")
    Y = np.asarray(Y, dtype=complex)
    Yp = np.asarray(Yp, dtype=complex)
    if method == "eig":
        lam, U = np.linalg.eigh(Vc)
        return apply_transfer(U, mode_roots(lam, z), h, Y, Yp)
    if method == "expm":
        n = Vc.shape[0]
        K = np.zeros((2 * n, 2 * n), dtype=complex)
        K[:n, n:] = np.eye(n)
        K[n:, :n] = Vc - complex(z) * np.eye(n)
        out = expm(h * K) @ np.vstack([Y, Yp])
        return out[:n], out[n:]
    raise InvalidInputError(f"unknown propagation method {method!r}")


# ----------------------------------------------------------------------------
# fundamental systems
# ----------------------------------------------------------------------------

@dataclass
class FundamentalSystem:
    z: complex
    alpha: np.ndarray
    x0: float
    nodes: np.ndarray
    theta: np.ndarray
    theta_p: np.ndarray
    phi: np.ndarray
    phi_p: np.ndarray

    @property
    def dim(self):
        return self.alpha.shape[0]


def sample_forward(V: GridPotential, z, Y0, Yp0, nodes):
    """Propagate data given at V.x0 to sorted nodes >= x0 (vectorized per piece)."""
    nodes = np.asarray(nodes, dtype=float)
    k = Y0.shape[1]
    n = V.dim
    Y = np.empty((len(nodes), n, k), dtype=complex)
    Yp = np.empty_like(Y)
    if len(nodes) == 0:
        return Y, Yp
    if np.any(np.diff(nodes) < 0) or nodes[0] < V.x0:
        raise DomainError("nodes must be sorted and >= x0")
    y, yp = np.asarray(Y0, dtype=complex), np.asarray(Yp0, dtype=complex)
    pieces = V.pieces(V.x0, nodes[-1]) or [(V.x0, V.x0, int(V.cell_index(V.x0)))]
    start = 0
    for j, (l, r, ci) in enumerate(pieces):
        lam, U = V.cell_eig(ci)
        s = mode_roots(lam, z)
        last = j == len(pieces) - 1
        stop = len(nodes) if last else int(np.searchsorted(nodes, r, side="left"))
        if stop > start:
            d = nodes[start:stop] - l
            c, sc, ss = transfer_coeffs(s[None, :], d[:, None])
            Uh = U.conj().T
            a, b = Uh @ y, Uh @ yp
            Y[start:stop] = np.einsum("ij,kj,jl->kil", U, c, a) + np.einsum("ij,kj,jl->kil", U, sc, b)
            Yp[start:stop] = np.einsum("ij,kj,jl->kil", U, ss, a) + np.einsum("ij,kj,jl->kil", U, c, b)
            start = stop
        if not last:
            y, yp = apply_transfer(U, s, r - l, y, yp)
    return Y, Yp


def default_nodes(V: GridPotential, upto, h=0.05):
    n = max(1, int(np.ceil((upto - V.x0) / h)))
    nodes = np.linspace(V.x0, upto, n + 1)
    inner = V.edges[(V.edges > V.x0) & (V.edges < upto)]
    return np.unique(np.concatenate([nodes, inner]))


def fundamental_system(V: GridPotential, z, alpha, upto, nodes=None, h=0.05) -> FundamentalSystem:
    """theta_alpha, phi_alpha and derivatives on nodes in [x0, upto]."""
    if upto < V.x0:
        raise DomainError("upto must not be left of x0", upto=upto, x0=V.x0)
    n = V.dim
    alpha = check_hermitian(as_matrix(alpha, n), name="alpha")
    if nodes is None:
        nodes = default_nodes(V, upto, h)
    nodes = np.asarray(nodes, dtype=float)
    nodes = nodes[nodes <= upto]
    S, C = sin_cos(alpha)
    # columns [theta | phi]: theta(x0) = cos, theta'(x0) = sin, phi(x0) = -sin, phi'(x0) = cos
    Y, Yp = sample_forward(V, z, np.hstack([C, -S]), np.hstack([S, C]), nodes)
    return FundamentalSystem(complex(z), alpha, V.x0, nodes,
                             Y[:, :, :n], Yp[:, :, :n], Y[:, :, n:], Yp[:, :, n:])


WRONSKIAN_NAMES = ("W(theta, theta)", "W(phi, phi)", "W(phi, theta) - I", "W(theta, phi) - I",
                   "phi theta* - theta phi*", "phi' theta'* - theta' phi'*",
                   "phi' theta* - theta' phi* - I", "theta phi'* - phi theta'* - I")


@dataclass
class WronskianReport:
    nodes: np.ndarray
    residuals: np.ndarray  # (nodes, 8)
    scale: np.ndarray = None  # (nodes,) size of the products entering each identity
    names: tuple = WRONSKIAN_NAMES

    @property
    def max_residual(self):
        return float(self.residuals.max()) if self.residuals.size else 0.0

    @property
    def max_relative_residual(self):
        """Residual divided by max(1, solution size squared); roundoff-level when exact."""
        if not self.residuals.size:
            return 0.0
        return float((self.residuals / np.maximum(1.0, self.scale)[:, None]).max())


def wronskian_residuals(fs_z: FundamentalSystem, fs_zbar: FundamentalSystem) -> WronskianReport:
    """Residual norms of the eight Wronskian-type identities at every node."""
    if fs_z.nodes.shape != fs_zbar.nodes.shape or np.any(fs_z.nodes != fs_zbar.nodes):
        raise InvalidInputError("fundamental systems live on different grids")
    if opnorm(fs_z.alpha - fs_zbar.alpha) > 1e-14:
        raise InvalidInputError("fundamental systems use different alpha")
    if abs(fs_z.z.conjugate() - fs_zbar.z) > 1e-14 * max(1, abs(fs_z.z)):
        raise InvalidInputError("second system must be at the conjugate spectral parameter")
    H = lambda A: np.conj(np.swapaxes(A, 1, 2))
    th, thp, ph, php = fs_z.theta, fs_z.theta_p, fs_z.phi, fs_z.phi_p
    bt, btp, bp, bpp = fs_zbar.theta, fs_zbar.theta_p, fs_zbar.phi, fs_zbar.phi_p
    I = np.eye(fs_z.dim)
    terms = [
        H(btp) @ th - H(bt) @ thp,
        H(bpp) @ ph - H(bp) @ php,
        H(bpp) @ th - H(bp) @ thp - I,
        H(bt) @ php - H(btp) @ ph - I,
        ph @ H(bt) - th @ H(bp),
        php @ H(btp) - thp @ H(bpp),
        php @ H(bt) - thp @ H(bp) - I,
        th @ H(bpp) - ph @ H(btp) - I,
    ]
    res = np.stack([np.linalg.norm(t, ord=2, axis=(1, 2)) for t in terms], axis=1)
    size = lambda *Ys: sum(np.linalg.norm(Y, ord=2, axis=(1, 2)) for Y in Ys)
    scale = size(th, thp, ph, php) * size(bt, btp, bp, bpp)
    return WronskianReport(fs_z.nodes.copy(), res, scale)


class SampledFunction(NamedTuple):
    """A C^n (or C^{n x k}) valued function on a grid with its first two derivatives."""

    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray


def from_fundamental(fs: FundamentalSystem, V: GridPotential, coeff_theta, coeff_phi) -> SampledFunction:
    """theta c1 + phi c2 as a SampledFunction; the second derivative comes from the equation."""
    u = fs.theta @ coeff_theta + fs.phi @ coeff_phi
    du = fs.theta_p @ coeff_theta + fs.phi_p @ coeff_phi
    Vx = V.value_at(fs.nodes)
    d2u = (Vx - fs.z * np.eye(V.dim)) @ u
    return SampledFunction(fs.nodes, u, du, d2u)


def lagrange_residual(V: GridPotential, f: SampledFunction, g: SampledFunction, x1, x2) -> float:
    """|int_{x1}^{x2} [(tau f, g) - (f, tau g)] dx - [W_*(f, g)]_{x1}^{x2}| by trapezoid quadrature."""
    x = f.x
    if g.x.shape != x.shape or np.any(g.x != x):
        raise InvalidInputError("f and g must share the grid")
    sel = (x >= x1) & (x <= x2)
    xs = x[sel]
    if len(xs) < 2:
        raise InvalidInputError("need at least two nodes in [x1, x2]")
    Vx = V.value_at(xs)
    fu, fdu, fd2 = f.u[sel], f.du[sel], f.d2u[sel]
    gu, gdu, gd2 = g.u[sel], g.du[sel], g.d2u[sel]
    H = lambda A: np.conj(np.swapaxes(A, -1, -2))
    tau_f = -fd2 + Vx @ fu
    tau_g = -gd2 + Vx @ gu
    integrand = H(tau_f) @ gu - H(fu) @ tau_g
    lhs = trapezoid(integrand, xs, axis=0)
    w = H(fu) @ gdu - H(fdu) @ gu
    return float(np.abs(np.atleast_2d(lhs - (w[-1] - w[0]))).max())

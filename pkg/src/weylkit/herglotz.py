"""
Matrix-valued Nevanlinna-Herglotz functions.

A Herglotz function is stored either through its representation triple
(C, D, measure) or as an opaque callable.  In both cases evaluation goes
through :class:`HerglotzEvaluator`, which applies the reflection
``M(conj(z)) = M(z)^*`` so that callers never evaluate in the lower half-plane.

Measures are restricted to atoms plus a piecewise-linear absolutely
continuous density sampled on a grid.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import subspace_angles

from .errors import ConvergenceError, DomainError, InvalidInputError
from .linalg import as_matrix, check_hermitian, imag_part, min_eig, opnorm, psd_clamp

EPS0 = 1e-2
NODES_PER_UNIT = 2048


# ----------------------------------------------------------------------------
# measures and representations
# ----------------------------------------------------------------------------

def _check_psd(W, what, tol=1e-10):
    W = check_hermitian(W, tol=1e-10, name=what)
    w = np.linalg.eigvalsh(W)
    if w.size and w[0] < -tol * max(1.0, abs(w[-1])):
        raise InvalidInputError(f"{what} is not PSD", min_eigenvalue=float(w[0]))
    return W


@dataclass(frozen=True)
class OperatorMeasure:
    """Atoms plus an optional piecewise-linear density, all with PSD n x n weights."""

    dim: int
    atoms: tuple = ()
    ac_grid: Optional[np.ndarray] = None
    ac_density: Optional[np.ndarray] = None

    def __post_init__(self):
        atoms = []
        for lam, W in self.atoms:
            W = _check_psd(as_matrix(W, self.dim), "atom weight")
            atoms.append((float(lam), W))
        locs = [a[0] for a in atoms]
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise InvalidInputError("atom locations must be strictly increasing")
        object.__setattr__(self, "atoms", tuple(atoms))
        if (self.ac_grid is None) != (self.ac_density is None):
            raise InvalidInputError("ac grid and densities must be given together")
        if self.ac_grid is not None:
            g = np.asarray(self.ac_grid, dtype=float)
            d = np.asarray(self.ac_density, dtype=complex).reshape(len(g), self.dim, self.dim)
            if len(g) < 2 or np.any(np.diff(g) <= 0):
                raise InvalidInputError("ac grid must be strictly increasing with >= 2 nodes")
            for k in range(len(g)):
                _check_psd(d[k], "ac density")
            object.__setattr__(self, "ac_grid", g)
            object.__setattr__(self, "ac_density", d)

    @classmethod
    def empty(cls, dim):
        return cls(dim=dim)

    def mass(self, lam1, lam2) -> np.ndarray:
        """Measure of the half-open interval (lam1, lam2]."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for lam, W in self.atoms:
            if lam1 < lam <= lam2:
                out += W
        if self.ac_grid is not None:
            g = self.ac_grid
            lo, hi = max(lam1, g[0]), min(lam2, g[-1])
            if hi > lo:
                # exact integral of the piecewise-linear interpolant
                inner = g[(g > lo) & (g < hi)]
                pts = np.concatenate([[lo], inner, [hi]])
                vals = self._density_at(pts)
                out += np.einsum("k,kij->ij", np.diff(pts), 0.5 * (vals[1:] + vals[:-1]))
        return out

    def _density_at(self, lam):
        g, d = self.ac_grid, self.ac_density
        flat = d.reshape(len(g), -1)
        re = np.array([np.interp(lam, g, flat[:, j].real) for j in range(flat.shape[1])]).T
        im = np.array([np.interp(lam, g, flat[:, j].imag) for j in range(flat.shape[1])]).T
        return (re + 1j * im).reshape(len(np.atleast_1d(lam)), self.dim, self.dim)

    def weighted_total(self) -> np.ndarray:
        """Integral of (lam^2 + 1)^{-1} d(measure), trapezoid on the ac grid."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for lam, W in self.atoms:
            out += W / (lam * lam + 1.0)
        if self.ac_grid is not None:
            w = 1.0 / (self.ac_grid ** 2 + 1.0)
            out += trapezoid(self.ac_density * w[:, None, None], self.ac_grid, axis=0)
        return out


@dataclass(frozen=True)
class HerglotzRep:
    """Triple (C, D, measure) of the Nevanlinna representation."""

    C: np.ndarray
    D: np.ndarray
    measure: OperatorMeasure

    def __post_init__(self):
        n = self.measure.dim
        object.__setattr__(self, "C", check_hermitian(as_matrix(self.C, n), name="C"))
        object.__setattr__(self, "D", _check_psd(as_matrix(self.D, n), "D"))

    @property
    def dim(self):
        return self.measure.dim


def _eval_rep_raw(rep: HerglotzRep, z: complex) -> np.ndarray:
    # the formula itself is valid on both half-planes
    M = rep.C + rep.D * z
    for lam, W in rep.measure.atoms:
        M = M + W * (1.0 / (lam - z) - lam / (lam * lam + 1.0))
    meas = rep.measure
    if meas.ac_grid is not None:
        g = meas.ac_grid
        kern = 1.0 / (g - z) - g / (g * g + 1.0)
        M = M + trapezoid(meas.ac_density * kern[:, None, None], g, axis=0)
    return M


def eval_rep(rep: HerglotzRep, z) -> np.ndarray:
    """C + D z + integral of [1/(lam - z) - lam/(lam^2 + 1)] d(measure)."""
    z = complex(z)
    if z.imag == 0:
        raise DomainError("eval_rep needs Im z != 0", z=[z.real, z.imag])
    if z.imag < 0:
        return _eval_rep_raw(rep, z.conjugate()).conj().T
    return _eval_rep_raw(rep, z)


def _thread_count(threads):
    if threads is None:
        threads = int(os.environ.get("WEYLKIT_THREADS", "1") or 1)
    return max(1, int(threads))


def ordered_map(func, items, threads=None):
    """map() with an optional thread pool; result order always matches input."""
    items = list(items)
    threads = _thread_count(threads)
    if threads == 1 or len(items) < 2:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


class HerglotzEvaluator:
    """Callable wrapper around a representation or an analytic function.

    ``func`` is only ever called with Im z >= 0 (Im z > 0 unless ``allow_real``);
    lower half-plane values come from reflection.
    """

    def __init__(self, func: Optional[Callable] = None, rep: Optional[HerglotzRep] = None,
                 dim: Optional[int] = None, allow_real: bool = False, name: str = ""):
        if (func is None) == (rep is None):
            raise InvalidInputError("give exactly one of func or rep")
        self.rep = rep
        self._func = func
        self.allow_real = allow_real
        self.name = name
        self.dim = rep.dim if rep is not None else dim

    @classmethod
    def from_rep(cls, rep: HerglotzRep):
        return cls(rep=rep)

    @property
    def rep_backed(self):
        return self.rep is not None

    def raw(self, z) -> np.ndarray:
        """Evaluate the underlying formula without reflection."""
        z = complex(z)
        if self.rep is not None:
            return _eval_rep_raw(self.rep, z)
        return as_matrix(self._func(z))

    def __call__(self, z) -> np.ndarray:
        z = complex(z)
        if z.imag == 0 and not self.allow_real:
            raise DomainError("Herglotz evaluator called on the real axis", z=[z.real, 0.0])
        if z.imag < 0:
            return self.raw(z.conjugate()).conj().T
        return self.raw(z)

    def many(self, zs, threads=None):
        return ordered_map(self, zs, threads)


def _as_evaluator(ev):
    if isinstance(ev, HerglotzEvaluator):
        return ev
    if isinstance(ev, HerglotzRep):
        return HerglotzEvaluator(rep=ev)
    if callable(ev):
        return HerglotzEvaluator(func=ev)
    raise InvalidInputError("expected a HerglotzEvaluator, HerglotzRep or callable")


# ----------------------------------------------------------------------------
# Stieltjes inversion
# ----------------------------------------------------------------------------

def richardson(xs, values):
    """Polynomial extrapolation to 0 through all points; returns (value, estimates).

    ``estimates[k]`` uses levels 0..k, so the last two differ by the error estimate.
    """
    xs = np.asarray(xs, dtype=float)
    vals = [np.asarray(v, dtype=complex) for v in values]
    estimates = [vals[0]]
    # P[i] holds the interpolant through levels i..k evaluated at 0
    P = list(vals)
    for k in range(1, len(xs)):
        P_new = list(P)
        # recompute the column for the window ending at k
        for i in range(k - 1, -1, -1):
            # P_new[i] = extrapolant through levels i..k
            P_new[i] = (P_new[i + 1] * xs[i] - P[i] * xs[k]) / (xs[i] - xs[k])
        P = P_new
        estimates.append(P[0])
    return estimates[-1], estimates


@dataclass
class StieltjesResult:
    value: np.ndarray
    error: float
    eps: np.ndarray
    levels: list = field(repr=False)
    delta: float = 0.0
    nodes: int = 0


def default_eps_schedule(h, levels_min=3, levels_max=6):
    eps = []
    e = EPS0
    while len(eps) < levels_max and (e >= 2.5 * h or len(eps) < levels_min):
        eps.append(e)
        e /= 2
    return np.array(eps)


def _check_growth(diffs, scale, what):
    if len(diffs) >= 3 and diffs[-1] > diffs[-2] > diffs[-3] and diffs[-1] > 1e-12 * max(scale, 1.0):
        raise ConvergenceError(f"{what}: extrapolation differences grow",
                               differences=[float(d) for d in diffs])


def stieltjes_invert(ev, lam1, lam2, eps_schedule=None, delta_schedule=None,
                     quadrature_nodes=None, threads=None, psd_tol=1e-6) -> StieltjesResult:
    """Measure of (lam1, lam2] from boundary values of Im M.

    Computes (1/pi) * integral over [lam1 + delta, lam2 + delta] of Im M(lam + i eps)
    by the composite trapezoid rule for each eps in the schedule and
    extrapolates to eps = 0.  delta is the last entry of ``delta_schedule``
    (default: the quadrature spacing).
    """
    ev = _as_evaluator(ev)
    if not lam2 > lam1:
        raise InvalidInputError("need lam1 < lam2", lam1=lam1, lam2=lam2)
    if quadrature_nodes is None:
        quadrature_nodes = max(64, int(math.ceil(NODES_PER_UNIT * (lam2 - lam1))))
    N = int(quadrature_nodes)
    h = (lam2 - lam1) / N
    delta = float(delta_schedule[-1]) if delta_schedule is not None else h
    eps = np.asarray(eps_schedule, dtype=float) if eps_schedule is not None \
        else default_eps_schedule(h)
    if eps.size < 1 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise InvalidInputError("eps schedule must be positive and decreasing")
    lam = lam1 + delta + h * np.arange(N + 1)
    wts = np.full(N + 1, h)
    wts[0] = wts[-1] = h / 2
    levels = []
    for e in eps:
        vals = ev.many([complex(l, e) for l in lam], threads=threads)
        im = np.array([imag_part(v) for v in vals])
        # fixed-order summation keeps the result deterministic
        levels.append(np.einsum("k,kij->ij", wts, im) / math.pi)
    value, est = richardson(eps, levels)
    error = opnorm(est[-1] - est[-2]) if len(est) > 1 else float("inf")
    diffs = [opnorm(b - a) for a, b in zip(est, est[1:])]
    _check_growth(diffs, opnorm(value), "stieltjes_invert")
    value = check_hermitian(value, tol=1e-8)
    value = psd_clamp(value, psd_tol=max(psd_tol, 10 * error / max(opnorm(value), 1e-300)))
    return StieltjesResult(value=value, error=error, eps=eps, levels=levels,
                           delta=delta, nodes=N)


@dataclass
class AtomResult:
    weight: np.ndarray
    error: float
    eps: np.ndarray


def atom_at(ev, lam, eps_schedule=None, psd_tol=1e-6) -> AtomResult:
    """Point mass at lam: eps * Im M(lam + i eps) extrapolated to eps = 0."""
    ev = _as_evaluator(ev)
    eps = np.asarray(eps_schedule, dtype=float) if eps_schedule is not None \
        else EPS0 * 2.0 ** -np.arange(6)
    vals = [e * imag_part(ev(complex(lam, e))) for e in eps]
    value, est = richardson(eps, vals)
    error = opnorm(est[-1] - est[-2]) if len(est) > 1 else float("inf")
    _check_growth([opnorm(b - a) for a, b in zip(est, est[1:])], opnorm(value), "atom_at")
    value = check_hermitian(value, tol=1e-6)
    scale = max(opnorm(value), 1e-300)
    value = psd_clamp(value, psd_tol=max(psd_tol, 10 * error / scale))
    return AtomResult(weight=value, error=error, eps=eps)


@dataclass
class IntervalMeasure:
    """Mass of (lam1, lam2] with its error estimate, plus optional point masses inside."""

    lam1: float
    lam2: float
    mass: np.ndarray
    error: float
    atoms: tuple = ()
    inversion: Optional[StieltjesResult] = field(default=None, repr=False)

    def to_measure(self) -> OperatorMeasure:
        """OperatorMeasure with the resolved point masses and the remainder lumped at lam2."""
        dim = self.mass.shape[0]
        pts = [(lam, W) for lam, W in self.atoms]
        rest = self.mass - sum((W for _, W in pts), np.zeros_like(self.mass))
        rest = psd_clamp(check_hermitian(rest, tol=1e-8), psd_tol=max(1e-6, 10 * self.error))
        if any(lam == self.lam2 for lam, _ in pts):
            pts = [(lam, W + rest if lam == self.lam2 else W) for lam, W in pts]
        else:
            pts.append((self.lam2, rest))
        return OperatorMeasure(dim, atoms=tuple(sorted(pts, key=lambda a: a[0])))


def interval_measure(ev, lam1, lam2, resolution=None, atoms=(), threads=None) -> IntervalMeasure:
    """stieltjes_invert on (lam1, lam2] plus atom_at at each listed point."""
    ev = _as_evaluator(ev)
    nodes = None if resolution is None else max(8, int(math.ceil((lam2 - lam1) / resolution)))
    res = stieltjes_invert(ev, lam1, lam2, quadrature_nodes=nodes, threads=threads)
    pts = tuple((float(l), atom_at(ev, l).weight) for l in sorted(atoms))
    return IntervalMeasure(float(lam1), float(lam2), res.value, res.error, pts, res)


# ----------------------------------------------------------------------------
# structural checks
# ----------------------------------------------------------------------------

@dataclass
class HerglotzRow:
    z: complex
    min_im_eig: float
    reflection_residual: float
    ok: bool


@dataclass
class HerglotzReport:
    rows: list

    @property
    def passed(self):
        return all(r.ok for r in self.rows)

    @property
    def worst_min_eig(self):
        return min(r.min_im_eig for r in self.rows)


def check_herglotz(ev, z_grid, im_tol=1e-10, refl_tol=1e-12) -> HerglotzReport:
    """Positivity of Im M and the reflection residual on a grid in the upper half-plane."""
    ev = _as_evaluator(ev)
    rows = []
    for z in z_grid:
        z = complex(z)
        if z.imag <= 0:
            raise DomainError("check_herglotz grid must lie in the upper half-plane")
        M = ev(z)
        me = min_eig(imag_part(M))
        # opaque functions are only reflected, so their residual is zero by construction
        below = ev.raw(z.conjugate()) if ev.rep_backed else ev(z.conjugate())
        refl = opnorm(below - M.conj().T)
        ok = me >= -im_tol and (refl <= refl_tol or not ev.rep_backed)
        rows.append(HerglotzRow(z, me, refl, bool(ok)))
    return HerglotzReport(rows)


def _kernel(Im, rank_tol):
    w, U = np.linalg.eigh(Im)
    return U[:, w < rank_tol]


@dataclass
class KernelReport:
    dims: list
    max_angle: float
    constant: bool
    bases: list = field(repr=False)


def kernel_constancy(ev, z_list, rank_tol=1e-10, angle_tol=1e-6) -> KernelReport:
    ev = _as_evaluator(ev)
    z_list = [complex(z) for z in z_list]
    if len(z_list) < 2 or any(z.imag <= 0 for z in z_list):
        raise InvalidInputError("need at least two points in the upper half-plane")
    bases = [_kernel(imag_part(ev(z)), rank_tol) for z in z_list]
    dims = [b.shape[1] for b in bases]
    max_angle = 0.0
    if len(set(dims)) > 1:
        max_angle = math.pi / 2
    elif dims[0] > 0:
        for b in bases[1:]:
            max_angle = max(max_angle, float(np.max(subspace_angles(bases[0], b))))
    return KernelReport(dims, max_angle, bool(len(set(dims)) == 1 and max_angle < angle_tol),
                        bases)


@dataclass
class TransferReport:
    z0: complex
    delta0: float
    lower_bounds: list
    holds: bool


def invertibility_transfer(ev, z0, z_list) -> TransferReport:
    """Positivity of Im M at z0 carried to every listed point of the upper half-plane."""
    ev = _as_evaluator(ev)
    z0 = complex(z0)
    if z0.imag <= 0:
        raise InvalidInputError("z0 must lie in the upper half-plane")
    d0 = min_eig(imag_part(ev(z0)))
    if d0 <= 0:
        raise InvalidInputError("Im M(z0) is not positive definite", min_eigenvalue=d0)
    lows = []
    for z in z_list:
        z = complex(z)
        if z.imag <= 0:
            raise InvalidInputError("z_list must lie in the upper half-plane")
        lows.append(min_eig(imag_part(ev(z))))
    return TransferReport(z0, d0, lows, bool(all(l > 0 for l in lows)))

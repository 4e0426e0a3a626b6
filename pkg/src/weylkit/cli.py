"""
weylkit command line.

    weylkit m-half     --config run.json --out results/
    weylkit m-full     ...
    weylkit m-donoghue ...
    weylkit measure    ...
    weylkit oracle     ...
    weylkit check      ...

Exit codes: 0 ok, 1 configuration error, 2 convergence/resolution failure,
3 invariant failure.  Errors are reported as one JSON object on stderr.
The config schema is documented in README.md.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as wio
from .errors import (ConvergenceError, DomainError, InvalidInputError, ResolutionError,
                     WeylkitError)
from .herglotz import HerglotzEvaluator, interval_measure, ordered_map
from .linalg import imag_part, opnorm, random_hermitian

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_INVARIANT = 0, 1, 2, 3


class ConfigError(InvalidInputError):
    pass


# ----------------------------------------------------------------------------
# config
# ----------------------------------------------------------------------------

def _get(cfg, key, default=None, kind=None):
    v = cfg.get(key, default)
    if kind is not None and v is not None:
        try:
            v = kind(v)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {key!r}", value=repr(v))
    return v


def build_potential(spec, seed=None, base_dir="."):
    """GridPotential from a builtin name or a potential file."""
    from .ode import GridPotential

    if spec is None:
        spec = {"builtin": "free"}
    if isinstance(spec, str):
        spec = {"builtin": spec}
    if "file" in spec:
        path = Path(base_dir) / spec["file"]
        return wio.potential_from_json(wio.read_json(path))
    if "potential" in spec:
        return wio.potential_from_json(spec["potential"])
    name = spec.get("builtin", "free")
    n = _get(spec, "n", 1, int)
    x0 = _get(spec, "x0", 0.0, float)
    if n < 1:
        raise ConfigError("n must be >= 1", n=n)
    if name == "free":
        return GridPotential.free(n, x0)
    if name == "constant":
        V0 = wio.matrix_from_json(spec["V0"]) if "V0" in spec else np.diag(np.arange(1.0, n + 1))
        return GridPotential.constant(V0, x0)
    if name == "barrier":
        height = _get(spec, "height", 2.0, float)
        width = _get(spec, "width", 1.0, float)
        if width <= 0:
            raise ConfigError("barrier width must be positive")
        H = height * np.eye(n)
        Z = np.zeros((n, n))
        # barrier on (x0 - width, x0 + width), zero tails on both sides
        return GridPotential(x0, np.array([x0 - width - 1, x0 - width, x0 + width, x0 + width + 1]),
                             np.array([Z, H, Z]))
    if name == "random":
        cells = _get(spec, "cells", 4, int)
        width = _get(spec, "width", 4.0, float)
        scale = _get(spec, "scale", 1.0, float)
        s = _get(spec, "seed", 0, int) if seed is None else int(seed)
        if cells < 1 or width <= 0:
            raise ConfigError("random potential needs cells >= 1 and width > 0")
        rng = np.random.default_rng(s)
        edges = np.linspace(x0 - width / 2, x0 + width / 2, cells + 1)
        return GridPotential(x0, edges, np.array([random_hermitian(n, rng, scale) for _ in range(cells)]))
    raise ConfigError(f"unknown builtin problem {name!r}",
                      known=["free", "constant", "barrier", "random"])


def build_alpha(spec, n):
    if spec is None:
        return np.zeros((n, n))
    if isinstance(spec, (int, float)):
        return float(spec) * np.eye(n)
    A = wio.matrix_from_json(spec)
    if A.shape != (n, n):
        raise ConfigError("alpha has the wrong shape", shape=list(A.shape), n=n)
    return A


def build_z_grid(spec):
    """A list [[re, im], ...] / [z, ...] or {"rect": {"re": [a, b, n], "im": [a, b, n]}}."""
    if spec is None:
        raise ConfigError("missing z grid")
    if isinstance(spec, dict):
        if "list" in spec:
            spec = spec["list"]
        elif "rect" in spec:
            r = spec["rect"]
            try:
                re = np.linspace(*[float(v) for v in r["re"][:2]], int(r["re"][2]))
                im = np.linspace(*[float(v) for v in r["im"][:2]], int(r["im"][2]))
            except (KeyError, IndexError, TypeError, ValueError):
                raise ConfigError("rect grid needs re/im as [start, stop, count]")
            spec = [complex(a, b) for b in im for a in re]
        else:
            raise ConfigError("z grid needs 'list' or 'rect'")
    try:
        zs = [wio.complex_from_json(v) for v in spec]
    except (TypeError, ValueError, WeylkitError):
        raise ConfigError("bad z grid entry")
    if not zs:
        raise ConfigError("z grid is empty")
    return zs


def load_config(path):
    if path is None:
        return {}, "."
    cfg = wio.read_json(path)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    tol = cfg.get("tol")
    if tol is not None and not (isinstance(tol, (int, float)) and tol > 0):
        raise ConfigError("tolerances must be positive", tol=tol)
    return cfg, str(Path(path).parent)


class Run:
    def __init__(self, args):
        self.cfg, self.base = load_config(args.config)
        self.out = Path(args.out or self.cfg.get("out") or ".")
        th = args.threads if args.threads is not None else os.environ.get("WEYLKIT_THREADS")
        self.threads = max(1, int(th)) if th else 1
        self.seed = args.seed if args.seed is not None else self.cfg.get("seed")
        self._V = None

    @property
    def V(self):
        if self._V is None:
            self._V = build_potential(self.cfg.get("problem"), self.seed, self.base)
        return self._V

    @property
    def alpha(self):
        return build_alpha(self.cfg.get("alpha"), self.V.dim)

    @property
    def tol(self):
        return float(self.cfg.get("tol", 1e-10))

    def zs(self, required=True):
        spec = self.cfg.get("z")
        if spec is None and not required:
            return []
        return build_z_grid(spec)

    def problem(self):
        from .fullline import FullLineProblem

        return FullLineProblem(self.V, self.alpha, float(self.cfg.get("X", 60.0)), self.tol)

    def map(self, f, items):
        return ordered_map(f, items, self.threads)


def _entry_rows(z, M, extra=()):
    rows = []
    for r in range(M.shape[0]):
        for c in range(M.shape[1]):
            rows.append([z.real, z.imag, r, c, M[r, c].real, M[r, c].imag, *extra])
    return rows


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cmd_m_half(run: Run):
    from .halfline import left_halfline_m, MCache, weyl_m

    side = run.cfg.get("side", "+")
    if side not in ("+", "-"):
        raise ConfigError("side must be '+' or '-'")
    V, alpha, zs, tol = run.V, run.alpha, run.zs(), run.tol
    sched = run.cfg.get("L_schedule")
    cache = MCache()
    f = weyl_m if side == "+" else left_halfline_m
    results = run.map(lambda z: f(V, alpha, z, sched, tol, cache), zs)
    rows = []
    for r in results:
        rows += _entry_rows(r.z, r.m, (r.cauchy_gap, r.disk_diameter))
    header = ["re_z", "im_z", "block_row", "block_col", "re_m", "im_m", "cauchy_gap", "disk_diameter"]
    wio.write_csv(run.out / "m_half.csv", header, rows)
    wio.write_json(run.out / "m_half.json", {"side": side,
                                             "results": [wio.weyl_result_to_json(r) for r in results]})
    return EXIT_OK


def cmd_m_full(run: Run):
    from .fullline import block_M

    p, zs = run.problem(), run.zs()
    blocks = run.map(lambda z: block_M(p, z), zs)
    rows = []
    for z, B in zip(zs, blocks):
        rows += _entry_rows(z, B.full())
    wio.write_csv(run.out / "m_full.csv", ["re_z", "im_z", "block_row", "block_col", "re_M", "im_M"], rows)
    wio.write_json(run.out / "m_full.json", {"z": [wio.complex_to_json(z) for z in zs],
                                             "M": [wio.block_to_json(B) for B in blocks]})
    return EXIT_OK


def _abstract_operator(run: Run):
    spec = run.cfg.get("abstract")
    if spec is None:
        raise ConfigError("abstract mode needs an 'abstract' entry ({A, N} or {file})")
    if "file" in spec:
        spec = wio.read_json(Path(run.base) / spec["file"])
    return wio.subspaced_from_json(spec)


def _donoghue_function(run: Run):
    """(callable z -> matrix, description) for the configured Donoghue mode."""
    mode = run.cfg.get("mode", "full")
    if mode == "abstract":
        from .donoghue import donoghue_M

        S = _abstract_operator(run)
        return (lambda z: donoghue_M(S, z)), {"mode": mode, "k": S.k}
    if mode in ("half+", "half-"):
        from .halfline import donoghue_m_halfline, left_halfline_m, weyl_m

        V, alpha, tol = run.V, run.alpha, run.tol
        side = mode[-1]
        m = (lambda z: weyl_m(V, alpha, z, tol=tol).m) if side == "+" else \
            (lambda z: left_halfline_m(V, alpha, z, tol=tol).m)
        mi = m(1j)
        return (lambda z: donoghue_m_halfline(mi, m(z), side)), {"mode": mode}
    if mode == "full":
        from .fullline import donoghue_block_M, donoghue_parts

        p = run.problem()
        donoghue_parts(p)  # fills the m(i) cache once before the parallel map
        return (lambda z: donoghue_block_M(p, z).full()), {"mode": mode}
    raise ConfigError(f"unknown Donoghue mode {mode!r}", known=["half+", "half-", "full", "abstract"])


def cmd_m_donoghue(run: Run):
    f, meta = _donoghue_function(run)
    zs = run.zs()
    if not any(z == 1j for z in zs):
        zs = [1j] + zs
    mats = run.map(f, zs)
    rows = []
    forced = None
    for z, M in zip(zs, mats):
        res = ""
        if z == 1j:
            forced = opnorm(M - 1j * np.eye(M.shape[0]))
            res = forced
        rows += _entry_rows(z, M, (res,))
    header = ["re_z", "im_z", "block_row", "block_col", "re_m", "im_m", "forced_residual"]
    wio.write_csv(run.out / "m_donoghue.csv", header, rows)
    wio.write_json(run.out / "m_donoghue.json", dict(meta, z=[wio.complex_to_json(z) for z in zs],
                                                     M=[wio.matrix_to_json(M) for M in mats],
                                                     forced_residual=forced))
    return EXIT_OK


_FUNCTIONS = {
    "neg_inverse": (lambda z: np.array([[-1.0 / z]]), "-1/z"),
    "const_i": (lambda z: np.array([[1j]]), "i"),
    "free_sqrt": (lambda z: np.array([[1j * np.sqrt(complex(z))]]), "i sqrt(z)"),
}


def _measure_evaluator(run: Run):
    kind = run.cfg.get("kind", "half")
    if kind == "function":
        name = run.cfg.get("function", "neg_inverse")
        if name not in _FUNCTIONS:
            raise ConfigError(f"unknown function {name!r}", known=sorted(_FUNCTIONS))
        return HerglotzEvaluator(func=_FUNCTIONS[name][0], dim=1, name=name), kind
    if kind == "half":
        from .halfline import weyl_evaluator

        return weyl_evaluator(run.V, run.alpha, run.tol, method=run.cfg.get("method", "exact-tail")), kind
    if kind in ("full", "donoghue-full"):
        from .fullline import block_evaluator

        p = run.problem().with_method(run.cfg.get("method", "exact-tail"))
        return block_evaluator(p, donoghue=kind == "donoghue-full"), kind
    if kind == "abstract":
        return None, kind
    raise ConfigError(f"unknown measure kind {kind!r}",
                      known=["half", "full", "donoghue-full", "abstract", "function"])


def cmd_measure(run: Run):
    from .herglotz import OperatorMeasure

    ev, kind = _measure_evaluator(run)
    if kind == "abstract":
        from .donoghue import donoghue_measure

        dm = donoghue_measure(_abstract_operator(run))
        mu = dm.measure
        rows = []
        for lam, W in mu.atoms:
            rows += _entry_rows(complex(lam, 0), W, (0.0,))
        rows = [[r[0], r[0], *r[2:]] for r in rows]
        header = ["lam1", "lam2", "block_row", "block_col", "re_mass", "im_mass", "error"]
        wio.write_csv(run.out / "measure.csv", header, rows)
        wio.write_json(run.out / "measure.json", {"measure": wio.measure_to_json(mu),
                                                  "normalization_residual": dm.normalization_residual})
        return EXIT_OK
    intervals = run.cfg.get("intervals")
    if not intervals:
        raise ConfigError("measure needs a nonempty 'intervals' list of [lam1, lam2]")
    try:
        intervals = [(float(a), float(b)) for a, b in intervals]
    except (TypeError, ValueError):
        raise ConfigError("intervals must be [lam1, lam2] pairs")
    if any(b <= a for a, b in intervals):
        raise ConfigError("each interval needs lam1 < lam2")
    res = run.cfg.get("resolution")
    atoms = run.cfg.get("atoms", [])
    rows, atoms_all = [], []
    for a, b in intervals:
        inside = [x for x in atoms if a < x <= b]
        im = interval_measure(ev, a, b, res, inside, run.threads)
        for r in range(im.mass.shape[0]):
            for c in range(im.mass.shape[1]):
                rows.append([a, b, r, c, im.mass[r, c].real, im.mass[r, c].imag, im.error])
        atoms_all += list(im.to_measure().atoms)
    atoms_all.sort(key=lambda t: t[0])
    mu = OperatorMeasure(ev.dim, atoms=tuple(atoms_all))
    header = ["lam1", "lam2", "block_row", "block_col", "re_mass", "im_mass", "error"]
    wio.write_csv(run.out / "measure.csv", header, rows)
    wio.write_json(run.out / "measure.json", {"kind": kind, "measure": wio.measure_to_json(mu),
                                              "note": "interval masses are lumped at lam2"})
    return EXIT_OK


def cmd_oracle(run: Run):
    from .fullline import donoghue_block_oracle, minimal_operator_frames
    from .oracle import discretize_line, ml_poles_vs_eigs

    what = run.cfg.get("oracle", "donoghue-block")
    h = float(run.cfg.get("h", 0.01))
    if what == "poles":
        L = float(run.cfg.get("L", 3.0))
        rep = ml_poles_vs_eigs(run.V.right_part(), run.alpha, L, h,
                               lam_max=float(run.cfg.get("lam_max", 6.0)),
                               extrapolate=bool(run.cfg.get("extrapolate", False)))
        rows = [[a, b, d] for a, b, d in zip(rep.fd_eigs, rep.poles, rep.diffs)]
        wio.write_csv(run.out / "oracle_poles.csv", ["fd_eig", "pole", "diff"], rows)
        wio.write_json(run.out / "oracle_poles.json", {"h": h, "L": L, "tolerance": rep.tolerance,
                                                       "passed": rep.passed})
        return EXIT_OK if rep.passed else EXIT_INVARIANT
    if what != "donoghue-block":
        raise ConfigError(f"unknown oracle {what!r}", known=["donoghue-block", "poles"])
    p = run.problem()
    zs = run.zs()
    op = discretize_line(p.V, p.X, h)
    frames = minimal_operator_frames(p, 1j, h, p.X)
    mats = [donoghue_block_oracle(p, z, h, p.X, frames, op).full() for z in zs]
    rows = []
    for z, M in zip(zs, mats):
        rows += _entry_rows(z, M)
    wio.write_csv(run.out / "oracle.csv", ["re_z", "im_z", "block_row", "block_col", "re_m", "im_m"], rows)
    wio.write_json(run.out / "oracle.json", {"h": h, "X": p.X, "gram_deviation": frames.raw_deviation,
                                             "z": [wio.complex_to_json(z) for z in zs],
                                             "M": [wio.matrix_to_json(M) for M in mats]})
    return EXIT_OK


# ----------------------------------------------------------------------------
# check
# ----------------------------------------------------------------------------

def _suite_cases(run: Run):
    """Yield (suite, case, residual, tolerance) for every invariant suite."""
    from .donoghue import donoghue_measure, lower_bound_check, random_subspaced
    from .fullline import block_M, donoghue_block_M, t_e_blocks
    from .halfline import donoghue_m_halfline, left_halfline_m, lft_transform, weyl_m
    from .ode import fundamental_system, wronskian_residuals

    V, alpha, tol = run.V, run.alpha, run.tol
    n = V.dim
    rng = np.random.default_rng(0 if run.seed is None else int(run.seed))
    x0 = V.x0
    nodes = np.linspace(x0, x0 + 5.0, 41)
    for z in (1j, 2 + 1j):
        fz = fundamental_system(V, z, alpha, x0 + 5.0, nodes)
        fb = fundamental_system(V, np.conj(z), alpha, x0 + 5.0, nodes)
        yield "wronskian", f"z={z} (relative)", wronskian_residuals(fz, fb).max_relative_residual, 1e-13
    grid = [complex(a, b) for b in (0.5, 1.0, 2.0) for a in (-1.0, 0.0, 1.0)]
    worst = min(float(np.linalg.eigvalsh(imag_part(weyl_m(V, alpha, z, tol=tol).m))[0]) for z in grid)
    yield "herglotz", "min eig Im m_+ on 3x3 grid", max(0.0, -worst), 0.0
    mp_i = weyl_m(V, alpha, 1j, tol=tol).m
    mm_i = left_halfline_m(V, alpha, 1j, tol=tol).m
    I = np.eye(n)
    yield "forced", "m_+^Do(i)", opnorm(donoghue_m_halfline(mp_i, mp_i, "+") - 1j * I), 1e-8
    yield "forced", "m_-^Do(i)", opnorm(donoghue_m_halfline(mm_i, mm_i, "-") - 1j * I), 1e-8
    p = run.problem()
    yield "forced", "M^Do(i)", opnorm(donoghue_block_M(p, 1j).full() - 1j * np.eye(2 * n)), 1e-8
    T, E, Ti = t_e_blocks(mp_i, mm_i)
    I2 = np.eye(2 * n)
    yield "t_algebra", "T T^-1", opnorm(T.full() @ Ti.full() - I2), 1e-10
    yield "t_algebra", "T^-1 T", opnorm(Ti.full() @ T.full() - I2), 1e-10
    yield "t_algebra", "E hermitian", opnorm(E.full() - E.full().conj().T), 1e-12
    mp2, mm2 = weyl_m(V, alpha, 2j, tol=tol).m, left_halfline_m(V, alpha, 2j, tol=tol).m
    Wi = np.linalg.inv(mm2 - mp2)
    yield "block_M", "(1,1) block forms", opnorm(mp2 @ Wi @ mm2 - mm2 @ Wi @ mp2), 1e-9
    B = block_M(p, 2j).full()
    yield "block_M", "min eig Im M(2i)", max(0.0, -float(np.linalg.eigvalsh(imag_part(B))[0])), 0.0
    beta = random_hermitian(n, rng)
    m_beta = weyl_m(V, beta, 1 + 1j, tol=tol).m
    m_alpha = weyl_m(V, alpha, 1 + 1j, tol=tol).m
    yield "lft", "alpha -> random beta", opnorm(lft_transform(m_alpha, alpha, beta) - m_beta), 2e-6
    for k in range(3):
        dim = int(rng.integers(1, 6))
        S = random_subspaced(rng, dim, int(rng.integers(1, dim + 1)))
        yield "donoghue", f"normalization #{k}", donoghue_measure(S).normalization_residual, 1e-12
        rep = lower_bound_check(S)
        gap = max(0.0, max(r.bound - r.min_eig for r in rep.rows))
        yield "donoghue", f"lower bound #{k}", gap, 1e-10


def cmd_check(run: Run):
    override = run.cfg.get("tolerance_override")
    report = []
    for suite, case, residual, tol in _suite_cases(run):
        t = float(override) if override is not None else tol
        ok = residual <= t
        report.append({"suite": suite, "case": case, "residual": float(residual), "tolerance": t,
                       "pass": bool(ok)})
    wio.write_json(run.out / "check.json", report)
    return EXIT_OK if all(r["pass"] for r in report) else EXIT_INVARIANT


COMMANDS = {
    "m-half": cmd_m_half,
    "m-full": cmd_m_full,
    "m-donoghue": cmd_m_donoghue,
    "measure": cmd_measure,
    "oracle": cmd_oracle,
    "check": cmd_check,
}


def parser():
    ap = argparse.ArgumentParser(prog="weylkit", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (default: config 'out' or cwd)")
        sp.add_argument("--threads", type=int, help="worker threads (fallback: WEYLKIT_THREADS)")
        sp.add_argument("--seed", type=int, help="seed for random problems")
    return ap


def _exit_code(exc):
    if isinstance(exc, (InvalidInputError, DomainError)):
        return EXIT_CONFIG
    if isinstance(exc, (ConvergenceError, ResolutionError)):
        return EXIT_CONVERGENCE
    return EXIT_INVARIANT


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        return COMMANDS[args.command](Run(args))
    except WeylkitError as exc:
        print(json.dumps(exc.to_dict(), default=wio._default), file=sys.stderr)
        return _exit_code(exc)
    except KeyError as exc:
        print(json.dumps({"error": "config", "message": f"missing key {exc}"}),
              file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

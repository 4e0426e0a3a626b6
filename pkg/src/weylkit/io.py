"""JSON / CSV (de)serialization and atomic file output."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidInputError


# -- matrices -----------------------------------------------------------------
# a matrix is stored row-major as a flat list of [re, im] pairs together with its
# shape; the reader also accepts nested lists of numbers or of [re, im] pairs

def matrix_to_json(A):
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    return {"shape": list(A.shape), "data": [[float(v.real), float(v.imag)] for v in A.ravel()]}


def _scalar(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise InvalidInputError("complex entries must be [re, im] pairs", entry=v)
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)):
        return complex(v)
    raise InvalidInputError("bad matrix entry", entry=repr(v))


def matrix_from_json(obj) -> np.ndarray:
    if isinstance(obj, dict):
        shape = tuple(obj["shape"])
        data = np.array([_scalar(v) for v in obj["data"]], dtype=complex)
        if data.size != int(np.prod(shape)):
            raise InvalidInputError("matrix data does not match its shape", shape=list(shape))
        return data.reshape(shape)
    if isinstance(obj, (int, float)):
        return np.array([[complex(obj)]])
    if isinstance(obj, list):
        if obj and all(isinstance(r, list) for r in obj) and len({len(r) for r in obj}) > 1:
            raise InvalidInputError("ragged matrix rows", lengths=[len(r) for r in obj])
        if obj and all(isinstance(r, list) and r and isinstance(r[0], list) for r in obj):
            return np.array([[_scalar(v) for v in row] for row in obj], dtype=complex)
        if obj and all(isinstance(r, list) for r in obj) and all(
                all(isinstance(v, (int, float)) for v in r) for r in obj):
            return np.array(obj, dtype=complex)
        if all(isinstance(v, (int, float)) for v in obj):
            return np.diag(np.array(obj, dtype=complex))  # a list of numbers means diag(...)
    raise InvalidInputError("unrecognized matrix encoding")


def complex_to_json(z):
    z = complex(z)
    return [z.real, z.imag]


def complex_from_json(v):
    return _scalar(v) if isinstance(v, (list, tuple)) else complex(v)


# -- domain objects --------------------------------------------------------------

def potential_to_json(V):
    return {"dim": V.dim, "x0": V.x0, "edges": [float(e) for e in V.edges],
            "cells": [matrix_to_json(c) for c in V.cells]}


def potential_from_json(obj):
    from .ode import GridPotential

    cells = np.array([matrix_from_json(c) for c in obj["cells"]])
    V = GridPotential(float(obj["x0"]), np.asarray(obj["edges"], dtype=float), cells)
    if "dim" in obj and int(obj["dim"]) != V.dim:
        raise InvalidInputError("dim does not match the cell matrices", dim=obj["dim"])
    return V


def measure_to_json(mu):
    out = {"dim": mu.dim,
           "atoms": [{"lambda": lam, "weight": matrix_to_json(W)} for lam, W in mu.atoms]}
    if mu.ac_grid is not None:
        out["ac"] = {"grid": [float(g) for g in mu.ac_grid],
                     "densities": [matrix_to_json(d) for d in mu.ac_density]}
    return out


def measure_from_json(obj):
    from .herglotz import OperatorMeasure

    atoms = tuple((float(a["lambda"]), matrix_from_json(a["weight"])) for a in obj.get("atoms", []))
    ac = obj.get("ac")
    if ac:
        return OperatorMeasure(int(obj["dim"]), atoms, np.asarray(ac["grid"], dtype=float),
                               np.array([matrix_from_json(d) for d in ac["densities"]]))
    return OperatorMeasure(int(obj["dim"]), atoms)


def weyl_result_to_json(r):
    return {"z": complex_to_json(r.z), "alpha": matrix_to_json(r.alpha), "m": matrix_to_json(r.m),
            "truncation_length": r.truncation_length, "cauchy_gap": r.cauchy_gap,
            "disk_diameter": r.disk_diameter}


def weyl_result_from_json(obj):
    from .halfline import WeylResult

    return WeylResult(complex_from_json(obj["z"]), matrix_from_json(obj["alpha"]),
                      matrix_from_json(obj["m"]), obj["truncation_length"], obj["cauchy_gap"],
                      obj["disk_diameter"])


def block_to_json(B):
    return {"n": B.n, "blocks": {"00": matrix_to_json(B.b00), "01": matrix_to_json(B.b01),
                                 "10": matrix_to_json(B.b10), "11": matrix_to_json(B.b11)}}


def block_from_json(obj):
    from .fullline import BlockMatrix2

    b = obj["blocks"]
    return BlockMatrix2(*(matrix_from_json(b[k]) for k in ("00", "01", "10", "11")))


def subspaced_to_json(S):
    return {"A": matrix_to_json(S.A), "N": matrix_to_json(S.N)}


def subspaced_from_json(obj):
    from .donoghue import SubspacedOperator

    raw = obj["N"]
    if isinstance(raw, list) and all(isinstance(v, (int, float)) for v in raw):
        N = np.asarray(raw, dtype=complex)[:, None]  # a single column
    else:
        N = matrix_from_json(raw)
    return SubspacedOperator(matrix_from_json(obj["A"]), N)


# -- files ------------------------------------------------------------------------

def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return complex_to_json(o)
    if isinstance(o, np.ndarray):
        return matrix_to_json(o) if o.ndim == 2 else o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj):
    return atomic_write_text(path, dumps(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read JSON from {path}: {exc}") from exc


def fmt(v):
    """Shortest round-trip decimal for floats."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows):
    return atomic_write_text(path, csv_text(header, rows))

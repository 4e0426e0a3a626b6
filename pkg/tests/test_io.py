import json

import numpy as np
import pytest

from weylkit import io as wio
from weylkit.donoghue import SubspacedOperator, random_subspaced
from weylkit.errors import InvalidInputError
from weylkit.fullline import BlockMatrix2
from weylkit.halfline import weyl_m
from weylkit.herglotz import OperatorMeasure
from weylkit.linalg import random_hermitian
from weylkit.ode import GridPotential


def through_text(obj):
    return json.loads(wio.dumps(obj))


def test_matrix_round_trip_exact(rng):
    A = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    B = wio.matrix_from_json(through_text(wio.matrix_to_json(A)))
    assert np.array_equal(A, B)


def test_matrix_alternate_encodings():
    assert np.array_equal(wio.matrix_from_json([[1, 2], [3, 4]]), np.array([[1, 2], [3, 4]]))
    assert np.array_equal(wio.matrix_from_json([[[0, 1]]]), np.array([[1j]]))
    assert np.array_equal(wio.matrix_from_json([1, 2]), np.diag([1.0, 2.0]))
    assert np.array_equal(wio.matrix_from_json(2.5), np.array([[2.5]]))


@pytest.mark.parametrize("bad", [{"shape": [2, 2], "data": [[1, 0]]}, "x", [[1, 2], [3]], [["a"]]])
def test_matrix_bad_encodings(bad):
    with pytest.raises((InvalidInputError, KeyError)):
        wio.matrix_from_json(bad)


def test_potential_round_trip(rng):
    V = GridPotential(0.5, np.array([0.0, 0.5, 2.0]),
                      np.array([random_hermitian(2, rng) for _ in range(2)]))
    W = wio.potential_from_json(through_text(wio.potential_to_json(V)))
    assert W.x0 == V.x0
    assert np.array_equal(W.edges, V.edges)
    assert np.array_equal(W.cells, V.cells)


def test_potential_dim_mismatch():
    obj = wio.potential_to_json(GridPotential.free(2))
    obj["dim"] = 3
    with pytest.raises(InvalidInputError):
        wio.potential_from_json(obj)


def test_measure_round_trip():
    mu = OperatorMeasure(1, atoms=((0.0, np.array([[1.0]])), (2.0, np.array([[0.5]]))),
                         ac_grid=np.array([0.0, 1.0, 2.0]),
                         ac_density=np.array([[[0.1]], [[0.2]], [[0.3]]]))
    nu = wio.measure_from_json(through_text(wio.measure_to_json(mu)))
    assert [a for a, _ in nu.atoms] == [0.0, 2.0]
    assert np.array_equal(nu.ac_grid, mu.ac_grid)
    assert np.allclose(nu.ac_density, mu.ac_density)


def test_weyl_result_round_trip():
    r = weyl_m(GridPotential.free(1), 0.0, 1j, tol=1e-8)
    s = wio.weyl_result_from_json(through_text(wio.weyl_result_to_json(r)))
    assert s.z == r.z and np.array_equal(s.m, r.m)
    assert s.cauchy_gap == r.cauchy_gap and s.truncation_length == r.truncation_length


def test_block_round_trip(rng):
    B = BlockMatrix2.from_full(rng.standard_normal((4, 4)) + 0j)
    obj = through_text(wio.block_to_json(B))
    assert set(obj["blocks"]) == {"00", "01", "10", "11"} and obj["n"] == 2
    assert np.array_equal(wio.block_from_json(obj).full(), B.full())


def test_subspaced_round_trip(rng):
    S = random_subspaced(rng, 4, 2)
    T = wio.subspaced_from_json(through_text(wio.subspaced_to_json(S)))
    assert np.array_equal(S.A, T.A) and np.array_equal(S.N, T.N)
    U = wio.subspaced_from_json({"A": [1, 2], "N": [0.6, 0.8]})
    assert isinstance(U, SubspacedOperator) and U.k == 1


def test_csv_shortest_repr():
    txt = wio.csv_text(["a", "b"], [[0.1, 1 / 3], [2, "x"]])
    assert txt == "a,b\n0.1,0.3333333333333333\n2,x\n"


def test_atomic_write_leaves_no_temp(tmp_path):
    p = wio.write_json(tmp_path / "sub" / "f.json", {"z": 1j, "v": np.float64(2.0)})
    assert json.loads(p.read_text()) == {"v": 2.0, "z": [0.0, 1.0]}
    assert [q.name for q in p.parent.iterdir()] == ["f.json"]


def test_read_json_errors(tmp_path):
    with pytest.raises(InvalidInputError):
        wio.read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidInputError):
        wio.read_json(bad)

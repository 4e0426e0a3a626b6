import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weylkit.errors import ConvergenceError, DomainError, InvalidInputError
from weylkit.herglotz import (HerglotzEvaluator, HerglotzRep, OperatorMeasure, atom_at,
                              check_herglotz, eval_rep, interval_measure, invertibility_transfer,
                              kernel_constancy, ordered_map, richardson, stieltjes_invert)
from weylkit.linalg import random_unitary


def scalar(f):
    return HerglotzEvaluator(func=lambda z: np.array([[f(z)]]), dim=1)


NEG_INV = scalar(lambda z: -1.0 / z)
CONST_I = scalar(lambda z: 1j)
FREE_M = scalar(lambda z: 1j * np.sqrt(z))


# -- measures and representations ----------------------------------------------------

def test_measure_validation():
    with pytest.raises(InvalidInputError):
        OperatorMeasure(1, atoms=((1.0, [[1.0]]), (0.0, [[1.0]])))
    with pytest.raises(InvalidInputError):
        OperatorMeasure(1, atoms=((0.0, [[-1.0]]),))
    with pytest.raises(InvalidInputError):
        OperatorMeasure(1, ac_grid=np.array([0.0, 1.0]))


def test_measure_mass_piecewise_linear():
    mu = OperatorMeasure(1, atoms=((0.5, [[2.0]]),), ac_grid=np.array([0.0, 1.0]),
                         ac_density=np.array([[[0.0]], [[2.0]]]))
    # density 2x on [0, 1] plus an atom at 1/2
    assert mu.mass(0.0, 1.0)[0, 0].real == pytest.approx(1.0 + 2.0)
    assert mu.mass(0.0, 0.5)[0, 0].real == pytest.approx(0.25 + 2.0)
    assert mu.mass(0.5, 1.0)[0, 0].real == pytest.approx(0.75)


def test_eval_rep_single_atom_is_minus_inverse():
    rep = HerglotzRep(np.zeros((1, 1)), np.zeros((1, 1)), OperatorMeasure(1, atoms=((0.0, [[1.0]]),)))
    for z in (1j, 2 + 3j, -1 + 0.1j):
        assert eval_rep(rep, z)[0, 0] == pytest.approx(-1 / z, abs=1e-15)


def test_eval_rep_linear_term():
    rep = HerglotzRep(np.zeros((1, 1)), np.eye(1), OperatorMeasure.empty(1))
    assert eval_rep(rep, 3 + 4j)[0, 0] == pytest.approx(3 + 4j)


def test_eval_rep_two_atoms_hand_sum():
    rep = HerglotzRep(np.zeros((1, 1)), np.zeros((1, 1)),
                      OperatorMeasure(1, atoms=((-1.0, [[0.5]]), (1.0, [[0.5]]))))
    z = 1j
    hand = 0.5 * (1 / (-1 - z) + 1 / 2) + 0.5 * (1 / (1 - z) - 1 / 2)
    assert abs(eval_rep(rep, z)[0, 0] - hand) <= 1e-14


def test_eval_rep_real_axis_and_reflection():
    rep = HerglotzRep(np.zeros((1, 1)), np.zeros((1, 1)), OperatorMeasure(1, atoms=((0.0, [[1.0]]),)))
    with pytest.raises(DomainError):
        eval_rep(rep, 0.5)
    assert eval_rep(rep, 1 - 1j)[0, 0] == pytest.approx(np.conj(eval_rep(rep, 1 + 1j)[0, 0]))


# -- Stieltjes inversion -----------------------------------------------------------------

def test_stieltjes_unit_atom():
    r = stieltjes_invert(NEG_INV, -0.5, 0.5)
    assert abs(r.value[0, 0] - 1.0) <= 1e-3
    assert r.error < 1e-3


def test_stieltjes_constant_density():
    r = stieltjes_invert(CONST_I, 0.0, 1.0)
    assert abs(r.value[0, 0] - 1 / math.pi) <= 1e-4


def test_stieltjes_free_density():
    r = stieltjes_invert(FREE_M, 0.0, 1.0)
    assert abs(r.value[0, 0] - 2 / (3 * math.pi)) <= 1e-3


def test_stieltjes_bad_interval_and_schedule():
    with pytest.raises(InvalidInputError):
        stieltjes_invert(NEG_INV, 1.0, 0.0)
    with pytest.raises(InvalidInputError):
        stieltjes_invert(NEG_INV, 0.0, 1.0, eps_schedule=[1e-3, 1e-2])


def test_stieltjes_growing_differences_raise():
    # Im f grows like 1/eps^2 near the real axis, so extrapolation diverges
    bad = scalar(lambda z: 1j / z.imag ** 2)
    with pytest.raises(ConvergenceError):
        stieltjes_invert(bad, 0.0, 1.0, eps_schedule=1e-2 * 2.0 ** -np.arange(6), quadrature_nodes=16)


def test_roundtrip_rep_measure():
    mu = OperatorMeasure(2, atoms=((0.3, np.array([[1.0, 0.5], [0.5, 1.0]])),
                                   (2.0, np.diag([0.0, 2.0]))))
    ev = HerglotzEvaluator(rep=HerglotzRep(np.zeros((2, 2)), np.zeros((2, 2)), mu))
    r = stieltjes_invert(ev, 0.0, 1.0)
    assert np.abs(r.value - mu.mass(0.0, 1.0)).max() <= max(1e-3, 10 * r.error)


def test_atom_at():
    assert atom_at(NEG_INV, 0.0).weight[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert abs(atom_at(NEG_INV, 1.0).weight[0, 0]) <= 1e-8


def test_atom_of_capped_free_m_matches_fd_residue():
    from weylkit.halfline import m_capped
    from weylkit.ode import GridPotential
    from weylkit.oracle import discretize, fd_halfline_atoms

    V, L = GridPotential.free(1), 3.0
    ev = HerglotzEvaluator(func=lambda z: m_capped(V, 0.0, z, L, "dirichlet"), dim=1)
    lam1 = (math.pi / L) ** 2
    a = atom_at(ev, lam1, eps_schedule=1e-3 * 2.0 ** -np.arange(4))
    op = discretize(V, (0.0, L), 0.005, 0.0)
    w, W = fd_halfline_atoms(op, 0.0, 2.0)
    assert len(w) == 1
    assert abs(a.weight[0, 0] - W[0, 0, 0].real) <= 1e-4
    assert a.weight[0, 0].real == pytest.approx(2 * lam1 / L, rel=1e-6)


def test_interval_measure_lumps_remainder():
    im = interval_measure(NEG_INV, -0.5, 0.5, atoms=(0.0,))
    mu = im.to_measure()
    assert [a[0] for a in mu.atoms] == [0.0, 0.5]
    assert mu.atoms[0][1][0, 0].real == pytest.approx(1.0, abs=1e-9)
    assert abs(mu.atoms[1][1][0, 0]) <= 1e-3


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=4),
       st.integers(1, 4))
def test_richardson_exact_on_polynomials(coeffs, levels):
    xs = 1e-1 * 2.0 ** -np.arange(len(coeffs) + levels - 1)
    vals = [np.polyval(coeffs[::-1], x) for x in xs]
    value, _ = richardson(xs, vals)
    assert value == pytest.approx(coeffs[0], abs=1e-7 * (1 + max(map(abs, coeffs))))


# -- structural checks ------------------------------------------------------------------

def test_check_herglotz():
    assert check_herglotz(NEG_INV, [1j, 1 + 1j, 2j]).passed
    bad = check_herglotz(scalar(lambda z: np.conj(z)), [1j])
    assert not bad.passed and bad.rows[0].min_im_eig == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        check_herglotz(NEG_INV, [-1j])


def test_check_herglotz_constant_potential_m():
    from weylkit.halfline import weyl_evaluator
    from weylkit.ode import GridPotential

    ev = weyl_evaluator(GridPotential.constant(np.diag([1.0, 2.0])), np.zeros((2, 2)))
    grid = [complex(a, b) for a in (-2, 0, 1.5, 3, 5) for b in (0.5, 2)]
    assert check_herglotz(ev, grid).passed


def test_kernel_constancy_examples():
    blk = HerglotzEvaluator(func=lambda z: np.diag([-1 / z, 0.0]), dim=2)
    rep = kernel_constancy(blk, [1j, 1 + 2j, -3 + 0.5j])
    assert rep.constant and rep.dims == [1, 1, 1]
    assert np.allclose(np.abs(rep.bases[0][:, 0]), [0, 1])
    assert kernel_constancy(HerglotzEvaluator(func=lambda z: -np.eye(2) / z, dim=2), [1j, 2j]).dims == [0, 0]
    U = random_unitary(2, np.random.default_rng(3))
    rot = HerglotzEvaluator(func=lambda z: U @ np.diag([-1 / z, 0.7]) @ U.conj().T, dim=2)
    rep = kernel_constancy(rot, [1j, 1 + 1j, 3j])
    assert rep.constant
    assert abs(np.vdot(rep.bases[0][:, 0], U[:, 1])) == pytest.approx(1.0, abs=1e-10)


def test_invertibility_transfer():
    zs = [0.1j, 5 + 0.01j, -5 + 1j, 10j]
    assert invertibility_transfer(NEG_INV, 1j, zs).holds
    assert invertibility_transfer(FREE_M, 1j, zs).holds
    from weylkit.donoghue import SubspacedOperator, donoghue_M, lower_bound

    S = SubspacedOperator(np.diag([0.0, 1.0]), np.eye(2))
    rep = invertibility_transfer(HerglotzEvaluator(func=lambda z: donoghue_M(S, z), dim=2), 1j, zs)
    assert rep.holds
    assert all(l >= lower_bound(z) * z.imag - 1e-12 for l, z in zip(rep.lower_bounds, zs))


def test_ordered_map_keeps_order_with_threads():
    seen = set()

    def f(x):
        seen.add(threading.get_ident())
        return x * x

    assert ordered_map(f, range(50), threads=4) == [x * x for x in range(50)]

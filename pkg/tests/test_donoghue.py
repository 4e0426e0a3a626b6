import numpy as np
import pytest
from hypothesis import given, settings

from weylkit.donoghue import (DEFAULT_GRID, SubspacedOperator, canned_examples, diagonalize,
                              donoghue_M, donoghue_measure, invariant_residual, krylov_basis,
                              lower_bound, lower_bound_check, optimizing_lambda, random_subspaced,
                              residual_identity_check, simplicity_check)
from weylkit.errors import InvalidInputError, ReducibleError
from weylkit.herglotz import eval_rep
from weylkit.linalg import random_hermitian

from conftest import upper_half_plane

V12 = np.array([[1.0], [1.0]]) / np.sqrt(2)


def test_orthonormality_enforced():
    with pytest.raises(InvalidInputError):
        SubspacedOperator(np.eye(2), np.array([[1.0], [1.0]]))
    S = SubspacedOperator.from_span(np.eye(2), [[1.0], [1.0]])
    assert np.allclose(S.N.conj().T @ S.N, 1.0)


def test_zero_operator_full_subspace():
    S = SubspacedOperator(np.zeros((3, 3)), np.eye(3))
    z = 0.3 + 2j
    assert np.allclose(donoghue_M(S, z), -np.eye(3) / z, atol=1e-14)


def test_two_term_hand_sum():
    S = SubspacedOperator(np.diag([1.0, 2.0]), V12)
    z = 2j
    ref = 0.5 * ((z * 1 + 1) / (1 - z) + (z * 2 + 1) / (2 - z))
    assert abs(donoghue_M(S, z)[0, 0] - ref) <= 1e-14


def test_real_z_rejected():
    with pytest.raises(InvalidInputError):
        donoghue_M(canned_examples()["cyclic"], 1.0)


def test_forced_value_at_i(rng):
    for dim, k in [(1, 1), (4, 2), (7, 3)]:
        S = random_subspaced(rng, dim, k)
        assert np.abs(donoghue_M(S, 1j) - 1j * np.eye(k)).max() <= 1e-12


@given(z=upper_half_plane)
@settings(max_examples=20)
def test_herglotz_and_reflection(z):
    rng = np.random.default_rng(7)
    S = random_subspaced(rng, 5, 2)
    M = donoghue_M(S, z)
    assert np.linalg.eigvalsh((M - M.conj().T) / 2j).min() >= -1e-12
    assert np.abs(donoghue_M(S, np.conj(z)) - M.conj().T).max() <= 1e-10 * max(1.0, np.abs(M).max())


# -- measure ----------------------------------------------------------------------

def test_measure_scalar_zero():
    dm = donoghue_measure(SubspacedOperator(np.zeros((1, 1)), np.eye(1)))
    (lam, W), = dm.measure.atoms
    assert lam == 0.0 and W[0, 0] == pytest.approx(1.0)
    assert eval_rep(dm.rep, 2j)[0, 0] == pytest.approx(-1 / 2j)


def test_measure_two_atoms():
    dm = donoghue_measure(SubspacedOperator(np.diag([1.0, 2.0]), V12))
    lams = [a[0] for a in dm.measure.atoms]
    ws = [a[1][0, 0].real for a in dm.measure.atoms]
    assert lams == pytest.approx([1.0, 2.0])
    assert ws == pytest.approx([1.0, 2.5])
    assert dm.weights == pytest.approx([0.5, 0.2])


def test_measure_normalization_random(rng):
    for _ in range(10):
        dm = donoghue_measure(random_subspaced(rng, 5, 2))
        assert dm.normalization_residual <= 1e-12
        assert dm.representation_residual <= 1e-10


def test_measure_degenerate_eigenvalue_clustered():
    S = SubspacedOperator(np.diag([3.0, 3.0, 1.0]), np.eye(3)[:, :2])
    dm = donoghue_measure(S)
    assert len(dm.measure.atoms) == 2
    W3 = dict(dm.measure.atoms)[3.0]
    assert np.allclose(W3, 10 * np.eye(2))


# -- lower bound --------------------------------------------------------------------

def test_lower_bound_values():
    assert lower_bound(1j) == pytest.approx(1.0)
    assert lower_bound(2j) == pytest.approx(0.25)
    assert optimizing_lambda(2j) == 0.0
    assert optimizing_lambda(1j) is None
    assert optimizing_lambda(0.5j) is None  # infimum only approached as lambda -> infinity


@given(z=upper_half_plane)
def test_optimizer_minimizes_ratio(z):
    lam = optimizing_lambda(z)
    grid = np.linspace(-50, 50, 20001)
    ratio = np.min((grid ** 2 + 1) / np.abs(grid - z) ** 2)
    if lam is not None and abs(lam) < 1e6:
        assert (lam ** 2 + 1) / abs(lam - z) ** 2 == pytest.approx(lower_bound(z), rel=1e-9)
    assert lower_bound(z) <= ratio + 1e-12


def test_bound_scalar_equality():
    rep = lower_bound_check(SubspacedOperator(np.zeros((1, 1)), np.eye(1)), [2j])
    row, = rep.rows
    assert row.min_eig == pytest.approx(0.25, abs=1e-14)
    assert row.attained


def test_bound_random(rng):
    for _ in range(10):
        dim = int(rng.integers(1, 9))
        S = random_subspaced(rng, dim, int(rng.integers(1, dim + 1)))
        rep = lower_bound_check(S, DEFAULT_GRID)
        assert rep.passed
        assert rep.rows[0].attained  # z = i: every lambda ties


@pytest.mark.parametrize("z", [2j, 1 + 1j, -1 + 0.5j])
def test_bound_attained_when_optimizer_in_spectrum(rng, z):
    S = random_subspaced(rng, 6, 2, optimizer_z=z)
    row, = lower_bound_check(S, [z]).rows
    assert row.attained
    assert row.min_eig == pytest.approx(row.bound, abs=1e-6)


# -- simplicity and diagonalization -------------------------------------------------

def test_simplicity_canned():
    ex = canned_examples()
    rep = simplicity_check(ex["cyclic"])
    assert rep.simple and rep.resolvent_rank == 2 and rep.krylov_rank == 2
    rep = simplicity_check(ex["degenerate"])
    assert not rep and rep.resolvent_rank == 1 and rep.krylov_rank == 1


def test_full_subspace_is_simple(rng):
    A = random_hermitian(5, rng)
    assert simplicity_check(SubspacedOperator(A, np.eye(5)))


def test_krylov_basis_invariant(rng):
    A = np.diag([1.0, 1.0, 2.0, 3.0])
    S = SubspacedOperator(A, (np.eye(4)[:, [0]] + np.eye(4)[:, [2]]) / np.sqrt(2))
    K = krylov_basis(S)
    assert K.shape[1] == 2
    assert invariant_residual(A, K) <= 1e-12


def test_diagonalize_two_fibers():
    D = diagonalize(canned_examples()["cyclic"])
    assert [f.lam for f in D.fibers] == pytest.approx([1.0, 2.0])
    assert [float(f.weights[0]) for f in D.fibers] == pytest.approx([0.5, 0.5])
    assert D.unitarity_residual < 1e-14
    assert D.intertwining_residual < 1e-14


def test_diagonalize_multiplicity_two_fiber():
    A = np.diag([3.0, 3.0, 1.0])
    S = SubspacedOperator.from_span(A, [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    D = diagonalize(S)
    ranks = {f.lam: len(f.weights) for f in D.fibers}
    assert ranks == {1.0: 1, 3.0: 2}
    assert D.coimage_residual <= 1e-12


def test_diagonalize_scalar_identity():
    D = diagonalize(SubspacedOperator(np.zeros((1, 1)), np.eye(1)))
    assert np.allclose(D.U, 1.0)


def test_diagonalize_random(rng):
    for _ in range(10):
        dim = int(rng.integers(2, 7))
        S = random_subspaced(rng, dim, int(rng.integers(1, 3)))
        D = diagonalize(S)
        assert D.unitarity_residual <= 1e-10
        assert D.intertwining_residual <= 1e-10


def test_reducible_error_names_subspaces():
    with pytest.raises(ReducibleError) as info:
        diagonalize(canned_examples()["degenerate"])
    K = info.value.cyclic_basis
    C = info.value.complement_basis
    A = np.diag([1.0, 1.0])
    assert K.shape[1] + C.shape[1] == 2
    assert np.abs(K.conj().T @ C).max() <= 1e-12
    assert invariant_residual(A, K) <= 1e-12
    assert invariant_residual(A, C) <= 1e-12


# -- resolvent identity -------------------------------------------------------------

@pytest.mark.parametrize("z", [1j, 0.5 + 2j, -3 - 1j])
def test_residual_identity(rng, z):
    r = residual_identity_check(random_subspaced(rng, 4, 1), z)
    assert r.identity_residual <= 1e-12
    assert r.decays_like_inverse_t

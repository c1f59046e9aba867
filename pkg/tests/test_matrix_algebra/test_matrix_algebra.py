import numpy as np
import pytest
from numpy.testing import assert_allclose

from nczw.exceptions import EigensolverError, InvalidExponentError, NotHermitianError, NotProjectionError
from nczw.generators import random_contraction_pair, random_matrices
from nczw.matrix_algebra import HERMITIAN_TOLERANCE, Interval, MatrixElement, abs_op, adjoint, eigh, \
    functional_calculus, hermitian_defect, lattice_join, lattice_meet, minimum_eigenvalue, positive_sqrt, \
    schatten_norm, spectral_decomposition, spectral_projection, support_projection, trace, usefullem_slack


@pytest.mark.parametrize('interval, values, expected', [
    (Interval.above(1.0), [0.5, 1.0, 1.0 + 1e-12, 2.0], [False, False, False, True]),
    (Interval.at_most(1.0), [0.5, 1.0, 1.0 + 1e-12, 2.0], [True, True, True, False]),
    (Interval.half_open(1.0, 2.0), [1.0 - 1e-12, 1.5, 2.0 - 1e-12, 2.0], [True, True, False, False]),
    (Interval.left_open(1.0, 2.0), [1.0, 1.5, 2.0, 2.0 + 1e-12], [False, True, True, True]),
])
def test_interval_snaps_endpoints(interval, values, expected):
    assert list(interval.contains(np.array(values))) == expected


def test_hermitian_claim_is_validated():
    with pytest.raises(NotHermitianError):
        MatrixElement([[0, 1], [0, 0]], hermitian=True)


def test_hermitian_tolerance_is_relative_to_the_entry_scale():
    large = np.array([[1e6, 1.0], [1.0 + 1e-7, 2e6]])
    assert hermitian_defect(large) < HERMITIAN_TOLERANCE
    assert MatrixElement(large, hermitian=True).is_hermitian
    small = np.array([[0.5, 1e-9], [0.0, 0.5]])
    assert hermitian_defect(small) == pytest.approx(1e-9)
    with pytest.raises(NotHermitianError):
        MatrixElement(small, hermitian=True)


def test_projection_claim_is_validated():
    with pytest.raises(NotProjectionError):
        MatrixElement(np.diag([1.0, 0.5]), projection=True)
    assert MatrixElement.identity(3).is_projection


def test_spectral_decomposition_reconstructs(rng):
    g = random_matrices(rng, 1, 4)[0]
    a = MatrixElement(g + adjoint(g), hermitian=True)
    decomposition = spectral_decomposition(a)
    assert_allclose(decomposition.reconstruct(), a.entries, atol=1e-12)
    projections = [np.asarray(p) for p in decomposition.eigenprojections]
    assert_allclose(sum(projections), np.eye(4), atol=1e-12)
    assert_allclose(projections[0] @ projections[1], 0, atol=1e-12)


def test_spectral_decomposition_merges_degenerate_eigenvalues():
    decomposition = spectral_decomposition(MatrixElement.diagonal([2.0, 2.0, 5.0]))
    assert decomposition.eigenvalues == pytest.approx([2.0, 5.0])
    assert np.real(trace(decomposition.eigenprojections[0])) == pytest.approx(2.0)


def test_spectral_projection_of_a_stack():
    stack = np.stack([np.diag([1.0, 3.0]), np.diag([3.0, 1.0])]).astype(complex)
    result = spectral_projection(stack, Interval.above(2.0))
    assert_allclose(result[0], np.diag([0.0, 1.0]), atol=1e-12)
    assert_allclose(result[1], np.diag([1.0, 0.0]), atol=1e-12)


def test_spectral_projection_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        spectral_projection(np.array([[0, 1], [0, 0]], dtype=complex), Interval.above(0.0))


@pytest.mark.parametrize('p, expected', [
    (1, 7.0),
    (2, 5.0),
    (np.inf, 4.0),
])
def test_schatten_norm(p, expected):
    assert schatten_norm(MatrixElement.diagonal([3.0, -4.0]), p) == pytest.approx(expected)


def test_schatten_norm_rejects_small_exponents():
    with pytest.raises(InvalidExponentError):
        schatten_norm(MatrixElement.identity(2), 0.5)


def test_abs_of_a_nilpotent():
    assert_allclose(np.asarray(abs_op(MatrixElement([[0, 1], [0, 0]]))), np.diag([0.0, 1.0]), atol=1e-12)


def test_positive_sqrt_squares_back(rng):
    g = random_matrices(rng, 5, 2)
    x = g @ adjoint(g)
    root = positive_sqrt(x)
    assert_allclose(root @ root, x, atol=1e-10)
    assert minimum_eigenvalue(root) >= -1e-12


def test_functional_calculus_keeps_element_type():
    result = functional_calculus(MatrixElement.diagonal([1.0, 4.0]), np.sqrt)
    assert isinstance(result, MatrixElement)
    assert_allclose(result.entries, np.diag([1.0, 2.0]), atol=1e-12)


def test_lattice_of_coordinate_projections():
    e = np.diag([1.0, 1.0, 0.0]).astype(complex)
    f = np.diag([0.0, 1.0, 1.0]).astype(complex)
    assert_allclose(lattice_meet(e, f), np.diag([0.0, 1.0, 0.0]), atol=1e-10)
    assert_allclose(lattice_join(e, f), np.eye(3), atol=1e-10)


def test_meet_of_distinct_lines_is_zero():
    e = np.array([[1, 0], [0, 0]], dtype=complex)
    f = np.full((2, 2), 0.5, dtype=complex)
    assert_allclose(lattice_meet(e, f), np.zeros((2, 2)), atol=1e-10)
    assert_allclose(lattice_meet(e, e), e, atol=1e-10)


def test_lattice_operations_reject_non_projections():
    with pytest.raises(NotProjectionError):
        lattice_meet(np.diag([1.0, 0.5]).astype(complex), np.eye(2, dtype=complex))


def test_support_projection_of_a_sum():
    e = np.array([[1, 0], [0, 0]], dtype=complex)
    f = np.full((2, 2), 0.5, dtype=complex)
    assert_allclose(support_projection(e + f), np.eye(2), atol=1e-10)
    assert_allclose(support_projection(2 * e), e, atol=1e-10)


def test_eigensolver_failures_are_wrapped(monkeypatch):
    def failing(_):
        raise np.linalg.LinAlgError('no convergence')

    monkeypatch.setattr(np.linalg, 'eigh', failing)
    with pytest.raises(EigensolverError):
        eigh(np.eye(2))


@pytest.mark.parametrize('m', [1, 2, 4, 8])
def test_usefullem_inequality(rng, m):
    worst = min(usefullem_slack(*random_contraction_pair(m, rng), omega=float(rng.uniform(0.1, 10)))
                for _ in range(200))
    assert worst >= -1e-8


def test_usefullem_is_tight_at_equality():
    a = np.diag([1.0, 2.0]).astype(complex)
    assert usefullem_slack(a, a) == pytest.approx(0.0, abs=1e-12)

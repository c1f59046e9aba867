import numpy as np
import pytest
from numpy.testing import assert_allclose

from nczw.dyadic_model import DyadicGrid, OperatorField, weighted_trace
from nczw.exceptions import ContractViolationError, GridMismatchError, InvalidExponentError, InvalidKernelSpecError, \
    NotProjectionError
from nczw.generators import random_hermitian_family, random_matrices, random_positive_field
from nczw.kernels_operators import FunctionKernel, HilbertKernel, RieszKernel, VectorKernel, annular_lemma_ratio, \
    annulus_apply, averaging_apply, column_norm, cr_norm, dyadic_poisson_family, hormander_modulus, kernel_norm_proxy, \
    lacunary_apply, lacunary_index, lacunary_range, maximal_linfty_bound, optimal_scalar_witness, parse_kernel_spec, \
    partition_residual, psi, psi_partition, quintuple_annuli_ratio, reduction_residual, refine_witness, \
    richardson_error, row_norm, sandwich_constant, scalar_supremum, scalar_weak_oracle, size_constant, \
    spectral_witness, truncated_apply, vector_apply, weak_maximal_certificate


def test_partition_of_unity_at_a_point():
    assert sum(psi_partition(i, 1)(0.3) for i in range(-20, 21)) == pytest.approx(1.0, abs=1e-8)


def test_partition_of_unity_on_grid_distances(plane_grid):
    centers = plane_grid.cell_centers
    distances = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    assert partition_residual(distances[distances > 0], 2) <= 1e-8
    with pytest.raises(ContractViolationError):
        partition_residual(np.array([0.0, 0.5]), 1)


def test_psi_is_supported_in_the_dyadic_annulus():
    assert_allclose(psi(np.array([0.25, 0.5, 2.0, 3.0])), 0.0)
    assert psi(1.0) == pytest.approx(1.0)


@pytest.mark.parametrize('eps, dimension, expected', [
    (0.1, 1, 3),
    (0.5, 1, 1),
    (1.0, 1, 0),
    (0.1, 2, 3),
])
def test_lacunary_index(eps, dimension, expected):
    assert lacunary_index(eps, dimension) == expected


def test_truncation_matches_a_direct_sum(grid, scalar_field):
    eps = 0.1
    centers = grid.cell_centers[:, 0]
    values = scalar_field.scalar_values()
    expected = np.zeros(grid.num_cells)
    for x in range(grid.num_cells):
        for y in range(grid.num_cells):
            if abs(centers[x] - centers[y]) > eps:
                expected[x] += values[y] / (centers[x] - centers[y]) * grid.cell_volume
    assert_allclose(truncated_apply(HilbertKernel(), scalar_field, eps).scalar_values(), expected, rtol=1e-12,
                    atol=1e-12 * np.max(np.abs(expected)))


@pytest.mark.parametrize('eps', [0.25, 0.1, 3 / 64])
def test_reduction_to_lacunary_truncations(positive_field, eps):
    assert reduction_residual(HilbertKernel(), positive_field, eps) <= 1e-8 * max(1.0, positive_field.norm_inf())


def test_lacunary_steps_are_annuli(positive_field):
    kernel = HilbertKernel()
    for j in list(lacunary_range(positive_field.grid))[:-1]:
        step = lacunary_apply(kernel, positive_field, j + 1) - lacunary_apply(kernel, positive_field, j)
        assert step.allclose(annulus_apply(kernel, positive_field, j), atol=1e-10)


def test_last_lacunary_truncation_is_the_full_operator(positive_field):
    grid = positive_field.grid
    full = truncated_apply(HilbertKernel(), positive_field, grid.side_length(grid.depth) / 2)
    last = lacunary_apply(HilbertKernel(), positive_field, lacunary_range(grid)[-1])
    assert last.allclose(full, atol=1e-10)


def test_antisymmetric_kernels_commute_with_adjoints(grid, rng):
    g = OperatorField(grid, random_matrices(rng, grid.num_cells, 2))
    kernel = HilbertKernel()
    left = lacunary_apply(kernel, g.adjoint(), 3)
    assert left.allclose(lacunary_apply(kernel, g, 3).adjoint(), atol=1e-12)


def test_sandwich_constant_is_finite(grid, rng):
    f = random_positive_field(grid, 1, rng)
    constant = sandwich_constant(HilbertKernel(), f, 2.0 ** -4)
    assert 0 < constant < np.inf
    with pytest.raises(ContractViolationError):
        sandwich_constant(HilbertKernel(), random_positive_field(grid, 2, rng), 0.1)


def test_averaging_counts_cells_in_the_ball(grid):
    averaged = averaging_apply(OperatorField.constant(grid, 1.0, positive=True), 4 / 64)
    assert averaged.positive
    assert averaged.scalar_values()[32] == pytest.approx(9 / 4)
    assert averaged.scalar_values()[0] == pytest.approx(5 / 4)


def test_averaging_needs_a_radius(positive_field):
    with pytest.raises(ContractViolationError):
        averaging_apply(positive_field, 0.0)


@pytest.mark.parametrize('kernel, dimension', [
    (HilbertKernel(), 1),
    (RieszKernel(1, 1), 1),
    (RieszKernel(2, 2), 2),
])
def test_size_constant_of_calderon_zygmund_kernels(kernel, dimension):
    assert size_constant(kernel, DyadicGrid(dimension, 3)) == pytest.approx(1.0)


def test_kernel_dimension_must_match_grid(grid, positive_field):
    with pytest.raises(GridMismatchError):
        size_constant(RieszKernel(1, 2), grid)
    with pytest.raises(GridMismatchError):
        truncated_apply(RieszKernel(1, 2), positive_field, 0.1)


def test_richardson_error_is_finite(positive_field):
    assert np.isfinite(richardson_error(HilbertKernel(), positive_field, 2.0 ** -3))


def test_hilbert_hormander_modulus_decays_linearly():
    grid = DyadicGrid(1, 12)
    modulus = hormander_modulus(HilbertKernel(), 1.0, [(6, 31)], 5, grid)
    assert modulus.any_truncated
    assert 0.8 <= modulus.decay_exponent() <= 1.2
    partial = [row.partial_sum for row in modulus.rows]
    assert partial == sorted(partial)
    assert modulus.supremum == partial[-1]


def test_hormander_variants_agree_for_antisymmetric_kernels():
    grid = DyadicGrid(1, 8)
    column = hormander_modulus(HilbertKernel(), 1.0, [(3, 3), (4, 7)], 3, grid)
    transposed = hormander_modulus(HilbertKernel(), 1.0, [(3, 3), (4, 7)], 3, grid, 'transposed')
    assert column.supremum == pytest.approx(transposed.supremum, rel=1e-12)
    assert len(column.csv_rows()) == 6


def test_hormander_modulus_rejects_bad_arguments(grid):
    with pytest.raises(InvalidExponentError):
        hormander_modulus(HilbertKernel(), 0.5, [(2, 1)], 2, grid)
    with pytest.raises(ContractViolationError):
        hormander_modulus(HilbertKernel(), 1.0, [(2, 1)], 2, grid, 'diagonal')


def test_decay_fit_needs_two_points(grid):
    modulus = hormander_modulus(HilbertKernel(), 1.0, [(1, 0)], 2, grid)
    with pytest.raises(ContractViolationError):
        modulus.decay_exponent()


@pytest.mark.parametrize('spec, dimension, name', [
    ('hilbert', 1, 'hilbert'),
    ('riesz:1', 1, 'riesz:1'),
    ('riesz:2', 2, 'riesz:2'),
    ('dyadic-poisson:4', 1, 'dyadic-poisson:4'),
])
def test_parse_kernel_spec(spec, dimension, name):
    assert parse_kernel_spec(spec, dimension).name == name


@pytest.mark.parametrize('spec, dimension', [
    ('hilbert', 2),
    ('riesz:3', 2),
    ('riesz:x', 1),
    ('dyadic-poisson:65', 1),
    ('gauss:1', 1),
])
def test_parse_kernel_spec_rejects(spec, dimension):
    with pytest.raises(InvalidKernelSpecError):
        parse_kernel_spec(spec, dimension)


def test_vector_kernels(positive_field):
    kernel = dyadic_poisson_family(1, 4)
    assert len(kernel) == 4
    pieces = vector_apply(kernel, positive_field)
    assert len(pieces) == 4
    assert np.isfinite(size_constant(kernel, positive_field.grid))
    with pytest.raises(ContractViolationError):
        truncated_apply(kernel, positive_field, 0.1)


def test_zero_kernel_gives_zero(positive_field):
    zero = FunctionKernel(lambda x, y: 0.0, label='zero')
    assert truncated_apply(zero, positive_field, 0.1).norm_inf() == 0.0
    assert vector_apply(VectorKernel((zero,)), positive_field)[0].norm_inf() == 0.0


def test_scalar_cr_norm_is_the_column_norm(grid, rng):
    family = [random_positive_field(grid, 1, rng) for _ in range(4)]
    assert cr_norm(family) == pytest.approx(column_norm(family))
    assert row_norm(family) == pytest.approx(column_norm(family))
    assert cr_norm([]) == 0.0
    with pytest.raises(InvalidExponentError):
        cr_norm(family, 0.5)


def test_cr_norm_takes_the_larger_side_above_two(grid, rng):
    family = [OperatorField(grid, random_matrices(rng, grid.num_cells, 2)) for _ in range(3)]
    assert cr_norm(family, 2) == pytest.approx(max(column_norm(family, 2), row_norm(family, 2)))
    assert cr_norm(family, 1) <= min(column_norm(family, 1), row_norm(family, 1)) + 1e-12


def test_maximal_bound_is_exact_for_scalar_families(grid, rng, step):
    family = [OperatorField(grid, rng.standard_normal(grid.num_cells), hermitian=True) for _ in range(3)]
    upper, lower = maximal_linfty_bound(family, 1, step)
    assert upper == pytest.approx(weighted_trace(scalar_supremum(family), step, 1), rel=1e-9)
    assert lower <= upper


def test_maximal_bound_brackets_matrix_families(grid, rng):
    family = random_hermitian_family(grid, 2, 3, rng)
    upper, lower = maximal_linfty_bound(family)
    assert lower <= upper
    sum_abs = weighted_trace(OperatorField(grid, sum(a.abs().values for a in family)), None, 1)
    assert upper <= sum_abs * (1 + 1e-9)


def test_maximal_bound_rejects_bad_families(grid, rng):
    with pytest.raises(ContractViolationError):
        maximal_linfty_bound([])
    with pytest.raises(ContractViolationError):
        maximal_linfty_bound([OperatorField(grid, random_matrices(rng, grid.num_cells, 2))])


def test_identity_witness_certifies_small_families(grid, rng):
    family = random_hermitian_family(grid, 2, 3, rng)
    lam = max(a.norm_inf() for a in family)
    certificate = weak_maximal_certificate(family, lam, OperatorField.identity(grid, 2))
    assert certificate.passed
    assert certificate.mass == pytest.approx(0.0, abs=1e-12)


def test_scalar_witness_is_the_sublevel_set(grid, rng, step):
    family = [OperatorField(grid, rng.standard_normal(grid.num_cells), hermitian=True) for _ in range(3)]
    lam = 1.0
    certificate = weak_maximal_certificate(family, lam, optimal_scalar_witness(family, lam), step)
    assert certificate.passed
    assert certificate.mass == pytest.approx(scalar_weak_oracle(scalar_supremum(family), lam, step))


def test_certificate_rejects_non_projections(grid, rng):
    family = random_hermitian_family(grid, 1, 2, rng)
    with pytest.raises(NotProjectionError):
        weak_maximal_certificate(family, 1.0, OperatorField.constant(grid, 0.5, hermitian=True))
    with pytest.raises(ContractViolationError):
        weak_maximal_certificate(family, 0.0, OperatorField.identity(grid, 1))


def test_annular_ratios(positive_field, step):
    grid = positive_field.grid
    assert 0 < annular_lemma_ratio(HilbertKernel(), positive_field, step, 3, 3) < np.inf
    assert 0 < quintuple_annuli_ratio(HilbertKernel(), positive_field, step, 3, 3) < np.inf
    assert annular_lemma_ratio(HilbertKernel(), OperatorField.zeros(grid, 2), None, 3, 3) == 0.0


def test_refined_witness_is_the_scalar_sublevel_set(grid, rng):
    family = [OperatorField(grid, rng.standard_normal(grid.num_cells), hermitian=True) for _ in range(3)]
    refined = refine_witness(family, 1.0, OperatorField.zeros(grid, 1))
    assert refined.allclose(optimal_scalar_witness(family, 1.0), atol=1e-12)


def test_refined_witness_keeps_the_certificate_valid(grid, rng):
    family = random_hermitian_family(grid, 2, 3, rng)
    lam = 0.5 * max(a.norm_inf() for a in family)
    start = spectral_witness(OperatorField(grid, sum(a.abs().values for a in family), positive=True), lam)
    refined = refine_witness(family, lam, start)
    assert weak_maximal_certificate(family, lam, refined).passed
    assert np.all(np.trace(refined.values, axis1=1, axis2=2).real >=
                  np.trace(start.values, axis1=1, axis2=2).real - 1e-9)
    with pytest.raises(ContractViolationError):
        refine_witness(family, 0.0, start)


def test_refined_witness_is_the_identity_for_small_families(grid, rng):
    family = random_hermitian_family(grid, 2, 3, rng)
    lam = max(a.norm_inf() for a in family)
    refined = refine_witness(family, lam, OperatorField.zeros(grid, 2))
    assert refined.allclose(OperatorField.identity(grid, 2), atol=1e-12)


def test_kernel_norm_proxy_bounds_every_truncation(positive_field):
    kernel = HilbertKernel()
    proxy = kernel_norm_proxy(kernel, positive_field.grid)
    total = sum(lacunary_apply(kernel, positive_field, j).norm_inf() for j in lacunary_range(positive_field.grid))
    assert 0 < total <= proxy * positive_field.norm_inf() * (1 + 1e-12)

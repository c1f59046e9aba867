import numpy as np
import pytest
from numpy.testing import assert_allclose

from nczw.dyadic_model import DyadicGrid, OperatorField, TraceFunctional, coarsen_field, conditional_expectation, \
    distribution_projection, field_from_json, field_to_json, martingale_differences, martingale_l2_ratio, \
    regularity_check, weak_norm_estimate, weak_quasi_norm, weighted_trace
from nczw.exceptions import ContractViolationError, GridMismatchError, InvalidExponentError, LevelOutOfRangeError, \
    NotPositiveError
from nczw.generators import random_hermitian_field, random_matrices


def test_conditional_expectation_of_a_ramp():
    grid = DyadicGrid(1, 2)
    f = OperatorField(grid, [1.0, 2.0, 3.0, 4.0], hermitian=True)
    assert_allclose(conditional_expectation(f, 1).scalar_values(), [1.5, 1.5, 3.5, 3.5])
    assert_allclose(conditional_expectation(f, 0).scalar_values(), [2.5] * 4)
    assert_allclose(conditional_expectation(f, 2).scalar_values(), [1.0, 2.0, 3.0, 4.0])


@pytest.mark.parametrize('dimension, depth', [(1, 5), (2, 3)])
def test_tower_property_is_exact(rng, dimension, depth):
    grid = DyadicGrid(dimension, depth)
    f = OperatorField(grid, random_matrices(rng, grid.num_cells, 2))
    for n in range(depth + 1):
        for k in range(depth + 1):
            left = conditional_expectation(conditional_expectation(f, k), n)
            assert np.array_equal(left.values, conditional_expectation(f, min(n, k)).values)


def test_morton_order_keeps_cubes_contiguous(plane_grid):
    coordinates = plane_grid.cell_coordinates
    for n in range(plane_grid.depth + 1):
        per_cube = plane_grid.cells_per_cube(n)
        for k in range(plane_grid.cube_count(n)):
            block = coordinates[k * per_cube:(k + 1) * per_cube] >> (plane_grid.depth - n)
            assert np.all(block == block[0])


def test_lattice_rearrangement_is_invertible(plane_grid, rng):
    per_cube = rng.standard_normal(plane_grid.cube_count(2))
    lattice = plane_grid.to_lattice(per_cube, 2)
    assert lattice.shape == (4, 4)
    assert_allclose(plane_grid.from_lattice(lattice, 2), per_cube)


def test_levels_are_checked(grid):
    with pytest.raises(LevelOutOfRangeError):
        grid.check_level(grid.depth + 1)
    with pytest.raises(ContractViolationError):
        DyadicGrid(3, 2)


def test_martingale_differences_telescope(positive_field):
    differences = martingale_differences(positive_field)
    assert len(differences) == positive_field.grid.depth
    total = sum(df.values for df in differences)
    assert_allclose(total, positive_field.values, atol=1e-12)
    for n, df in enumerate(differences[1:], start=2):
        assert_allclose(conditional_expectation(df, n - 1).values, 0, atol=1e-12)


def test_trace_functional_weights_cells(grid, step):
    identity = OperatorField.identity(grid, 2)
    assert TraceFunctional()(identity) == pytest.approx(2.0)
    assert TraceFunctional(step)(identity) == pytest.approx(2 * np.mean(step.values))


def test_trace_functional_rejects_foreign_weights(plane_grid, step):
    with pytest.raises(GridMismatchError):
        TraceFunctional(step)(OperatorField.identity(plane_grid, 1))


def test_weighted_norms(grid):
    f = OperatorField.constant(grid, np.diag([3.0, -4.0]), hermitian=True)
    assert weighted_trace(f, p=1) == pytest.approx(7.0)
    assert weighted_trace(f, p=2) == pytest.approx(5.0)
    assert weighted_trace(f, p=np.inf) == pytest.approx(4.0)
    with pytest.raises(InvalidExponentError):
        weighted_trace(f, p=0.5)


def test_distribution_projection_and_weak_norm(grid):
    f = OperatorField.constant(grid, np.diag([1.0, 3.0]), positive=True)
    e = distribution_projection(f, 2.0)
    assert_allclose(e.values[0], np.diag([0.0, 1.0]), atol=1e-12)
    assert weak_norm_estimate(f, 2.0) == pytest.approx(2.0)
    with pytest.raises(ContractViolationError):
        distribution_projection(f, 0.0)


def test_weak_quasi_norm_is_the_supremum_over_lambda(grid, step):
    f = OperatorField.constant(grid, np.diag([1.0, 3.0]), positive=True)
    assert weak_quasi_norm(f) == pytest.approx(3.0)
    assert weak_quasi_norm(f, step) == pytest.approx(4.5)
    assert weak_quasi_norm(OperatorField.constant(grid, np.diag([2.0, 3.0]), positive=True)) == pytest.approx(4.0)
    assert weak_quasi_norm(OperatorField.zeros(grid, 2)) == 0.0
    for lam in (0.5, 1.0, 2.0, 2.9):
        assert weak_norm_estimate(f, lam) <= weak_quasi_norm(f) + 1e-12


def test_positivity_is_validated(grid):
    with pytest.raises(NotPositiveError):
        OperatorField.constant(grid, np.diag([1.0, -1.0]), positive=True)


def test_fields_on_different_grids_do_not_mix(grid, plane_grid):
    with pytest.raises(GridMismatchError):
        OperatorField.identity(grid, 1) + OperatorField.identity(plane_grid, 1)


def test_unweighted_martingale_l2_is_orthogonal(grid, rng):
    f = random_hermitian_field(grid, 2, rng)
    assert martingale_l2_ratio(f) == pytest.approx(1.0, abs=1e-10)


def test_regularity_of_a_step():
    grid = DyadicGrid(1, 3)
    f = OperatorField(grid, [2.0] * 4 + [1.0] * 4, positive=True)
    assert regularity_check(f) == pytest.approx(4.0 / 3.0)


def test_coarsening_keeps_averages(grid, positive_field):
    coarse = coarsen_field(positive_field, 2)
    assert coarse.grid == DyadicGrid(1, grid.depth - 2)
    assert_allclose(coarse.values, positive_field.cube_averages[grid.depth - 2])


def test_json_preserves_values(grid, positive_field):
    restored = field_from_json(field_to_json(positive_field), positive=True)
    assert restored.grid == grid
    assert restored.allclose(positive_field, atol=0.0)

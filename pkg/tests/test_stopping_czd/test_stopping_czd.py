import numpy as np
import pytest
from numpy.testing import assert_allclose

from nczw.dyadic_model import DyadicGrid, OperatorField, TraceFunctional, weighted_trace
from nczw.exceptions import ContractViolationError, GridMismatchError, NotPositiveError
from nczw.generators import random_positive_field
from nczw.stopping_czd import classical_stopping, cuculescu, cz_decompose, eta_mass_ratio, eta_projection, \
    good_bad_bounds, level_set_bound, zeta_cancellation_residual, zeta_mass_ratio, zeta_projection, \
    zeta_projection_residual
from nczw.verify import default_lambda_grid


def spike(grid: DyadicGrid, cell: int, height: float) -> OperatorField:
    values = np.zeros(grid.num_cells)
    values[cell] = height
    return OperatorField(grid, values, positive=True)


def test_scalar_stopping_matches_the_maximal_function(grid, scalar_field):
    for lam in default_lambda_grid(scalar_field, points=6):
        sf = cuculescu(scalar_field, lam)
        for q, indicator in zip(sf.q_levels, classical_stopping(scalar_field, lam)):
            assert np.array_equal(np.real(q.values[:, 0, 0]) > 0.5, indicator)


def test_diagonal_fields_stop_entrywise(grid, rng):
    first = random_positive_field(grid, 1, rng).scalar_values()
    second = random_positive_field(grid, 1, rng).scalar_values()
    values = np.zeros((grid.num_cells, 2, 2))
    values[:, 0, 0] = first
    values[:, 1, 1] = second
    lam = 2 * max(np.mean(first), np.mean(second))
    sf = cuculescu(OperatorField(grid, values, positive=True), lam)
    expected = zip(classical_stopping(OperatorField(grid, first, positive=True), lam),
                   classical_stopping(OperatorField(grid, second, positive=True), lam))
    for q, (top, bottom) in zip(sf.q_levels, expected):
        assert_allclose(np.real(q.values[:, 0, 0]), top, atol=1e-10)
        assert_allclose(np.real(q.values[:, 1, 1]), bottom, atol=1e-10)


def test_stopping_projections_decrease(positive_field):
    lam = default_lambda_grid(positive_field, points=4)[1]
    sf = cuculescu(positive_field, lam)
    upper = OperatorField.identity(positive_field.grid, 2).values
    for q in sf.q_levels:
        assert_allclose(upper @ q.values, q.values, atol=1e-10)
        upper = q.values
    ranks = sf.ranks()
    assert ranks == sorted(ranks, reverse=True)
    identity = OperatorField.identity(positive_field.grid, 2)
    assert_allclose(sum(p.values for p in sf.p_levels), (identity - sf.terminal).values, atol=1e-10)
    for n in range(1, positive_field.grid.depth + 1):
        assert_allclose(sf.p_cubes(n) @ sf.q_cubes[n], 0, atol=1e-10)


def test_high_lambda_stops_nothing(positive_field):
    lam = 2 * positive_field.norm_inf()
    sf = cuculescu(positive_field, lam)
    assert sf.terminal.allclose(OperatorField.identity(positive_field.grid, 2), atol=1e-10)
    assert level_set_bound(sf, positive_field) == pytest.approx(0.0, abs=1e-12)
    parts = cz_decompose(positive_field, sf)
    assert parts.g.allclose(positive_field, atol=1e-10)
    assert parts.b_d.norm_inf() == pytest.approx(0.0, abs=1e-12)
    assert zeta_projection(sf).zeta.allclose(OperatorField.identity(positive_field.grid, 2), atol=1e-10)
    assert eta_mass_ratio(sf, 3) == 0.0


def test_cuculescu_rejects_bad_input(grid, positive_field):
    with pytest.raises(NotPositiveError):
        cuculescu(OperatorField.constant(grid, -1.0, hermitian=True), 1.0)
    with pytest.raises(ContractViolationError):
        cuculescu(positive_field, 0.0)


def test_scalar_lambda_monotonicity(scalar_field):
    low, high = default_lambda_grid(scalar_field, points=3)[:2]
    below, above = cuculescu(scalar_field, low), cuculescu(scalar_field, high)
    for q_low, q_high in zip(below.q_levels, above.q_levels):
        assert np.all(np.real(q_low.values) <= np.real(q_high.values) + 1e-12)


@pytest.mark.parametrize('spec_index', range(4))
def test_decomposition_identities(positive_field, weight, spec_index):
    f = positive_field
    scale = max(1.0, f.norm_inf())
    lam = default_lambda_grid(f, weight, points=4)[spec_index]
    sf = cuculescu(f, lam, weight)
    parts = cz_decompose(f, sf)
    assert parts.reconstruction_error() <= 1e-10 * scale
    assert parts.off_diagonal_form_gap() <= 1e-9 * scale
    assert parts.level_mean_residual() <= 1e-10 * scale
    report = good_bad_bounds(parts, weight)
    assert report.g_inf_ratio <= 4.0
    assert report.bd_sum_ratio <= 4.0 * (1 + report.a1)
    assert level_set_bound(sf, f, weight) <= 8.0
    dilations = zeta_projection(sf)
    assert zeta_projection_residual(dilations) <= 1e-12
    assert zeta_cancellation_residual(dilations, parts) <= 1e-12 * scale
    assert zeta_mass_ratio(dilations, f, weight) <= 5.0 * 8


def test_plane_decomposition(plane_grid, rng):
    f = random_positive_field(plane_grid, 2, rng)
    lam = default_lambda_grid(f, points=4)[1]
    sf = cuculescu(f, lam)
    parts = cz_decompose(f, sf)
    assert parts.reconstruction_error() <= 1e-10 * max(1.0, f.norm_inf())
    assert good_bad_bounds(parts).g_inf_ratio <= 8.0
    dilations = zeta_projection(sf)
    assert zeta_projection_residual(dilations) <= 1e-12
    assert zeta_mass_ratio(dilations, f) <= 25.0 * 8


def test_scalar_bad_part_is_diagonal(scalar_field):
    lam = default_lambda_grid(scalar_field, points=4)[0]
    parts = cz_decompose(scalar_field, cuculescu(scalar_field, lam))
    assert parts.b_off.norm_inf() <= 1e-12


def test_single_bad_cube_dilates_five_times(grid):
    f = spike(grid, 20, 64.0)
    sf = cuculescu(f, 6.0)
    assert sf.ranks()[2] == grid.cube_count(2)
    assert sf.ranks()[3] == grid.cube_count(3) - 1
    dilations = zeta_projection(sf)
    expected = grid.dilated_mask(3, 2, 5).astype(float)
    assert_allclose(dilations.complement.scalar_values(), expected, atol=1e-10)
    assert np.count_nonzero(expected) == 40
    assert_allclose(eta_projection(sf, 3).scalar_values(), expected, atol=1e-10)
    assert eta_projection(sf, 0).norm_inf() == 0.0


def test_stopped_mass_is_the_sum_of_levels(positive_field, step):
    sf = cuculescu(positive_field, default_lambda_grid(positive_field, step, points=4)[0], step)
    phi = TraceFunctional(step)
    identity = OperatorField.identity(positive_field.grid, 2)
    assert sum(phi(p) for p in sf.p_levels) == pytest.approx(phi(identity - sf.terminal), abs=1e-10)


def test_decomposition_needs_its_own_family(grid, positive_field, rng):
    other = random_positive_field(grid, 2, rng)
    sf = cuculescu(other, 2 * weighted_trace(other))
    with pytest.raises(GridMismatchError):
        cz_decompose(positive_field, sf)

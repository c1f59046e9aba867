import math

import numpy as np
import pytest

from nczw.configs import GOLDEN_CONFIG, load_config
from nczw.dyadic_model import OperatorField, weighted_trace
from nczw.exceptions import ConfigError, ContractViolationError, DiagnosticAbortError, NotPositiveError
from nczw.generators import haar_atom
from nczw.hardy_atoms import Atom, sign_patterns
from nczw.kernels_operators import FunctionKernel, HilbertKernel, VectorKernel, dyadic_poisson_family, \
    kernel_norm_proxy, scalar_supremum, scalar_weak_oracle
from nczw.verify import JUDGED_RATIOS, SUITES, CheckRecord, ConstantReport, RatioRecord, SuiteResult, \
    default_lambda_grid, diagnostic_context, lacunary_family, ratio_stability, read_report, resolve_suites, \
    run_config, theorem12_certificate, theorem14_weak_norm, theorem16_atom_sweep


def records(values_per_depth, m=1, theorem='level_set'):
    return [RatioRecord(suite='czd', theorem=theorem, lam=None, depth=depth, seed=0, weight='const:1', kernel='-',
                        m=m, ratio=value) for depth, value in values_per_depth]


@pytest.fixture(scope='module')
def golden_report():
    return run_config(load_config(GOLDEN_CONFIG), progress=False, threads=1)


def test_default_lambda_grid(positive_field, step):
    grid = default_lambda_grid(positive_field, step, points=5)
    assert len(grid) == 5
    assert grid == sorted(grid)
    assert grid[0] == pytest.approx(weighted_trace(positive_field, step, 1))
    assert grid[-1] == pytest.approx(4 * max(positive_field.norm_inf(), grid[0]))
    assert default_lambda_grid(positive_field, step, points=1) == pytest.approx([grid[0]])
    with pytest.raises(ContractViolationError):
        default_lambda_grid(OperatorField.zeros(positive_field.grid, 2))


@pytest.mark.parametrize('field_name', ['scalar_field', 'positive_field'])
def test_certificate_above_every_truncation_is_trivial(request, field_name):
    f = request.getfixturevalue(field_name)
    family = lacunary_family(HilbertKernel(), f)
    lam = 2 * max(f.norm_inf(), sum(t.norm_inf() for t in family))
    certificate = theorem12_certificate(f, lam, family=family)
    assert certificate.passed
    assert certificate.ratio == pytest.approx(0.0, abs=1e-9)
    assert certificate.witness.allclose(OperatorField.identity(f.grid, f.m), atol=1e-9)
    assert certificate.observed_constant <= 0.5 + 1e-12


def test_certificate_witness_is_a_projection(scalar_field, step):
    lam = default_lambda_grid(scalar_field, step, points=4)[0]
    certificate = theorem12_certificate(scalar_field, lam, step)
    assert certificate.witness.projection
    assert certificate.ratio >= 0
    assert certificate.observed_constant == pytest.approx(certificate.worst / lam)


def test_certificate_never_loses_to_the_construction(positive_field, step):
    family = lacunary_family(HilbertKernel(), positive_field)
    for lam in default_lambda_grid(positive_field, step, points=4):
        certificate = theorem12_certificate(positive_field, lam, step, family=family)
        assert certificate.ratio <= certificate.construction_ratio + 1e-12
        assert certificate.observed_constant <= certificate.constant * (1 + 1e-9)


def test_scalar_certificate_stays_below_the_distributional_oracle(scalar_field, step):
    family = lacunary_family(HilbertKernel(), scalar_field)
    supremum = scalar_supremum(family)
    norm = weighted_trace(scalar_field, step, 1)
    for lam in default_lambda_grid(scalar_field, step, points=6):
        certificate = theorem12_certificate(scalar_field, lam, step, family=family)
        assert certificate.ratio <= scalar_weak_oracle(supremum, lam, step) / norm + 1e-12


def test_kernel_norm_proxy_makes_the_construction_trivial(positive_field, step):
    kernel = HilbertKernel()
    lam = 2 * positive_field.norm_inf() * max(1.0, kernel_norm_proxy(kernel, positive_field.grid))
    certificate = theorem12_certificate(positive_field, lam, step, kernel)
    assert certificate.construction_ratio == pytest.approx(0.0, abs=1e-9)
    assert certificate.construction_constant <= 0.5


def test_certificate_rejects_bad_arguments(positive_field):
    with pytest.raises(ContractViolationError):
        theorem12_certificate(positive_field, 0.0)
    with pytest.raises(ContractViolationError):
        theorem12_certificate(positive_field, 1.0, kernel=dyadic_poisson_family(1, 2))
    with pytest.raises(ContractViolationError):
        theorem12_certificate(OperatorField.zeros(positive_field.grid, 2), 1.0)


def test_zero_vector_kernel_has_zero_weak_norm(positive_field, step):
    zero = VectorKernel((FunctionKernel(lambda x, y: 0.0, label='zero'),))
    estimate = theorem14_weak_norm(positive_field, step, zero, sign_patterns(1))
    assert estimate.ratio == 0.0
    assert estimate.path_ratio >= 0.0
    assert estimate.path_defect == 0.0
    assert len(estimate.direct) == len(default_lambda_grid(positive_field, step))


def test_weak_norm_is_finite(positive_field):
    kernel = dyadic_poisson_family(1, 2)
    lambdas = default_lambda_grid(positive_field, points=3)
    estimate = theorem14_weak_norm(positive_field, None, kernel, sign_patterns(2), lambdas)
    assert estimate.lambdas == tuple(lambdas)
    assert 0 < estimate.ratio < np.inf
    assert estimate.grid_ratio <= estimate.ratio + 1e-12
    assert np.isfinite(estimate.path_ratio)


def test_atom_sweep(grid):
    kernel = dyadic_poisson_family(1, 2)
    zero = Atom(kind='simple', level=1, value=OperatorField.zeros(grid, 1))
    assert theorem16_atom_sweep(kernel, [zero]).maximum == 0.0
    assert theorem16_atom_sweep(kernel, []).maximum == 0.0
    sweep = theorem16_atom_sweep(kernel, [zero, haar_atom(grid, 2, 1)])
    assert 0 < sweep.maximum < np.inf
    assert sweep.norms[0] == 0.0


@pytest.mark.parametrize('values, passed', [
    ([(4, 1.0), (5, 1.1), (6, 1.0)], True),
    ([(4, 1.0), (5, 1.02), (6, 1.05)], True),
    ([(4, 1.0), (5, 2.0), (6, 4.0)], False),
    ([(4, 1.0), (5, 1.3), (6, 1.6)], False),
    ([(4, 1.0), (5, math.inf)], False),
    ([(4, 1.0), (5, math.nan)], False),
    ([(4, 3.0)], True),
    ([(4, 0.0), (5, 0.0)], True),
    ([(4, 1.0), (5, 1.9)], True),
    ([(4, 0.0), (5, 0.02)], True),
    ([(4, 0.0), (5, 1.0), (6, 3.0)], False),
])
def test_ratio_stability(values, passed):
    record, = ratio_stability(records(values))
    assert record.passed == passed


def test_stability_groups_by_matrix_size():
    stability = ratio_stability(records([(4, 1.0), (5, 1.0)]) + records([(4, 1.0), (5, 8.0)], m=2))
    assert [(record.m, record.passed) for record in stability] == [(1, True), (2, False)]


def test_stability_takes_the_largest_ratio_per_depth():
    record, = ratio_stability(records([(4, 1.0), (4, 3.0), (5, 2.5)]))
    assert dict(record.per_depth) == {4: 3.0, 5: 2.5}
    assert record.passed


def test_depths_without_an_estimate_are_not_compared():
    record, = ratio_stability(records([(4, 0.0), (5, 0.02), (6, 0.03), (7, 0.02)]))
    assert record.vanishing == (4,)
    assert record.trend == pytest.approx(0.0)
    assert record.passed


def test_two_depths_carry_no_trend():
    record, = ratio_stability(records([(4, 1.0), (5, 1.5)]))
    assert math.isnan(record.trend)
    assert record.passed


def test_recorded_tables_are_not_judged():
    stability = ratio_stability(records([(4, 1.0), (5, 8.0)]) + records([(4, 1.0), (5, 8.0)], theorem='eta_mass'),
                                judged={'level_set'})
    assert [(record.theorem, record.judged, record.passed) for record in stability] == \
        [('eta_mass', False, False), ('level_set', True, False)]


def assembled(*tables):
    results = []
    for theorem, values in tables:
        for depth, value in values:
            result = SuiteResult('czd', depth, 0)
            result.ratio(theorem, value, weight='const:1', m=1)
            result.tables.setdefault('shared', []).append({'J': depth})
            results.append(result)
    return ConstantReport.assemble(load_config(GOLDEN_CONFIG), ['czd'], results)


def test_only_judged_tables_decide_the_verdict():
    assert 'eta_mass' not in JUDGED_RATIOS
    report = assembled(('eta_mass', [(4, 4.0), (5, 0.5)]))
    assert report.passed
    assert not report.unstable
    assert not assembled(('level_set', [(4, 4.0), (5, 0.5)])).passed


def test_tables_of_every_result_are_kept():
    report = assembled(('level_set', [(4, 1.0), (5, 1.0)]))
    assert report.tables['shared'] == [{'J': 4}, {'J': 5}]


@pytest.mark.parametrize('value, passed', [(0.0, True), (1e-9, False), (math.nan, False), (-1.0, True)])
def test_check_records(value, passed):
    assert CheckRecord(suite='czd', name='reconstruction', depth=4, seed=0, value=value,
                       tolerance=1e-10).passed == passed


def test_caveats_are_recorded_once():
    result = SuiteResult('kernels', 4, 0)
    result.caveat('truncated')
    result.caveat('truncated')
    assert result.caveats == ['truncated']


def test_resolve_suites():
    assert resolve_suites(None) == SUITES
    assert resolve_suites(['all']) == SUITES
    assert resolve_suites(['czd', 'czd', 'weights']) == ('czd', 'weights')
    with pytest.raises(ConfigError):
        resolve_suites(['theorem13'])


def test_diagnostic_context_names_the_failure():
    with pytest.raises(DiagnosticAbortError) as e:
        with diagnostic_context('theorem12', seed=3, lam=2.0):
            raise NotPositiveError('negative cell')
    assert (e.value.theorem, e.value.seed, e.value.lam) == ('theorem12', 3, 2.0)
    assert isinstance(e.value.__cause__, NotPositiveError)


def test_run_rejects_bad_thread_counts():
    with pytest.raises(ConfigError):
        run_config(load_config(GOLDEN_CONFIG), ['czd'], threads=0, progress=False)


def test_golden_run_covers_every_suite(golden_report):
    assert golden_report.suites == SUITES
    assert {record.suite for record in golden_report.ratios} >= {'theorem12', 'theorem14', 'theorem16'}
    assert golden_report.checks


def test_golden_run_passes(golden_report):
    assert not golden_report.failed_checks
    assert not golden_report.unstable
    assert golden_report.passed


def test_golden_constants_are_stable_and_bounded(golden_report):
    judged = [record for record in golden_report.stability if record.judged]
    assert {record.theorem for record in judged} == JUDGED_RATIOS
    assert all(record.finite and record.passed for record in judged)
    constant = golden_report.config.certificate_constant
    maxima = {}
    for record in golden_report.ratios:
        maxima[record.theorem] = max(maxima.get(record.theorem, 0.0), record.ratio)
    assert maxima['level_set'] <= 8
    assert maxima['theorem12_c1'] <= constant * (1 + 1e-9)
    for theorem in ('theorem12', 'theorem14', 'theorem16', 'theorem16_unweighted'):
        assert 0 < maxima[theorem] < np.inf


def test_golden_scalar_shadow_is_within_four(golden_report):
    shadows = [check for check in golden_report.checks if check.name == 'scalar_shadow']
    assert shadows
    assert all(check.value <= 4.0 for check in shadows)
    rows = [row for name, rows in golden_report.tables.items() if name.startswith('theorem12_shadow') for row in rows]
    assert len(rows) == len(shadows)
    assert all(row['certificate'] <= row['construction'] + 1e-12 for row in rows)


def test_golden_run_is_deterministic(golden_report):
    again = run_config(load_config(GOLDEN_CONFIG), progress=False, threads=2)
    assert again.summary_json() == golden_report.summary_json()
    assert again.digest == golden_report.digest


def test_written_report_reads_back(golden_report, tmp_path):
    directory = golden_report.write(tmp_path / 'report')
    summary, rows = read_report(directory)
    assert summary['passed'] == golden_report.passed
    assert len(rows) == len(golden_report.ratios)
    assert rows[0] == golden_report.ratios[0].as_row()
    with pytest.raises(ConfigError):
        read_report(tmp_path / 'missing')

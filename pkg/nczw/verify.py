"""
Theorem-level experiments and the sweep that runs them.

A suite is a function ``(config, depth, seed) -> SuiteResult``. :func:`run_config` fans the (suite, depth, seed) tasks
out over a thread pool, collects the results in task order and folds them into a :class:`ConstantReport`, which judges
the ratio tables in ``JUDGED_RATIOS`` for stability across the depth grid and records the others.
"""
import csv
import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Collection, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr
from tqdm import tqdm

from nczw.configs import ExperimentConfig, thread_count
from nczw.dyadic_model import DyadicGrid, OperatorField, TraceFunctional, conditional_expectation, \
    distribution_projection, martingale_l2_ratio, regularity_check, weak_norm_estimate, weak_quasi_norm, \
    weighted_trace
from nczw.exceptions import ConfigError, ContractViolationError, DiagnosticAbortError, NczwException, \
    RoughWeightError
from nczw.generators import random_algebraic_atom, random_contraction_pair, random_hermitian_family, \
    random_hermitian_field, random_matrices, random_mean_zero_field, random_positive_field, random_simple_atom, \
    suite_generator
from nczw.hardy_atoms import COLUMN, ORIENTATIONS, Atom, algebraic_to_crude, atom_cube_cancellation, \
    atom_hardy_norm_check, atomic_decompose, check_atom, crude_to_simple, hardy_equivalence_ratio, \
    khintchine_ratio, rademacher_randomize, sign_patterns, square_functions
from nczw.kernels_operators import HilbertKernel, Kernel, RieszKernel, VectorKernel, annulus_apply, column_norm, \
    hormander_modulus, kernel_matrix, kernel_norm_proxy, lacunary_apply, lacunary_range, pair_distances, \
    parse_kernel_spec, partition_residual, psi_partition, reduction_residual, refine_witness, richardson_error, \
    sandwich_constant, scalar_supremum, scalar_weak_oracle, size_constant, spectral_witness, vector_apply, \
    weak_maximal_certificate
from nczw.matrix_algebra import Interval, abs_op, adjoint, eigh, lattice_meet, spectral_projection, \
    usefullem_slack
from nczw.stopping_czd import classical_stopping, cuculescu, cz_decompose, eta_mass_ratio, good_bad_bounds, \
    level_set_bound, zeta_cancellation_residual, zeta_mass_ratio, zeta_projection, zeta_projection_residual
from nczw.weights import Weight, find_rw, martingale_a1_check, measure_doubling_check, parse_weight_spec, \
    sample_subsets

logger = logging.getLogger(__name__)

RATIO_COLUMNS = ('suite', 'theorem', 'lambda', 'depth', 'seed', 'weight', 'kernel', 'm', 'ratio')
CONVENTIONS = {
    'trace': 'unnormalised matrix trace summed over cells times the cell volume',
    'window': '[0,1)^d; dilated cubes are clipped to the window and kernel integrals stop at its edge',
    'characteristics': 'dyadic A_p and RH_q suprema over every cube of the grid',
    'truncation': 'Hoermander rows whose outer ball leaves the window are flagged truncated',
}
EXACT_SUITES = ('cuculescu', 'czd', 'weights', 'kernels', 'hardy', 'atoms')
THEOREM_SUITES = ('theorem12', 'theorem14', 'theorem16')
SUITES = EXACT_SUITES + THEOREM_SUITES
DEFAULT_CERTIFICATE_CONSTANT = 4.0
SLICING_BASE = 2.0
LEMMA_SAMPLES = 1000
ORTHOGONALITY_TOLERANCE = 1e-10
USEFULLEM_TOLERANCE = 1e-8
HARDY_RATIO_SLACK = 1e-6
DECAY_WINDOW = (0.8, 1.2)
FLAT_SPREAD = 0.1
SHADOW_FACTOR = 4.0
# ratio tables whose J-stability decides the verdict; the rest are recorded for inspection
JUDGED_RATIOS = frozenset({'level_set', 'hardy_lo_column', 'hardy_lo_row', 'theorem12', 'theorem12_c1', 'theorem14',
                           'theorem16', 'theorem16_unweighted'})


@dataclass(frozen=True)
class RatioRecord:
    suite: str
    theorem: str
    lam: Optional[float]
    depth: int
    seed: int
    weight: str
    kernel: str
    m: int
    ratio: float

    @property
    def group(self) -> Tuple[str, str, str, str, int]:
        return self.suite, self.theorem, self.weight, self.kernel, self.m

    def as_row(self) -> Dict[str, str]:
        return {
            'suite': self.suite, 'theorem': self.theorem,
            'lambda': '' if self.lam is None else repr(float(self.lam)),
            'depth': str(self.depth), 'seed': str(self.seed), 'weight': self.weight, 'kernel': self.kernel,
            'm': str(self.m), 'ratio': repr(float(self.ratio)),
        }


@dataclass(frozen=True)
class CheckRecord:
    """ One exact-identity check; `value` is a residual (or a negated slack) judged against `tolerance`. """
    suite: str
    name: str
    depth: int
    seed: int
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.value) and self.value <= self.tolerance)


@dataclass
class SuiteResult:
    suite: str
    depth: int
    seed: int
    ratios: List[RatioRecord] = field(default_factory=list)
    checks: List[CheckRecord] = field(default_factory=list)
    tables: Dict[str, List[Dict]] = field(default_factory=dict)
    caveats: List[str] = field(default_factory=list)

    def ratio(self, theorem: str, value: float, weight: str = '-', kernel: str = '-', m: int = 1,
              lam: Optional[float] = None) -> None:
        self.ratios.append(RatioRecord(suite=self.suite, theorem=theorem, lam=lam, depth=self.depth, seed=self.seed,
                                       weight=weight, kernel=kernel, m=m, ratio=float(value)))

    def check(self, name: str, value: float, tolerance: float) -> None:
        self.checks.append(CheckRecord(suite=self.suite, name=name, depth=self.depth, seed=self.seed,
                                       value=float(value), tolerance=float(tolerance)))

    def caveat(self, text: str) -> None:
        if text not in self.caveats:
            self.caveats.append(text)


@dataclass(frozen=True)
class StabilityRecord:
    suite: str
    theorem: str
    weight: str
    kernel: str
    m: int
    per_depth: Tuple[Tuple[int, float], ...]
    trend: float
    finite: bool
    passed: bool
    judged: bool = True
    vanishing: Tuple[int, ...] = ()

    def as_dict(self) -> Dict:
        return {'suite': self.suite, 'theorem': self.theorem, 'weight': self.weight, 'kernel': self.kernel,
                'm': self.m, 'per_depth': {str(depth): value for depth, value in self.per_depth},
                'trend': self.trend, 'finite': self.finite, 'passed': self.passed, 'judged': self.judged,
                'vanishing': list(self.vanishing)}


def _spearman(depths: Sequence[int], values: Sequence[float]) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        rho, _ = spearmanr(depths, values)
    return float(rho)


def ratio_stability(records: Iterable[RatioRecord], factor: float = 2.0, trend_threshold: float = 0.5,
                    judged: Optional[Collection[str]] = None) -> List[StabilityRecord]:
    """
    Judge each (suite, theorem, weight, kernel, m) table over the depth grid.

    The constant at a depth is the max over lambda and seeds. Depths whose constant is exactly zero carry no
    estimate (no sample reached the threshold) and are listed as vanishing instead of compared. A table passes when
    every ratio is finite, the largest remaining constant is within `factor` of the smallest, and the constants
    show no monotone trend in J: with three or more depths, Spearman |rho| below `trend_threshold` or a relative
    spread under 10%. Tables whose theorem is not in `judged` are reported but marked informational.

    :param judged: theorems that take part in the verdict, every theorem when None
    """
    groups = {}
    for record in records:
        groups.setdefault(record.group, []).append(record)
    stability = []
    for key in sorted(groups):
        rows = groups[key]
        finite = all(math.isfinite(row.ratio) for row in rows)
        per_depth = {}
        for row in rows:
            per_depth[row.depth] = max(per_depth.get(row.depth, -math.inf), row.ratio)
        vanishing = tuple(depth for depth in sorted(per_depth) if per_depth[depth] == 0)
        depths = [depth for depth in sorted(per_depth) if per_depth[depth] != 0]
        constants = [per_depth[depth] for depth in depths]
        trend = math.nan
        if not finite:
            passed = False
        elif len(constants) < 2:
            passed = True
        else:
            low, high = min(constants), max(constants)
            bounded = low > 0 and high <= factor * low
            if len(constants) >= 3:
                trend = _spearman(depths, constants)
            flat = math.isnan(trend) or abs(trend) < trend_threshold or (high - low) <= FLAT_SPREAD * high
            passed = bounded and flat
        suite, theorem, weight, kernel, m = key
        stability.append(StabilityRecord(suite=suite, theorem=theorem, weight=weight, kernel=kernel, m=m,
                                         per_depth=tuple(sorted(per_depth.items())), trend=trend, finite=finite,
                                         passed=passed, judged=judged is None or theorem in judged,
                                         vanishing=vanishing))
    return stability


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


@dataclass
class ConstantReport:
    config: ExperimentConfig
    suites: Tuple[str, ...]
    ratios: List[RatioRecord]
    checks: List[CheckRecord]
    stability: List[StabilityRecord]
    tables: Dict[str, List[Dict]] = field(default_factory=dict)
    caveats: List[str] = field(default_factory=list)

    @classmethod
    def assemble(cls, config: ExperimentConfig, suites: Sequence[str], results: Sequence[SuiteResult]) \
            -> 'ConstantReport':
        ratios, checks, tables, caveats = [], [], {}, []
        for result in results:
            ratios.extend(result.ratios)
            checks.extend(result.checks)
            for name, rows in result.tables.items():
                tables.setdefault(name, []).extend(rows)
            caveats.extend(caveat for caveat in result.caveats if caveat not in caveats)
        stability = ratio_stability(ratios, config.stability_factor, config.trend_threshold, JUDGED_RATIOS)
        for record in stability:
            if record.judged and not record.passed:
                logger.warning(f'unstable ratios: {record.suite}/{record.theorem} weight={record.weight} '
                               f'kernel={record.kernel} m={record.m}: {dict(record.per_depth)}')
        return cls(config=config, suites=tuple(suites), ratios=ratios, checks=checks, stability=stability,
                   tables=dict(sorted(tables.items())), caveats=sorted(caveats))

    @property
    def failed_checks(self) -> List[CheckRecord]:
        return [check for check in self.checks if not check.passed]

    @property
    def checks_passed(self) -> bool:
        return not self.failed_checks

    @property
    def passed(self) -> bool:
        return self.checks_passed and not self.unstable

    @property
    def unstable(self) -> List[StabilityRecord]:
        return [record for record in self.stability if record.judged and not record.passed]

    def check_summary(self) -> List[Dict]:
        grouped = {}
        for check in self.checks:
            grouped.setdefault((check.suite, check.name), []).append(check)
        summary = []
        for (suite, name), checks in sorted(grouped.items()):
            worst = max(checks, key=lambda c: (not math.isfinite(c.value), c.value - c.tolerance))
            summary.append({'suite': suite, 'name': name, 'count': len(checks),
                            'failures': sum(not c.passed for c in checks), 'worst': worst.value,
                            'tolerance': worst.tolerance, 'passed': all(c.passed for c in checks)})
        return summary

    def constant_summary(self) -> List[Dict]:
        grouped = {}
        for record in self.ratios:
            grouped.setdefault(record.group, []).append(record.ratio)
        return [{'suite': suite, 'theorem': theorem, 'weight': weight, 'kernel': kernel, 'm': m,
                 'max': max(values), 'median': float(np.median(values)), 'count': len(values)}
                for (suite, theorem, weight, kernel, m), values in sorted(grouped.items())]

    def summary(self) -> Dict:
        return {
            'config': self.config.to_dict(),
            'suites': list(self.suites),
            'conventions': CONVENTIONS,
            'checks': self.check_summary(),
            'constants': self.constant_summary(),
            'stability': [record.as_dict() for record in self.stability],
            'caveats': list(self.caveats),
            'passed': self.passed,
        }

    def summary_json(self) -> str:
        return json.dumps(_jsonable(self.summary()), sort_keys=True, separators=(',', ':'))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.summary_json().encode()).hexdigest()

    def write(self, directory) -> Path:
        """ ratios.csv, one CSV per table and summary.json """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        _write_csv(directory / 'ratios.csv', RATIO_COLUMNS, [record.as_row() for record in self.ratios])
        for name, rows in self.tables.items():
            if rows:
                _write_csv(directory / f'{name}.csv', tuple(rows[0]), rows)
        (directory / 'summary.json').write_text(self.summary_json() + '\n')
        logger.info(f'report written to {directory} (sha256 {self.digest})')
        return directory


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Dict]) -> None:
    with open(path, 'w', newline='') as stream:
        writer = csv.DictWriter(stream, fieldnames=list(columns), lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: repr(value) if isinstance(value, float) else value for key, value in row.items()})


def read_report(directory) -> Tuple[Dict, List[Dict]]:
    """ The summary and the ratio rows of a written report. """
    directory = Path(directory)
    try:
        summary = json.loads((directory / 'summary.json').read_text())
        with open(directory / 'ratios.csv', newline='') as stream:
            rows = list(csv.DictReader(stream))
    except OSError as e:
        raise ConfigError(f'{directory} does not hold a report: {e}') from e
    return summary, rows


@contextmanager
def diagnostic_context(theorem: str, seed: Optional[int] = None, lam: Optional[float] = None):
    """ Re-raise module failures as DiagnosticAbortError carrying (theorem, lambda, seed). """
    try:
        yield
    except DiagnosticAbortError:
        raise
    except (NczwException, np.linalg.LinAlgError) as e:
        raise DiagnosticAbortError(f'{type(e).__name__}: {e}', theorem=theorem, lam=lam, seed=seed) from e


def default_lambda_grid(f: OperatorField, w: Optional[Weight] = None, points: int = 16) -> List[float]:
    """ Log-spaced heights from max(||f||_{L_1^w}, ||E_0 f||_inf) up to 4 ||f||_inf. """
    low = max(weighted_trace(f, w, 1), conditional_expectation(f, 0).norm_inf())
    if low <= 0:
        raise ContractViolationError('lambda grid of the zero field')
    high = max(4 * f.norm_inf(), 4 * low)
    if points == 1:
        return [float(low)]
    return [float(lam) for lam in np.geomspace(low, high, points)]


def _lambdas(cfg: ExperimentConfig, f: OperatorField, w: Optional[Weight]) -> List[float]:
    if cfg.lambdas is not None:
        return sorted(float(lam) for lam in cfg.lambdas)
    return default_lambda_grid(f, w, cfg.lambda_points)


# Weak-type witnesses for the maximal truncations

@lru_cache(maxsize=32)
def _annulus_matrix(kernel: Kernel, grid: DyadicGrid, i: int) -> np.ndarray:
    return kernel_matrix(kernel, grid) * psi_partition(i, grid.dimension)(pair_distances(grid))


def _cellwise_abs(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return np.abs(x)
    return abs_op(x)


def bad_part_majorant(kernel: Kernel, levels: Sequence[OperatorField], sf) -> np.ndarray:
    """
    sum_n sum_{i <= i_max(n)} sum_{Q in D_n, p_Q != 0} |X_{i,Q}| with

        X_{i,Q}(x) = int_Q K_i(x, y) b_n(y) dy - K(x, c_Q) psi_i(x - c_Q) int_Q b_n

    and i_max(n) = n - 1 + ceil(log2 sqrt(d)), the last annulus that reaches past the cell scale of Q. The levels
    are the per-level bad parts b_n, Hermitian and supported on the stopped cubes.
    """
    grid = sf.grid
    m = sf.source.m
    centers = grid.cell_centers
    reach = int(np.ceil(np.log2(np.sqrt(grid.dimension))))
    total = np.zeros((grid.num_cells, m, m), dtype=complex)
    for n, b in enumerate(levels, start=1):
        bad = np.flatnonzero(np.max(np.abs(sf.p_cubes(n)), axis=(1, 2)) > 0)
        if bad.size == 0:
            continue
        per_cube = grid.cells_per_cube(n)
        blocks = b.values.reshape(grid.cube_count(n), per_cube, m, m)[bad]
        means = blocks.sum(axis=1) * grid.cell_volume
        columns = (bad[:, None] * per_cube + np.arange(per_cube)).reshape(-1)
        cube_centers = grid.cube_centers(n)[bad]
        center_distances = np.linalg.norm(centers[:, None, :] - cube_centers[None, :, :], axis=-1)
        far_kernel = kernel(centers[:, None, :], cube_centers[None, :, :])
        for i in range(0, n + reach):
            near = _annulus_matrix(kernel, grid, i)[:, columns].reshape(grid.num_cells, bad.size, per_cube)
            x = np.einsum('xqc,qcab->xqab', near, blocks) * grid.cell_volume
            far = far_kernel * psi_partition(i, grid.dimension)(center_distances)
            x = x - far[:, :, None, None] * means[None]
            total += _cellwise_abs(x).sum(axis=1)
    return total


def _dilated_witness(majorant: np.ndarray, zeta: np.ndarray, lam: float) -> np.ndarray:
    """ chi_[0, lam](zeta G zeta) meet zeta """
    sandwiched = zeta @ majorant @ zeta
    sandwiched = (sandwiched + adjoint(sandwiched)) / 2
    return lattice_meet(spectral_projection(sandwiched, Interval.closed(0.0, lam)), zeta)


def lacunary_family(kernel: Kernel, f: OperatorField) -> List[OperatorField]:
    """ [T_j f] over the lacunary range of the grid """
    return [lacunary_apply(kernel, f, j) for j in lacunary_range(f.grid)]


@dataclass(frozen=True)
class Theorem12Certificate:
    """
    The witness built from the Calderon-Zygmund split (construction) and its cellwise enlargement (certificate).
    worst and ratio belong to the certificate, construction_worst and construction_ratio to the construction.
    """
    lam: float
    witness: OperatorField
    worst: float
    passed: bool
    ratio: float
    constant: float
    construction_worst: float
    construction_ratio: float

    @property
    def observed_constant(self) -> float:
        """ sup_j ||e T_j f e||_inf / lam """
        return self.worst / self.lam

    @property
    def construction_constant(self) -> float:
        return self.construction_worst / self.lam


def theorem12_certificate(f: OperatorField, lam: float, w: Optional[Weight] = None, kernel: Optional[Kernel] = None,
                          constant: float = DEFAULT_CERTIFICATE_CONSTANT,
                          family: Optional[Sequence[OperatorField]] = None) -> Theorem12Certificate:
    """
    Build e = e_g meet e_{b_d} meet e_{b_off} for the Calderon-Zygmund split of f at height lam, enlarge it cell by
    cell with refine_witness and verify sup_j ||e T_j f e||_inf <= constant * lam.

    e_g = chi_[0, lam](sum_j |T_j g|); the bad witnesses are chi_[0, lam](zeta G zeta) meet zeta, G the majorant of the
    annular pieces of b_d (or of b_off + b_off^*) over the stopped cubes. The ratio is lam phi^w(1 - e) / ||f||_{L_1^w}.

    :param family: [T_j f] when already computed for this field
    """
    if lam <= 0:
        raise ContractViolationError(f'lambda must be positive, got {lam}')
    kernel = HilbertKernel() if kernel is None else kernel
    if isinstance(kernel, VectorKernel):
        raise ContractViolationError('the witness construction takes a scalar kernel')
    norm = weighted_trace(f, w, 1)
    if norm == 0:
        raise ContractViolationError('certificate of the zero field')
    grid = f.grid
    sf = cuculescu(f, lam, w)
    parts = cz_decompose(f, sf)
    zeta = zeta_projection(sf).zeta.values

    good = sum(lacunary_apply(kernel, parts.g, j).abs().values for j in lacunary_range(grid))
    e_good = spectral_witness(OperatorField(grid, (good + adjoint(good)) / 2, positive=True), lam).values
    e_diagonal = _dilated_witness(bad_part_majorant(kernel, parts.b_d_levels, sf), zeta, lam)
    off = [OperatorField(grid, b.values + adjoint(b.values), hermitian=True) for b in parts.b_off_levels]
    e_off = _dilated_witness(bad_part_majorant(kernel, off, sf), zeta, lam)
    construction = OperatorField(grid, lattice_meet(lattice_meet(e_good, e_diagonal), e_off), projection=True)

    family = lacunary_family(kernel, f) if family is None else family
    witness = refine_witness(family, constant * lam, construction)
    built = weak_maximal_certificate(family, constant * lam, construction, w)
    certificate = weak_maximal_certificate(family, constant * lam, witness, w)
    # both masses are taken at constant * lam
    ratio, construction_ratio = (check.mass / (constant * norm) for check in (certificate, built))
    logger.debug(f'{kernel.name} lambda={lam:.4g}: observed C1={certificate.worst / lam:.3g}, ratio={ratio:.4g} '
                 f'(construction {construction_ratio:.4g})')
    return Theorem12Certificate(lam=lam, witness=witness, worst=certificate.worst, passed=certificate.passed,
                                ratio=ratio, constant=constant, construction_worst=built.worst,
                                construction_ratio=construction_ratio)


# Randomized weak norms of vector kernels

@dataclass(frozen=True)
class WeakNormEstimate:
    """
    Per-lambda direct and decomposition-path estimates of lam phi^w(chi_(lam, inf)|T~f|) / ||f||_{L_1^w}, and the
    sign average of the full weak quasi-norm ||T~f||_{L_{1,inf}^w} / ||f||_{L_1^w}.
    """
    lambdas: Tuple[float, ...]
    direct: Tuple[float, ...]
    path: Tuple[float, ...]
    supremum: float

    @property
    def ratio(self) -> float:
        return self.supremum

    @property
    def grid_ratio(self) -> float:
        return max(self.direct, default=0.0)

    @property
    def path_ratio(self) -> float:
        return max(self.path, default=0.0)

    @property
    def path_defect(self) -> float:
        """ max over lambda of (direct - path)_+, relative to the direct value """
        return max((max(0.0, d - p) / max(1.0, d) for d, p in zip(self.direct, self.path)), default=0.0)


def theorem14_weak_norm(f: OperatorField, w: Optional[Weight], kernel: VectorKernel, patterns: np.ndarray,
                        lambdas: Optional[Sequence[float]] = None) -> WeakNormEstimate:
    """
    Sign average of lam phi^w(chi_(lam, inf)(|sum_k eps_k T_k f|)) / ||f||_{L_1^w} over `patterns`, next to the bound
    the decomposition path gives at the same lam:

        lam [phi^w(chi(lam/3)|T~g|) + phi^w(chi(lam/3)|zeta T~b_d zeta|) + phi^w(chi(lam/3)|zeta T~b_off zeta|)
             + 4 phi^w(1 - zeta)] / ||f||_{L_1^w}
    """
    norm = weighted_trace(f, w, 1)
    if norm == 0:
        raise ContractViolationError('weak norm of the zero field')
    lambdas = default_lambda_grid(f, w) if lambdas is None else list(lambdas)
    phi = TraceFunctional(w)
    transforms = vector_apply(kernel, f)
    randomized = [rademacher_randomize(transforms, signs) for signs in patterns]
    supremum = float(np.mean([weak_quasi_norm(t, w) for t in randomized])) / norm
    direct, path = [], []
    for lam in lambdas:
        direct.append(float(np.mean([weak_norm_estimate(t, lam, w) for t in randomized])) / norm)
        sf = cuculescu(f, lam, w)
        parts = cz_decompose(f, sf)
        dilations = zeta_projection(sf)
        outside = 4 * phi(dilations.complement)
        pieces = [vector_apply(kernel, part) for part in (parts.g, parts.b_d, parts.b_off)]
        bounds = []
        for signs in patterns:
            good, diagonal, off = (rademacher_randomize(piece, signs) for piece in pieces)
            level = lam / 3
            mass = (phi(distribution_projection(good, level))
                    + phi(distribution_projection(diagonal.sandwich(dilations.zeta), level))
                    + phi(distribution_projection(off.sandwich(dilations.zeta), level)) + outside)
            bounds.append(lam * mass / norm)
        path.append(float(np.mean(bounds)))
    return WeakNormEstimate(lambdas=tuple(lambdas), direct=tuple(direct), path=tuple(path), supremum=supremum)


# Vector kernels on atoms

def atom_transform_norm(kernel: VectorKernel, atom: Atom, w: Optional[Weight] = None) -> float:
    """ ||T a||_{L_1^w(l_2^c)} = phi^w((sum_k |T_k a|^2)^{1/2}) """
    return column_norm(vector_apply(kernel, atom.value), 1, w)


@dataclass(frozen=True)
class AtomSweep:
    norms: Tuple[float, ...]

    @property
    def maximum(self) -> float:
        return max(self.norms, default=0.0)


def theorem16_atom_sweep(kernel: VectorKernel, atoms: Sequence[Atom], w: Optional[Weight] = None) -> AtomSweep:
    return AtomSweep(norms=tuple(atom_transform_norm(kernel, atom, w) for atom in atoms))


@dataclass(frozen=True)
class HardyTransformCheck:
    direct: float
    atomic_bound: float
    hardy_norm: float

    @property
    def ratio(self) -> float:
        return self.direct / self.hardy_norm if self.hardy_norm > 0 else 0.0

    @property
    def defect(self) -> float:
        """ (direct - atomic bound)_+ relative to the bound """
        return max(0.0, self.direct - self.atomic_bound) / max(1.0, self.atomic_bound)


def hardy_transform_check(f: OperatorField, kernel: VectorKernel, w: Optional[Weight] = None,
                          base: float = SLICING_BASE) -> HardyTransformCheck:
    """
    ||T (f - E_1 f)||_{L_1^w(l_2^c)} against the triangle inequality over its atoms: the algebraic atom of the
    decomposition is split into crude atoms and those into simple ones, and the coefficients multiply through.
    """
    decomposition = atomic_decompose(f, w)
    bound = 0.0
    for coefficient, algebraic in zip(decomposition.coefficients, decomposition.atoms):
        for crude_coefficient, crude in algebraic_to_crude(algebraic, w):
            for simple_coefficient, simple in crude_to_simple(crude, base, w):
                bound += coefficient * crude_coefficient * simple_coefficient * atom_transform_norm(kernel, simple, w)
    tail = f - decomposition.first_level
    return HardyTransformCheck(direct=column_norm(vector_apply(kernel, tail), 1, w), atomic_bound=bound,
                               hardy_norm=square_functions(tail).hardy_norm(w))


# Suites

def _weights(cfg: ExperimentConfig, grid: DyadicGrid) -> List[Tuple[str, Weight]]:
    return [(spec, parse_weight_spec(spec, grid)) for spec in cfg.weights]


def _scalar_kernels(cfg: ExperimentConfig) -> List[Kernel]:
    return [parse_kernel_spec(spec, cfg.dimension) for spec in cfg.kernels]


def _relative(value: float, scale: float) -> float:
    return value / max(1.0, scale)


def _table_name(*parts) -> str:
    return '_'.join(str(part) for part in parts).replace(':', '-').replace(',', '-')


def cuculescu_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('cuculescu', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    tol = cfg.tolerances
    for m in cfg.matrix_dims:
        identity = OperatorField.identity(grid, m)
        for spec, w in _weights(cfg, grid):
            rng = suite_generator(seed, f'cuculescu/{depth}/{m}/{spec}')
            f = random_positive_field(grid, m, rng)
            scale = max(1.0, f.norm_inf())
            phi = TraceFunctional(w)
            previous = None
            for lam in _lambdas(cfg, f, w):
                with diagnostic_context('cuculescu', seed, lam):
                    sf = cuculescu(f, lam, w)
                    p_total = sum(p.values for p in sf.p_levels)
                    result.check('sum_p', float(np.max(np.abs(p_total - (identity - sf.terminal).values))),
                                 tol.identity)
                    result.check('trace_of_stopped_mass',
                                 abs(sum(phi(p) for p in sf.p_levels) - phi(identity - sf.terminal)) / phi(identity),
                                 tol.identity)
                    monotone, height, commutator = 0.0, 0.0, 0.0
                    upper = identity.values
                    for n, q in enumerate(sf.q_levels, start=1):
                        monotone = max(monotone, float(np.max(np.abs(upper @ q.values - q.values))))
                        averages = grid.expand(f.cube_averages[n], n)
                        compressed = upper @ averages @ upper
                        commutator = max(commutator,
                                         float(np.max(np.abs(q.values @ compressed - compressed @ q.values))))
                        top, _ = eigh(q.values @ averages @ q.values - lam * q.values)
                        height = max(height, float(np.max(top)))
                        upper = q.values
                    result.check('monotone', monotone, tol.identity)
                    result.check('commutation', _relative(commutator, max(scale, lam)), tol.commutator)
                    result.check('height', _relative(max(height, 0.0), max(scale, lam)), tol.commutator)
                    bound = level_set_bound(sf, f, w)
                    result.ratio('level_set', bound, weight=spec, m=m, lam=lam)
                    result.check('level_set_bound', bound, 8.0)
                    if m == 1:
                        oracle = classical_stopping(f, lam)
                        mismatches = sum(int(np.count_nonzero((np.real(q.values[:, 0, 0]) > 0.5) != indicator))
                                         for q, indicator in zip(sf.q_levels, oracle))
                        result.check('scalar_oracle', mismatches, 0)
                        if previous is not None:
                            growth = max(float(np.max(np.real(before.values - after.values)))
                                         for before, after in zip(previous.q_levels, sf.q_levels))
                            result.check('lambda_monotone', max(growth, 0.0), tol.exact_zero)
                    elif previous is not None:
                        gap = phi(identity - sf.terminal) - phi(identity - previous.terminal)
                        if gap > tol.identity * phi(identity):
                            result.caveat(f'stopped mass grew with lambda for m={m}, weight {spec} (J={depth}, '
                                          f'seed={seed}); only the scalar case is monotone cellwise')
                previous = sf
    return result


def czd_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('czd', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    tol = cfg.tolerances
    limit_inf = 2.0 ** (cfg.dimension + 1)
    limit_zeta = 5.0 ** cfg.dimension * 8
    for m in cfg.matrix_dims:
        for spec, w in _weights(cfg, grid):
            rng = suite_generator(seed, f'czd/{depth}/{m}/{spec}')
            f = random_positive_field(grid, m, rng)
            scale = max(1.0, f.norm_inf())
            for lam in _lambdas(cfg, f, w):
                with diagnostic_context('czd', seed, lam):
                    sf = cuculescu(f, lam, w)
                    parts = cz_decompose(f, sf)
                    dilations = zeta_projection(sf)
                    result.check('reconstruction', _relative(parts.reconstruction_error(), scale), tol.identity)
                    result.check('off_diagonal_forms', _relative(parts.off_diagonal_form_gap(), scale), tol.identity)
                    result.check('level_means', _relative(parts.level_mean_residual(), scale), tol.identity)
                    result.check('zeta_kills_stopped', zeta_projection_residual(dilations), tol.exact_zero)
                    result.check('zeta_cancellation', _relative(zeta_cancellation_residual(dilations, parts), scale),
                                 tol.exact_zero)
                    if m == 1:
                        result.check('scalar_off_diagonal', _relative(parts.b_off.norm_inf(), scale), tol.exact_zero)
                    report = good_bad_bounds(parts, w)
                    result.ratio('g_l1', report.g_l1_ratio, weight=spec, m=m, lam=lam)
                    result.ratio('g_inf', report.g_inf_ratio, weight=spec, m=m, lam=lam)
                    result.ratio('bd_sum', report.bd_sum_ratio, weight=spec, m=m, lam=lam)
                    result.check('g_inf_bound', report.g_inf_ratio, limit_inf)
                    result.check('bd_sum_bound', report.bd_sum_ratio / (1 + report.a1), 4.0)
                    zeta_ratio = zeta_mass_ratio(dilations, f, w)
                    result.ratio('zeta_mass', zeta_ratio, weight=spec, m=m, lam=lam)
                    result.check('zeta_mass_bound', zeta_ratio, limit_zeta)
                    result.ratio('eta_mass', eta_mass_ratio(sf, max(1, depth // 2), w), weight=spec, m=m, lam=lam)
    return result


def weights_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('weights', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    tol = cfg.tolerances
    rows = []
    for spec, w in _weights(cfg, grid):
        rng = suite_generator(seed, f'weights/{depth}/{spec}')
        with diagnostic_context('weights', seed):
            a1, a2 = w.a1, w.a2
            result.check('ap_order', max(0.0, a2 - a1, 1.0 - a2) / a1, tol.exact_zero)
            result.check('martingale_a1', max(0.0, martingale_a1_check(w) - a1) / a1, tol.identity)
            doubling = measure_doubling_check(w, sample_subsets(grid, LEMMA_SAMPLES, rng))
            result.check('measure_doubling', max(0.0, doubling - a1) / a1, tol.identity)
            exponents = (1.5, 2.0, 3.0, 4.0)
            holder = [w.rh(q) for q in exponents]
            result.check('rh_monotone', max(max(0.0, low - high) for low, high in zip(holder, holder[1:])),
                         tol.exact_zero)
            averaged = w.averaged(max(0, depth // 2)).a1
            result.check('averaged_a1', max(0.0, averaged - 2 ** cfg.dimension * a1) / a1, tol.exact_zero)
            try:
                rw = find_rw(w)
                result.check('rw_found', 0.0, 0.0)
                r_w = rw.r_w
            except RoughWeightError as e:
                logger.warning(str(e))
                result.check('rw_found', 1.0, 0.0)
                r_w = math.nan
            rows.append({'seed': seed, 'weight': spec, 'A1': a1, 'A2': a2, 'RH2': w.rh(2.0), 'r_w': r_w,
                         'doubling': doubling})

            slack = math.inf
            for _ in range(LEMMA_SAMPLES):
                m = int(rng.choice(cfg.matrix_dims))
                a, b = random_contraction_pair(m, rng)
                slack = min(slack, usefullem_slack(a, b, float(rng.choice(w.values))))
            result.check('usefullem', max(0.0, -slack), USEFULLEM_TOLERANCE)

        for m in cfg.matrix_dims:
            with diagnostic_context('weights', seed):
                f = random_positive_field(grid, m, rng)
                scale = max(1.0, f.norm_inf())
                result.check('regularity', max(0.0, regularity_check(f) - 2 ** cfg.dimension), tol.reconstruction)
                phi, phi_w = TraceFunctional(), TraceFunctional(w)
                level = max(1, depth // 2)
                average = conditional_expectation(f, level)
                result.check('trace_preserving', _relative(abs(phi(average) - phi(f)), scale), tol.identity)
                result.check('bimodule', _relative(abs(phi_w(average) - TraceFunctional(w.averaged(level))(f)),
                                                   scale * a1), tol.identity)
                h = random_hermitian_field(grid, m, rng)
                result.check('l2_orthogonality', max(abs(martingale_l2_ratio(h, None, n) - 1.0)
                                                     for n in range(1, depth + 1)), ORTHOGONALITY_TOLERANCE)
                result.ratio('l2_weighted', martingale_l2_ratio(h, w, 1), weight=spec, m=m)
    result.tables[_table_name('weights', f'd{cfg.dimension}', f'J{depth}')] = rows
    return result


def kernels_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('kernels', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    tol = cfg.tolerances
    distances = pair_distances(grid)
    result.check('partition_of_unity', partition_residual(np.unique(distances[distances > 0]), grid.dimension),
                 tol.reconstruction)
    m = max(cfg.matrix_dims)
    for kernel in _scalar_kernels(cfg):
        rng = suite_generator(seed, f'kernels/{depth}/{kernel.name}')
        with diagnostic_context('kernels', seed):
            f = random_positive_field(grid, m, rng)
            scale = max(1.0, f.norm_inf())
            for eps in (2.0 ** -2, 3 * grid.side_length(depth), 0.1):
                result.check('reduction', _relative(reduction_residual(kernel, f, eps), scale), tol.reconstruction)
            nesting = 0.0
            for j in list(lacunary_range(grid))[:-1]:
                step = lacunary_apply(kernel, f, j + 1) - lacunary_apply(kernel, f, j)
                nesting = max(nesting, step.distance(annulus_apply(kernel, f, j)))
            result.check('annular_nesting', _relative(nesting, scale), tol.identity)
            g = OperatorField(grid, random_matrices(rng, grid.num_cells, m))
            covariance = lacunary_apply(kernel, g.adjoint(), depth).distance(lacunary_apply(kernel, g, depth).adjoint())
            result.check('adjoint_covariance', _relative(covariance, g.norm_inf()), tol.exact_zero)
            size = size_constant(kernel, grid)
            result.check('size_finite', 0.0 if math.isfinite(size) else 1.0, 0.0)
            scalar = random_positive_field(grid, 1, rng)
            sandwich = max(sandwich_constant(kernel, scalar, eps) for eps in (2.0 ** -2, 2.0 ** -4))
            result.ratio('sandwich', sandwich, kernel=kernel.name)
            richardson = richardson_error(kernel, f, 2.0 ** -3)
            result.check('richardson_finite', 0.0 if math.isfinite(richardson) else 1.0, 0.0)
            result.tables.setdefault(_table_name('quadrature', kernel.name, f'd{cfg.dimension}'), []).append(
                {'J': depth, 'seed': seed, 'size': size, 'richardson': richardson})

            level = max(1, depth - 3)
            cube = (level, grid.cube_count(level) // 2 - 1)
            modulus = hormander_modulus(kernel, 1.0, [cube], cfg.hormander_jmax, grid)
            transposed = hormander_modulus(kernel, 1.0, [cube], cfg.hormander_jmax, grid, 'transposed')
            result.tables[_table_name('hormander', kernel.name, f'd{cfg.dimension}', f'J{depth}')] = \
                [dict(row, seed=seed) for row in modulus.csv_rows()]
            if modulus.any_truncated:
                result.caveat(f'{kernel.name}: Hoermander rows at J={depth} reach the window edge and are truncated')
            if kernel.antisymmetric:
                result.check('transposed_modulus', _relative(abs(modulus.supremum - transposed.supremum),
                                                             modulus.supremum), tol.exact_zero)
            decay_checked = isinstance(kernel, HilbertKernel) or (isinstance(kernel, RieszKernel) and
                                                                   grid.dimension == 1)
            if decay_checked:
                try:
                    alpha = modulus.decay_exponent()
                except ContractViolationError:
                    result.caveat(f'{kernel.name}: too few untruncated Hoermander rows at J={depth} for a decay fit')
                else:
                    low, high = DECAY_WINDOW
                    result.check('hormander_decay', max(0.0, low - alpha, alpha - high), 0.0)
    vector = parse_kernel_spec(cfg.vector_kernel, cfg.dimension)
    result.check('vector_size_finite', 0.0 if math.isfinite(size_constant(vector, grid)) else 1.0, 0.0)
    return result


def hardy_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('hardy', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    tol = cfg.tolerances
    ceiling = math.sqrt(2 ** cfg.dimension)
    for m in cfg.matrix_dims:
        for spec, w in _weights(cfg, grid):
            rng = suite_generator(seed, f'hardy/{depth}/{m}/{spec}')
            with diagnostic_context('hardy', seed):
                fields = random_hermitian_family(grid, m, 3, rng)
                for orientation in ORIENTATIONS:
                    worst = max(max(0.0, -square_functions(f).domination_defect(orientation)) /
                                max(1.0, f.norm_inf()) ** 2 for f in fields)
                    result.check(f'square_domination_{orientation}', worst, tol.identity)
                    low, high = hardy_equivalence_ratio(fields, w, orientation)
                    result.check(f'hardy_ratio_{orientation}', max(0.0, high - ceiling), HARDY_RATIO_SLACK)
                    result.ratio(f'hardy_lo_{orientation}', low, weight=spec, m=m)
                family = [OperatorField(grid, random_matrices(rng, grid.num_cells, m)) for _ in range(3)]
                result.check('khintchine_l2', abs(khintchine_ratio(family, 2, w) - 1.0), tol.exact_zero)
                result.ratio('khintchine_l1', khintchine_ratio(family, 1, w), weight=spec, m=m)
                result.ratio('khintchine_weak', khintchine_ratio(family, 'weak', w), weight=spec, m=m)
                if m == 1:
                    mean_zero = random_mean_zero_field(grid, 1, rng)
                    square = square_functions(mean_zero).square(COLUMN)
                    gap = abs(weighted_trace(square, None, 2) - weighted_trace(mean_zero, None, 2))
                    result.check('scalar_square_isometry', _relative(gap, mean_zero.norm_inf()), tol.identity)
    return result


def atoms_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('atoms', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    tol = cfg.tolerances
    for m in cfg.matrix_dims:
        for spec, w in _weights(cfg, grid):
            rng = suite_generator(seed, f'atoms/{depth}/{m}/{spec}')
            with diagnostic_context('atoms', seed):
                simple_defect, cancellation, hardy = 0.0, 0.0, 0.0
                for index in range(cfg.atom_count):
                    atom = random_simple_atom(grid, m, rng, w, ORIENTATIONS[index % 2])
                    simple_defect = max(simple_defect, max(check_atom(atom, w).defects.values()))
                    cancellation = max(cancellation, _relative(atom_cube_cancellation(atom), atom.value.norm_inf()))
                    hardy = max(hardy, atom_hardy_norm_check(atom, w))
                result.check('simple_atoms', simple_defect, tol.identity)
                result.check('atom_cancellation', cancellation, tol.identity)
                result.ratio('atom_hardy', hardy, weight=spec, m=m)

                for orientation in ORIENTATIONS:
                    z = random_algebraic_atom(grid, m, rng, w, orientation=orientation)
                    result.check('algebraic_atom', max(check_atom(z, w).defects.values()), tol.identity)
                    crude_pieces = algebraic_to_crude(z, w)
                    result.check('crude_coefficients', max(0.0, sum(c for c, _ in crude_pieces) - 1.0), tol.identity)
                    for _, crude in crude_pieces:
                        result.check('crude_atom', max(check_atom(crude, w).defects.values()), tol.identity)
                        simple_pieces = crude_to_simple(crude, SLICING_BASE, w)
                        total = sum(c for c, _ in simple_pieces)
                        result.check('slice_coefficients', max(0.0, total - SLICING_BASE) / SLICING_BASE, tol.identity)
                        rebuilt = sum((c * piece.value.values for c, piece in simple_pieces),
                                      np.zeros_like(crude.value.values))
                        result.check('slice_reconstruction',
                                     _relative(float(np.max(np.abs(rebuilt - crude.value.values))),
                                               crude.value.norm_inf()), tol.identity)
                        result.check('sliced_atoms', max((max(check_atom(piece, w).defects.values())
                                                          for _, piece in simple_pieces), default=0.0), tol.identity)

                f = random_mean_zero_field(grid, m, rng)
                scale = max(1.0, f.norm_inf())
                decomposition = atomic_decompose(f, w)
                result.check('atomic_reconstruction', _relative(decomposition.residual, scale), tol.reconstruction)
                result.check('atomic_products', _relative(decomposition.product_residual(), scale),
                             tol.reconstruction)
                alpha_scale = max((alpha.norm_inf() for alpha in decomposition.alphas), default=1.0)
                result.check('predictability', _relative(decomposition.predictability_defect(), alpha_scale),
                             tol.identity)
                conditional = square_functions(f).conditional_hardy_norm(w)
                beta_mass = sum(weighted_trace(beta, w, 2) ** 2 for beta in decomposition.betas)
                phi_one = TraceFunctional(w)(OperatorField.identity(grid, m))
                result.check('beta_mass', abs(beta_mass - conditional),
                             10 * decomposition.regularizer * phi_one + tol.identity * max(1.0, conditional))
                if conditional > 0:
                    alpha_mass = sum(weighted_trace(alpha, w, 2) ** 2 for alpha in decomposition.alphas)
                    result.ratio('alpha_mass', alpha_mass / conditional, weight=spec, m=m)
                for coefficient, algebraic in zip(decomposition.coefficients, decomposition.atoms):
                    result.check('decomposition_atom', max(check_atom(algebraic, w).defects.values()), tol.identity)
                    inflation = 0.0
                    for crude_coefficient, crude in algebraic_to_crude(algebraic, w):
                        for simple_coefficient, simple in crude_to_simple(crude, SLICING_BASE, w):
                            inflation += crude_coefficient * simple_coefficient
                    result.check('pipeline_inflation', max(0.0, inflation - SLICING_BASE) / SLICING_BASE,
                                 tol.identity)
    return result


def _shadow(certificate: float, oracle: float) -> float:
    """ certificate / oracle, 0 when both vanish """
    if oracle > 0:
        return certificate / oracle
    return 0.0 if certificate == 0 else math.inf


def theorem12_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('theorem12', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    budget = cfg.certificate_constant * (1 + 1e-9)
    for kernel in _scalar_kernels(cfg):
        result.check('size_finite', 0.0 if math.isfinite(size_constant(kernel, grid)) else 1.0, 0.0)
        proxy = kernel_norm_proxy(kernel, grid)
        for m in cfg.matrix_dims:
            for spec, w in _weights(cfg, grid):
                rng = suite_generator(seed, f'theorem12/{depth}/{m}/{spec}/{kernel.name}')
                f = random_positive_field(grid, m, rng)
                norm = weighted_trace(f, w, 1)
                with diagnostic_context('theorem12', seed):
                    family = lacunary_family(kernel, f)
                    supremum = scalar_supremum(family) if m == 1 else None
                best, built, oracle = 0.0, 0.0, 0.0
                lambdas = _lambdas(cfg, f, w)
                for lam in lambdas:
                    with diagnostic_context('theorem12', seed, lam):
                        certificate = theorem12_certificate(f, lam, w, kernel, cfg.certificate_constant, family)
                    result.check('witness', certificate.observed_constant, budget)
                    result.check('construction_witness', certificate.construction_constant, budget)
                    result.ratio('theorem12', certificate.ratio, weight=spec, kernel=kernel.name, m=m, lam=lam)
                    result.ratio('theorem12_c1', certificate.observed_constant, weight=spec, kernel=kernel.name, m=m,
                                 lam=lam)
                    result.ratio('theorem12_construction', certificate.construction_ratio, weight=spec,
                                 kernel=kernel.name, m=m, lam=lam)
                    best = max(best, certificate.ratio)
                    built = max(built, certificate.construction_ratio)
                    if supremum is not None:
                        oracle = max(oracle, scalar_weak_oracle(supremum, lam, w) / norm)
                with diagnostic_context('theorem12', seed, 2 * lambdas[0]):
                    first = theorem12_certificate(f, lambdas[0], w, kernel, cfg.certificate_constant, family)
                    doubled = theorem12_certificate(f * 2.0, 2 * lambdas[0], w, kernel, cfg.certificate_constant,
                                                    [a * 2.0 for a in family])
                result.check('scaling', abs(doubled.ratio - first.ratio) / max(1.0, first.ratio),
                             cfg.tolerances.identity)
                trivial_lam = 2 * f.norm_inf() * max(1.0, proxy)
                with diagnostic_context('theorem12', seed, trivial_lam):
                    trivial = theorem12_certificate(f, trivial_lam, w, kernel, cfg.certificate_constant, family)
                result.check('trivial_witness', abs(trivial.construction_ratio), cfg.tolerances.identity)
                if supremum is not None:
                    shadow = _shadow(best, oracle)
                    result.check('scalar_shadow', shadow, SHADOW_FACTOR)
                    result.tables.setdefault(_table_name('theorem12_shadow', f'd{cfg.dimension}'), []).append(
                        {'J': depth, 'seed': seed, 'weight': spec, 'kernel': kernel.name, 'certificate': best,
                         'construction': built, 'oracle': oracle, 'shadow': shadow,
                         'construction_shadow': _shadow(built, oracle)})
    return result


def theorem14_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('theorem14', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    kernel = parse_kernel_spec(cfg.vector_kernel, cfg.dimension)
    level = max(1, depth - 3)
    cube = (level, grid.cube_count(level) // 2 - 1)
    for m in cfg.matrix_dims:
        for spec, w in _weights(cfg, grid):
            rng = suite_generator(seed, f'theorem14/{depth}/{m}/{spec}')
            f = random_positive_field(grid, m, rng)
            with diagnostic_context('theorem14', seed):
                r = 2 * w.rw.conjugate
                modulus = hormander_modulus(kernel, r, [cube], cfg.hormander_jmax, grid)
                result.check('square_modulus_finite', 0.0 if math.isfinite(modulus.supremum) else 1.0, 0.0)
                patterns = sign_patterns(len(kernel), cfg.sign_samples, rng)
                estimate = theorem14_weak_norm(f, w, kernel, patterns, _lambdas(cfg, f, w))
                if len(kernel) <= 12:
                    transforms = vector_apply(kernel, f)
                    result.check('khintchine_l2', abs(khintchine_ratio(transforms, 2, w) - 1.0),
                                 cfg.tolerances.exact_zero)
            result.ratio('theorem14', estimate.ratio, weight=spec, kernel=kernel.name, m=m)
            result.check('grid_below_supremum', max(0.0, estimate.grid_ratio - estimate.ratio),
                         cfg.tolerances.identity)
            for lam, direct, path in zip(estimate.lambdas, estimate.direct, estimate.path):
                result.ratio('theorem14_grid', direct, weight=spec, kernel=kernel.name, m=m, lam=lam)
                result.ratio('theorem14_path', path, weight=spec, kernel=kernel.name, m=m, lam=lam)
            result.check('path_dominates', estimate.path_defect, cfg.tolerances.identity)
    return result


def theorem16_suite(cfg: ExperimentConfig, depth: int, seed: int) -> SuiteResult:
    result = SuiteResult('theorem16', depth, seed)
    grid = DyadicGrid(cfg.dimension, depth)
    kernel = parse_kernel_spec(cfg.vector_kernel, cfg.dimension)
    level = max(1, depth - 3)
    cube = (level, grid.cube_count(level) // 2 - 1)
    for spec, w in [(None, None)] + _weights(cfg, grid):
        with diagnostic_context('theorem16', seed):
            r = 1.0 if w is None else w.rw.conjugate
            for variant in ('column', 'transposed'):
                modulus = hormander_modulus(kernel, r, [cube], cfg.hormander_jmax, grid, variant)
                result.check(f'{variant}_modulus_finite', 0.0 if math.isfinite(modulus.supremum) else 1.0, 0.0)
                result.tables.setdefault(_table_name('hormander', kernel.name, variant, f'd{cfg.dimension}'),
                                         []).append({'J': depth, 'seed': seed, 'weight': spec or 'unweighted', 'r': r,
                                                     'supremum': modulus.supremum})
        for m in cfg.matrix_dims:
            rng = suite_generator(seed, f'theorem16/{depth}/{m}/{spec}')
            with diagnostic_context('theorem16', seed):
                atoms = [random_simple_atom(grid, m, rng, w) for _ in range(cfg.atom_count)]
                sweep = theorem16_atom_sweep(kernel, atoms, w)
                if w is None:
                    result.ratio('theorem16_unweighted', sweep.maximum, weight='unweighted', kernel=kernel.name, m=m)
                    continue
                result.ratio('theorem16', sweep.maximum, weight=spec, kernel=kernel.name, m=m)
                consequence = hardy_transform_check(random_mean_zero_field(grid, m, rng), kernel, w)
                result.check('atomic_triangle', consequence.defect, cfg.tolerances.identity)
                result.ratio('theorem16_consequence', consequence.ratio, weight=spec, kernel=kernel.name, m=m)
    return result


SUITE_FUNCTIONS: Dict[str, Callable[[ExperimentConfig, int, int], SuiteResult]] = {
    'cuculescu': cuculescu_suite,
    'czd': czd_suite,
    'weights': weights_suite,
    'kernels': kernels_suite,
    'hardy': hardy_suite,
    'atoms': atoms_suite,
    'theorem12': theorem12_suite,
    'theorem14': theorem14_suite,
    'theorem16': theorem16_suite,
}


def resolve_suites(names: Optional[Sequence[str]], default: Sequence[str] = SUITES) -> Tuple[str, ...]:
    """ Expand 'all', drop duplicates and reject unknown names. """
    if not names:
        return tuple(default)
    resolved = []
    for name in names:
        for suite in (SUITES if name == 'all' else (name,)):
            if suite not in SUITE_FUNCTIONS:
                raise ConfigError(f'unknown suite {suite!r}; choose from {", ".join(SUITES)} or all')
            if suite not in resolved:
                resolved.append(suite)
    return tuple(resolved)


def _run_task(cfg: ExperimentConfig, suite: str, depth: int, seed: int) -> SuiteResult:
    logger.debug(f'{suite}: J={depth} seed={seed}')
    with diagnostic_context(suite, seed):
        return SUITE_FUNCTIONS[suite](cfg, depth, seed)


def run_config(cfg: ExperimentConfig, suites: Optional[Sequence[str]] = None, threads: Optional[int] = None,
               progress: bool = True) -> ConstantReport:
    """
    Run every (suite, depth, seed) task of the configuration.

    Tasks are independent and each derives its random draws from its own key, so the report does not depend on
    `threads` (NCZW_THREADS when omitted).
    """
    cfg.validate()
    suites = resolve_suites(suites)
    threads = thread_count() if threads is None else threads
    if threads < 1:
        raise ConfigError(f'thread count must be positive, got {threads}')
    tasks = [(suite, depth, seed) for suite in suites for depth in cfg.depths for seed in cfg.seeds]
    logger.info(f'running {len(tasks)} tasks on {threads} thread(s): {", ".join(suites)}')
    with ThreadPoolExecutor(max_workers=threads) as executor:
        results = list(tqdm(executor.map(lambda task: _run_task(cfg, *task), tasks), total=len(tasks),
                            desc='nczw', disable=None if progress else True))
    report = ConstantReport.assemble(cfg, suites, results)
    logger.info(f'{len(report.checks)} checks ({len(report.failed_checks)} failed), {len(report.ratios)} ratios, '
                f'{len(report.unstable)} unstable tables')
    return report

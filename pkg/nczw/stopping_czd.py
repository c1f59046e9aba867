"""
Cuculescu stopping projections and the noncommutative Calderón-Zygmund decomposition.

Per-level projections are stored per cube: ``q_cubes[n]`` is the (2^{nd}, m, m) stack of q_Q for Q in D_n, and
fields are only materialised on demand.
"""
import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional

import numpy as np

from nczw.dyadic_model import DyadicGrid, OperatorField, TraceFunctional, conditional_expectation, weighted_trace
from nczw.exceptions import CommutationError, ContractViolationError, GridMismatchError, NotPositiveError
from nczw.matrix_algebra import Interval, adjoint, eigh, identity_like, spectral_projection, support_projection
from nczw.weights import Weight

logger = logging.getLogger(__name__)

COMMUTATOR_TOLERANCE = 1e-10
HEIGHT_TOLERANCE = 1e-10
DILATION = 5


def snap_projection(x: np.ndarray) -> np.ndarray:
    """ Nearest projection to an almost-projection stack. """
    values, vectors = eigh(x)
    mask = (values > 0.5).astype(float)
    return (vectors * mask[..., None, :]) @ adjoint(vectors)


@dataclass(eq=False)
class StoppingFamily:
    """ Cuculescu projections q_0 = 1 >= q_1 >= ... >= q_J of a positive field at height lam. """
    lam: float
    source: OperatorField
    q_cubes: List[np.ndarray]
    weight: Optional[Weight] = None

    @property
    def grid(self) -> DyadicGrid:
        return self.source.grid

    def p_cubes(self, n: int) -> np.ndarray:
        """ p_Q = q_{Q^} - q_Q for the cubes of level n >= 1 """
        parents = np.repeat(self.q_cubes[n - 1], self.grid.children, axis=0)
        return parents - self.q_cubes[n]

    def q(self, n: int) -> OperatorField:
        return OperatorField.from_cubes(self.grid, self.q_cubes[n], n, projection=True)

    def p(self, n: int) -> OperatorField:
        return OperatorField.from_cubes(self.grid, self.p_cubes(n), n, projection=True)

    @cached_property
    def q_levels(self) -> List[OperatorField]:
        """ [q_1, ..., q_J] """
        return [self.q(n) for n in range(1, self.grid.depth + 1)]

    @cached_property
    def p_levels(self) -> List[OperatorField]:
        """ [p_1, ..., p_J] """
        return [self.p(n) for n in range(1, self.grid.depth + 1)]

    @property
    def terminal(self) -> OperatorField:
        """ q = q_J, the finite-depth meet of all q_n. """
        return self.q(self.grid.depth)

    def cube_q(self, n: int, k: int) -> np.ndarray:
        return self.q_cubes[n][k]

    def cube_p(self, n: int, k: int) -> np.ndarray:
        return self.p_cubes(n)[k]

    def ranks(self) -> List[int]:
        return [int(round(np.real(np.trace(q, axis1=1, axis2=2)).sum())) for q in self.q_cubes]


def _require_positive(f: OperatorField) -> None:
    if f.positive:
        return
    try:
        OperatorField(f.grid, f.values, positive=True)
    except (NotPositiveError, ContractViolationError) as e:
        raise NotPositiveError(f'Cuculescu projections need a positive field: {e}') from e


def cuculescu(f: OperatorField, lam: float, w: Optional[Weight] = None) -> StoppingFamily:
    """
    q_n = q_{n-1} chi_[0, lam](q_{n-1} f_n q_{n-1}) cube by cube, with q_0 the identity.

    Every level is checked: q_n commutes with q_{n-1} f_n q_{n-1} and q_n f_n q_n <= lam q_n.
    """
    _require_positive(f)
    if lam <= 0:
        raise ContractViolationError(f'lambda must be positive, got {lam}')
    grid = f.grid
    q_cubes = [np.eye(f.m, dtype=complex)[None]]
    for n in range(1, grid.depth + 1):
        previous = np.repeat(q_cubes[-1], grid.children, axis=0)
        average = f.cube_averages[n]
        middle = previous @ average @ previous
        current = snap_projection(previous @ spectral_projection(middle, Interval.closed(0.0, lam)))
        scale = max(1.0, float(np.max(np.abs(middle))))
        commutator = float(np.max(np.abs(current @ middle - middle @ current)))
        if commutator > COMMUTATOR_TOLERANCE * scale:
            raise CommutationError(f'level {n}: stopping projection fails to commute (defect {commutator:.3g})')
        height, _ = eigh(current @ average @ current - lam * current)
        if np.max(height) > HEIGHT_TOLERANCE * max(scale, lam):
            raise CommutationError(f'level {n}: q_n f_n q_n exceeds lambda q_n by {np.max(height):.3g}')
        q_cubes.append(current)
    family = StoppingFamily(lam=lam, source=f, q_cubes=q_cubes, weight=w)
    logger.debug(f'cuculescu lambda={lam:.4g}: ranks per level {family.ranks()}')
    return family


def classical_stopping(f: OperatorField, lam: float) -> List[np.ndarray]:
    """ Scalar stopping indicators [1{max_{k<=n} f_k <= lam} for n = 1..J], for m = 1 fields. """
    running = np.full(f.grid.num_cells, -np.inf)
    indicators = []
    for n in range(1, f.grid.depth + 1):
        running = np.maximum(running, np.real(f.grid.expand(f.cube_averages[n], n)[:, 0, 0]))
        indicators.append(running <= lam)
    return indicators


def _a1(w: Optional[Weight]) -> float:
    return 1.0 if w is None else w.a1


def level_set_bound(sf: StoppingFamily, f: OperatorField, w: Optional[Weight] = None) -> float:
    """ lam phi^w(1 - q) / ([w]_{A_1} ||f||_{L_1^w}) """
    norm = weighted_trace(f, w, 1)
    if norm == 0:
        raise ContractViolationError('level-set ratio of the zero field')
    complement = OperatorField.identity(f.grid, f.m) - sf.terminal
    return sf.lam * TraceFunctional(w)(complement) / (_a1(w) * norm)


@dataclass(eq=False)
class CZParts:
    """ f = g + b_d + b_off at height lam. """
    source: OperatorField
    lam: float
    g: OperatorField
    b_d: OperatorField
    b_off: OperatorField
    b_d_levels: List[OperatorField]
    b_off_levels: List[OperatorField]
    family: StoppingFamily
    weight: Optional[Weight] = None

    def reconstruction_error(self) -> float:
        return (self.g + self.b_d + self.b_off).distance(self.source)

    def off_diagonal_alternative(self) -> OperatorField:
        """ sum_k p_k f q_k + q_k f p_k """
        f = self.source.values
        total = np.zeros_like(f)
        for p, q in zip(self.family.p_levels, self.family.q_levels):
            left = p.values @ f @ q.values
            total = total + left + adjoint(left)
        return OperatorField(self.source.grid, total, hermitian=True)

    def off_diagonal_form_gap(self) -> float:
        return self.off_diagonal_alternative().distance(self.b_off)

    def level_mean_residual(self) -> float:
        """ max_k of ||E_k b_{d,k}|| and ||E_k b_{off,k}|| """
        worst = 0.0
        for k, (diagonal, off) in enumerate(zip(self.b_d_levels, self.b_off_levels), start=1):
            worst = max(worst, float(np.max(np.abs(conditional_expectation(diagonal, k).values))),
                        float(np.max(np.abs(conditional_expectation(off, k).values))))
        return worst


def cz_decompose(f: OperatorField, sf: StoppingFamily) -> CZParts:
    """
    g = q f q + sum_k p_k f_k p_k, b_{d,k} = p_k (f - f_k) p_k, b_{off,k} = p_k (f - f_k) q_k and
    b_off = sum_k b_{off,k} + b_{off,k}^*.
    """
    if sf.source is not f and (sf.source.grid != f.grid or sf.source.m != f.m or
                               not np.array_equal(sf.source.values, f.values)):
        raise GridMismatchError('stopping family was built from a different field')
    grid = f.grid
    q = sf.terminal.values
    good = q @ f.values @ q
    diagonal_total = np.zeros_like(f.values)
    off_total = np.zeros_like(f.values)
    diagonal_levels = []
    off_levels = []
    for k in range(1, grid.depth + 1):
        p_k = sf.p_levels[k - 1].values
        q_k = sf.q_levels[k - 1].values
        f_k = grid.expand(f.cube_averages[k], k)
        good = good + p_k @ f_k @ p_k
        oscillation = f.values - f_k
        diagonal = p_k @ oscillation @ p_k
        off = p_k @ oscillation @ q_k
        diagonal_levels.append(OperatorField(grid, diagonal, hermitian=True))
        off_levels.append(OperatorField(grid, off))
        diagonal_total = diagonal_total + diagonal
        off_total = off_total + off + adjoint(off)
    return CZParts(source=f, lam=sf.lam, g=OperatorField(grid, good, positive=True),
                   b_d=OperatorField(grid, diagonal_total, hermitian=True),
                   b_off=OperatorField(grid, off_total, hermitian=True),
                   b_d_levels=diagonal_levels, b_off_levels=off_levels, family=sf, weight=sf.weight)


@dataclass(frozen=True)
class GoodBadReport:
    lam: float
    g_l1_ratio: float
    g_inf_ratio: float
    bd_sum_ratio: float
    a1: float

    def as_record(self, depth: Optional[int] = None, seed: Optional[int] = None) -> Dict:
        return {'lambda': self.lam, 'ratios': {'g_l1': self.g_l1_ratio, 'g_inf': self.g_inf_ratio,
                                               'bd_sum': self.bd_sum_ratio},
                'depths': depth, 'seeds': seed}


def good_bad_bounds(parts: CZParts, w: Optional[Weight] = None) -> GoodBadReport:
    norm = weighted_trace(parts.source, w, 1)
    if norm == 0:
        raise ContractViolationError('good/bad ratios of the zero field')
    a1 = _a1(w)
    return GoodBadReport(
        lam=parts.lam,
        g_l1_ratio=weighted_trace(parts.g, w, 1) / (a1 * norm),
        g_inf_ratio=parts.g.norm_inf() / parts.lam,
        bd_sum_ratio=sum(weighted_trace(diagonal, w, 1) for diagonal in parts.b_d_levels) / norm,
        a1=a1,
    )


def _neighbourhood_sum(grid: DyadicGrid, per_cube: np.ndarray, n: int, radius: int) -> np.ndarray:
    """ For each level-n cube, the sum of the values of the cubes within `radius` lattice steps (sup-norm). """
    size = 2 ** n
    lattice = grid.to_lattice(per_cube, n)
    padding = [(radius, radius)] * grid.dimension + [(0, 0)] * (lattice.ndim - grid.dimension)
    padded = np.pad(lattice, padding)
    total = np.zeros_like(lattice)
    for offset in itertools.product(range(-radius, radius + 1), repeat=grid.dimension):
        total += padded[tuple(slice(radius + o, radius + o + size) for o in offset)]
    return grid.from_lattice(total, n)


def _shifted(grid: DyadicGrid, per_cube: np.ndarray, n: int, offset) -> np.ndarray:
    """ Value of the cube at lattice offset `offset` from each level-n cube (zero outside the window). """
    size = 2 ** n
    radius = max(abs(o) for o in offset) if offset else 0
    lattice = grid.to_lattice(per_cube, n)
    padded = np.pad(lattice, [(radius, radius)] * grid.dimension + [(0, 0)] * (lattice.ndim - grid.dimension))
    return grid.from_lattice(padded[tuple(slice(radius + o, radius + o + size) for o in offset)], n)


@dataclass(eq=False)
class DilationProjections:
    """ zeta = 1 - join_Q p_Q chi_{5Q} over all levels. """
    zeta: OperatorField
    family: StoppingFamily
    factor: int = DILATION
    level_joins: Dict[int, OperatorField] = field(default_factory=dict)

    @property
    def complement(self) -> OperatorField:
        return OperatorField.identity(self.zeta.grid, self.zeta.m) - self.zeta

    def eta(self, n: int) -> OperatorField:
        """ eta = join_{Q in D_n} p_Q chi_{5Q} """
        if n not in self.level_joins:
            self.level_joins[n] = eta_projection(self.family, n, self.factor)
        return self.level_joins[n]


def _dilated_level_sum(sf: StoppingFamily, n: int, factor: int) -> np.ndarray:
    grid = sf.grid
    return grid.expand(_neighbourhood_sum(grid, sf.p_cubes(n), n, (factor - 1) // 2), n)


def zeta_projection(sf: StoppingFamily, factor: int = DILATION) -> DilationProjections:
    """ The join over all p_Q chi_{5Q} is the support projection of their sum, taken cellwise. """
    if factor % 2 != 1:
        raise ContractViolationError(f'dilation factor must be an odd integer, got {factor}')
    grid = sf.grid
    total = np.zeros((grid.num_cells, sf.source.m, sf.source.m), dtype=complex)
    for n in range(1, grid.depth + 1):
        total = total + _dilated_level_sum(sf, n, factor)
    join = support_projection(total)
    zeta = OperatorField(grid, identity_like(join) - join, projection=True)
    return DilationProjections(zeta=zeta, family=sf, factor=factor)


def eta_projection(sf: StoppingFamily, n: int, factor: int = DILATION) -> OperatorField:
    sf.grid.check_level(n)
    if n == 0:
        return OperatorField.zeros(sf.grid, sf.source.m)
    return OperatorField(sf.grid, support_projection(_dilated_level_sum(sf, n, factor)), projection=True)


def zeta_mass_ratio(dilations: DilationProjections, f: OperatorField, w: Optional[Weight] = None) -> float:
    """ lam phi^w(1 - zeta) / ([w]_{A_1} ||f||_{L_1^w}) """
    norm = weighted_trace(f, w, 1)
    if norm == 0:
        raise ContractViolationError('zeta ratio of the zero field')
    return dilations.family.lam * TraceFunctional(w)(dilations.complement) / (_a1(w) * norm)


def _offsets(grid: DyadicGrid, factor: int):
    radius = (factor - 1) // 2
    return itertools.product(range(-radius, radius + 1), repeat=grid.dimension)


def zeta_projection_residual(dilations: DilationProjections) -> float:
    """ max ||zeta(x) p_Q|| over n, Q in D_n and x in 5Q. """
    sf = dilations.family
    grid = sf.grid
    zeta = dilations.zeta.values
    worst = 0.0
    for n in range(1, grid.depth + 1):
        p = sf.p_cubes(n)
        for offset in _offsets(grid, dilations.factor):
            neighbour = grid.expand(_shifted(grid, p, n, offset), n)
            worst = max(worst, float(np.max(np.abs(zeta @ neighbour))))
    return worst


def zeta_cancellation_residual(dilations: DilationProjections, parts: CZParts) -> float:
    """
    max over n, x and y in 5 Q_{x,n} of ||zeta(x) b_{d,n}(y) zeta(x)|| and ||zeta(x) (b_{off,n} + b_{off,n}^*)(y)
    zeta(x)||.
    """
    grid = parts.source.grid
    m = parts.source.m
    worst = 0.0
    for n in range(1, grid.depth + 1):
        per_cube = grid.cells_per_cube(n)
        zeta = dilations.zeta.values.reshape(grid.cube_count(n), per_cube, m, m)[:, :, None]
        off = parts.b_off_levels[n - 1].values
        for bad in (parts.b_d_levels[n - 1].values, off + adjoint(off)):
            blocks = bad.reshape(grid.cube_count(n), per_cube * m, m)
            for offset in _offsets(grid, dilations.factor):
                neighbour = _shifted(grid, blocks, n, offset).reshape(grid.cube_count(n), per_cube, m, m)[:, None]
                worst = max(worst, float(np.max(np.abs(zeta @ neighbour @ zeta), initial=0.0)))
    return worst


def eta_mass_ratio(sf: StoppingFamily, n: int, w: Optional[Weight] = None) -> float:
    """ phi(eta w) / phi(e w) for e = sum_{Q in D_n} p_Q chi_Q; zero when e vanishes. """
    phi = TraceFunctional(w)
    base = phi(sf.p(n))
    if base == 0:
        return 0.0
    return phi(eta_projection(sf, n)) / base

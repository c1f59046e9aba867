"""
Scalar weights on the dyadic grid and their Muckenhoupt diagnostics.

All suprema over cubes run over the dyadic cubes of the grid, every level included. The essential infimum over a cube
is the minimum over its level-J cells.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from nczw.dyadic_model import DyadicGrid, OperatorField, field_to_json
from nczw.exceptions import ContractViolationError, InvalidExponentError, InvalidWeightSpecError, NotPositiveError, \
    RoughWeightError

logger = logging.getLogger(__name__)

DEFAULT_RH_THRESHOLD = 4.0
DEFAULT_RH_STABILITY = 0.02
DEFAULT_Q_GRID = tuple(round(1 + 0.05 * k, 2) for k in range(1, 141))
QUADRATURE_ORDER = 8


class Weight:
    """ Positive scalar function on the level-J cells; frozen once built. """

    def __init__(self, grid: DyadicGrid, values, name: str = 'custom'):
        values = np.array(values, dtype=float).reshape(-1)
        if values.shape != (grid.num_cells,):
            raise ContractViolationError(f'{values.size} weight values do not fit {grid}')
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise NotPositiveError('weights must be finite and strictly positive')
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.name = name
        self._reverse_holder = {}

    def __repr__(self):
        return f'<Weight {self.name} d={self.grid.dimension} J={self.grid.depth}>'

    @cached_property
    def cube_averages(self) -> List[np.ndarray]:
        return level_averages(self.grid, self.values)

    @cached_property
    def cube_minima(self) -> List[np.ndarray]:
        minima = [self.values]
        for _ in range(self.grid.depth):
            minima.append(minima[-1].reshape(-1, self.grid.children).min(axis=1))
        return minima[::-1]

    @cached_property
    def a1(self) -> float:
        return ap_characteristic(self, 1)

    @cached_property
    def a2(self) -> float:
        return ap_characteristic(self, 2)

    def rh(self, q: float) -> float:
        if q not in self._reverse_holder:
            self._reverse_holder[q] = reverse_holder(self, q)
        return self._reverse_holder[q]

    @cached_property
    def rw(self) -> 'ReverseHolderExponent':
        return find_rw(self)

    def as_field(self) -> OperatorField:
        return OperatorField(self.grid, self.values, positive=True)

    def measure(self, mask: Optional[np.ndarray] = None) -> float:
        """ w(S) for a set S of cells (the whole window when omitted). """
        values = self.values if mask is None else self.values[mask]
        return float(np.sum(values) * self.grid.cell_volume)

    def averaged(self, n: int) -> 'Weight':
        """ E_n w as a weight. """
        self.grid.check_level(n)
        return Weight(self.grid, self.grid.expand(self.cube_averages[n], n), name=f'E_{n}({self.name})')

    def coarsened(self, levels: int = 1) -> 'Weight':
        coarse = self.grid.coarser(levels)
        return Weight(coarse, self.cube_averages[coarse.depth], name=self.name)

    def to_json(self) -> str:
        return field_to_json(self.as_field())


@dataclass(frozen=True)
class ReverseHolderExponent:
    r_w: float
    constant: float
    threshold: float

    @property
    def conjugate(self) -> float:
        """ r_w' = r_w / (r_w - 1) """
        return self.r_w / (self.r_w - 1)


def level_averages(grid: DyadicGrid, values: np.ndarray) -> List[np.ndarray]:
    averages = [values]
    for _ in range(grid.depth):
        averages.append(grid.coarsen(averages[-1]))
    return averages[::-1]


def ap_characteristic(w: Weight, p: float) -> float:
    """ Dyadic [w]_{A_p}; p = 1 uses avg_Q w / min_Q w. """
    if p < 1:
        raise InvalidExponentError(f'A_p needs p >= 1, got {p}')
    if p == 1:
        return max(float(np.max(average / minimum)) for average, minimum in zip(w.cube_averages, w.cube_minima))
    dual = level_averages(w.grid, w.values ** (-1.0 / (p - 1)))
    return max(float(np.max(average * inverse ** (p - 1))) for average, inverse in zip(w.cube_averages, dual))


def reverse_holder(w: Weight, q: float) -> float:
    """ sup_Q (avg_Q w^q)^{1/q} / avg_Q w """
    if q <= 1:
        raise InvalidExponentError(f'reverse Hölder needs q > 1, got {q}')
    powered = level_averages(w.grid, w.values ** q)
    return max(float(np.max(power ** (1.0 / q) / average)) for power, average in zip(powered, w.cube_averages))


def find_rw(w: Weight, q_grid: Sequence[float] = DEFAULT_Q_GRID, threshold: float = DEFAULT_RH_THRESHOLD,
            stability: float = DEFAULT_RH_STABILITY) -> ReverseHolderExponent:
    """
    Largest grid exponent q (scanning upwards, stopping at the first failure) with RH_q(w) <= threshold.

    On grids of depth >= 2 the constant must also be resolution-stable: RH_q(w) <= (1 + stability) RH_q(E_{J-1} w).
    A singular weight such as |x|^{-1/2} keeps a finite constant on every finite grid for every q, and only this
    comparison exposes the exponents at which it stops being integrable.
    """
    coarse = w.coarsened() if w.grid.depth >= 2 else None
    best = None
    for q in sorted(q_grid):
        if q <= 1:
            continue
        constant = w.rh(q)
        if constant > threshold:
            break
        if coarse is not None and constant > (1 + stability) * coarse.rh(q):
            break
        best = ReverseHolderExponent(r_w=float(q), constant=constant, threshold=threshold)
    if best is None:
        raise RoughWeightError(f'{w.name} has no reverse Hölder exponent on the grid at threshold {threshold}')
    logger.debug(f'{w.name}: r_w = {best.r_w} (RH constant {best.constant:.4g})')
    return best


def martingale_a1_check(w: Weight) -> float:
    """ sup_n ||E_n(w) / w||_inf """
    return max(float(np.max(w.grid.expand(average, n) / w.values)) for n, average in enumerate(w.cube_averages))


def measure_doubling_check(w: Weight, pairs: Iterable[Tuple[np.ndarray, Tuple[int, int]]]) -> float:
    """
    max over (S, Q) of (|S|/|Q|) * (w(Q)/w(S)).

    :param w: weight
    :param pairs: (S, (n, k)) with S a boolean cell mask contained in the k-th cube of level n
    """
    grid = w.grid
    worst = 0.0
    for subset, (n, k) in pairs:
        cube = np.zeros(grid.num_cells, dtype=bool)
        cube[grid.cube_cells(n, k)] = True
        if not np.any(subset) or np.any(subset & ~cube):
            raise ContractViolationError(f'S must be a non-empty subset of cube ({n}, {k})')
        ratio = (np.count_nonzero(subset) / np.count_nonzero(cube)) * (w.measure(cube) / w.measure(subset))
        worst = max(worst, ratio)
    return worst


def sample_subsets(grid: DyadicGrid, count: int, rng: np.random.Generator) \
        -> Iterator[Tuple[np.ndarray, Tuple[int, int]]]:
    """ Random (S, Q) pairs with S a non-empty union of level-J cells inside a dyadic Q. """
    for _ in range(count):
        n = int(rng.integers(0, grid.depth + 1))
        k = int(rng.integers(0, grid.cube_count(n)))
        cells = np.arange(grid.num_cells)[grid.cube_cells(n, k)]
        chosen = rng.random(cells.size) < rng.uniform(0.1, 1.0)
        chosen[rng.integers(0, cells.size)] = True
        subset = np.zeros(grid.num_cells, dtype=bool)
        subset[cells[chosen]] = True
        yield subset, (n, k)


def constant_weight(grid: DyadicGrid, c: float = 1.0) -> Weight:
    return Weight(grid, np.full(grid.num_cells, float(c)), name=f'const:{c}')


def step_weight(grid: DyadicGrid, a: float, b: float) -> Weight:
    """ a on the left half {x_1 < 1/2}, b on the right half. """
    left = grid.cell_centers[:, 0] < 0.5
    return Weight(grid, np.where(left, float(a), float(b)), name=f'step:{a},{b}')


def power_weight(grid: DyadicGrid, alpha: float, x0: float = 0.0) -> Weight:
    """ Cell averages of |x - x0|^{-alpha}, 0 <= alpha < d, by tensor Gauss-Legendre quadrature. """
    if not 0 <= alpha < grid.dimension:
        raise InvalidWeightSpecError(f'power weights need 0 <= alpha < d, got alpha={alpha}, d={grid.dimension}')
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_ORDER)
    nodes = (nodes + 1) / 2
    weights = weights / 2
    h = 2.0 ** (-grid.depth)
    corners = grid.cell_coordinates * h
    if grid.dimension == 1:
        offsets = nodes[:, None]
        quadrature = weights
    else:
        offsets = np.stack(np.meshgrid(nodes, nodes, indexing='ij'), axis=-1).reshape(-1, 2)
        quadrature = np.outer(weights, weights).reshape(-1)
    points = corners[:, None, :] + h * offsets[None, :, :]
    distance = np.linalg.norm(points - x0, axis=-1)
    return Weight(grid, np.sum(distance ** (-alpha) * quadrature, axis=1), name=f'power:{alpha},{x0}')


def cascade_weight(grid: DyadicGrid, ratio: float, seed: int) -> Weight:
    """
    Bounded-ratio multiplicative cascade.

    At level n the children of each cube are multiplied by 1 +- t_n with balanced random signs, so the parent mean
    is preserved. t_n = u * t_max * 2^{1-n} with u uniform in [0, 1] and t_max = (R - 1)/(R + 1), so sibling
    values differ by at most the factor R.
    """
    if ratio <= 1:
        raise InvalidWeightSpecError(f'cascade ratio bound must exceed 1, got {ratio}')
    rng = np.random.default_rng(seed)
    t_max = (ratio - 1) / (ratio + 1)
    signs = np.array([1.0, -1.0] * (grid.children // 2))
    values = np.ones(1)
    for n in range(1, grid.depth + 1):
        amplitude = t_max * 2.0 ** (1 - n) * rng.random(values.size)
        factors = np.stack([1 + amplitude[k] * rng.permutation(signs) for k in range(values.size)])
        values = (values[:, None] * factors).reshape(-1)
    return Weight(grid, values, name=f'cascade:{ratio},{seed}')


def parse_weight_spec(spec: str, grid: DyadicGrid) -> Weight:
    """ Build a weight from `const:c`, `step:a,b`, `power:alpha[,x0]` or `cascade:R,seed`. """
    kind, _, arguments = spec.partition(':')
    try:
        numbers = [float(token) for token in arguments.split(',')] if arguments else []
        if kind == 'const':
            return constant_weight(grid, *(numbers or [1.0]))
        if kind == 'step' and len(numbers) == 2:
            return step_weight(grid, *numbers)
        if kind == 'power' and len(numbers) in (1, 2):
            return power_weight(grid, *numbers)
        if kind == 'cascade' and len(numbers) == 2:
            return cascade_weight(grid, numbers[0], int(numbers[1]))
    except (ValueError, TypeError, NotPositiveError) as e:
        raise InvalidWeightSpecError(f'invalid weight spec {spec!r}: {e}') from e
    raise InvalidWeightSpecError(f'invalid weight spec {spec!r}')

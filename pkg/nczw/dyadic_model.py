"""
Dyadic grid on the unit cube, operator-valued fields and the dyadic filtration.

Cells are stored in Morton (Z-order) so that every dyadic cube of every level is a contiguous block of cells. Cube
averages are taken by a tree reduction: each level averages the 2^d children of the next finer level. The same
numbers are therefore reused by every coarser level, and E_n(E_k f) = E_min(n,k) f holds bit for bit.
"""
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional

import numpy as np

from nczw.exceptions import ContractViolationError, GridMismatchError, InvalidExponentError, LevelOutOfRangeError, \
    NotPositiveError
from nczw.matrix_algebra import HERMITIAN_TOLERANCE, Interval, MatrixElement, abs_op, adjoint, check_hermitian, \
    check_projection, eigh, hermitian_part, schatten_norm, spectral_projection

logger = logging.getLogger(__name__)

POSITIVITY_TOLERANCE = 1e-10
SUPPORTED_DIMENSIONS = (1, 2)


@dataclass(frozen=True)
class DyadicGrid:
    """ Depth-J dyadic grid of [0,1)^d. """
    dimension: int
    depth: int

    def __post_init__(self):
        if self.dimension not in SUPPORTED_DIMENSIONS:
            raise ContractViolationError(f'dimension must be 1 or 2, got {self.dimension}')
        if self.depth < 0:
            raise ContractViolationError(f'depth must be non-negative, got {self.depth}')

    @property
    def num_cells(self) -> int:
        return 2 ** (self.dimension * self.depth)

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.dimension * self.depth)

    @property
    def children(self) -> int:
        return 2 ** self.dimension

    def check_level(self, n: int) -> None:
        if not 0 <= n <= self.depth:
            raise LevelOutOfRangeError(f'level {n} outside 0..{self.depth}')

    def cube_count(self, n: int) -> int:
        return 2 ** (self.dimension * n)

    def cells_per_cube(self, n: int) -> int:
        return 2 ** (self.dimension * (self.depth - n))

    @staticmethod
    def side_length(n: int) -> float:
        return 2.0 ** (-n)

    def cube_volume(self, n: int) -> float:
        return 2.0 ** (-self.dimension * n)

    @cached_property
    def cell_coordinates(self) -> np.ndarray:
        """ Integer lattice coordinates (N, d) of the level-J cells, in storage order. """
        index = np.arange(self.num_cells)
        if self.dimension == 1:
            return index[:, None]
        x = np.zeros_like(index)
        y = np.zeros_like(index)
        for bit in range(self.depth):
            x |= ((index >> (2 * bit + 1)) & 1) << bit
            y |= ((index >> (2 * bit)) & 1) << bit
        return np.stack([x, y], axis=1)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return (self.cell_coordinates + 0.5) * 2.0 ** (-self.depth)

    def cube_coordinates(self, n: int) -> np.ndarray:
        self.check_level(n)
        return self.cell_coordinates[::self.cells_per_cube(n)] >> (self.depth - n)

    def cube_centers(self, n: int) -> np.ndarray:
        return (self.cube_coordinates(n) + 0.5) * self.side_length(n)

    def cube_of_cell(self, n: int) -> np.ndarray:
        """ Index of the level-n cube containing each cell. """
        self.check_level(n)
        return np.arange(self.num_cells) >> (self.dimension * (self.depth - n))

    def cube_cells(self, n: int, k: int) -> slice:
        per_cube = self.cells_per_cube(n)
        return slice(k * per_cube, (k + 1) * per_cube)

    def parent(self, k: int) -> int:
        return k >> self.dimension

    def expand(self, per_cube: np.ndarray, n: int) -> np.ndarray:
        """ Broadcast per-cube values of level n to the cells. """
        return np.repeat(per_cube, self.cells_per_cube(n), axis=0)

    def coarsen(self, per_cube: np.ndarray) -> np.ndarray:
        """ Average groups of 2^d sibling cubes into their parents. """
        return per_cube.reshape(-1, self.children, *per_cube.shape[1:]).mean(axis=1)

    def to_lattice(self, per_cube: np.ndarray, n: int) -> np.ndarray:
        """ Rearrange per-cube values of level n onto a (2^n,)*d lattice. """
        coordinates = self.cube_coordinates(n)
        lattice = np.zeros((2 ** n,) * self.dimension + per_cube.shape[1:], dtype=per_cube.dtype)
        lattice[tuple(coordinates.T)] = per_cube
        return lattice

    def from_lattice(self, lattice: np.ndarray, n: int) -> np.ndarray:
        return lattice[tuple(self.cube_coordinates(n).T)]

    def dilated_mask(self, n: int, k: int, factor: float) -> np.ndarray:
        """ Cells whose centres lie in the cube of side factor*l(Q) centred at c_Q, clipped to the window. """
        center = self.cube_centers(n)[k]
        half_side = factor * self.side_length(n) / 2
        return np.all(np.abs(self.cell_centers - center) < half_side, axis=1)

    def coarser(self, levels: int = 1) -> 'DyadicGrid':
        return DyadicGrid(self.dimension, self.depth - levels)


class OperatorField:
    """ Piecewise-constant matrix-valued function on the level-J cells of a grid. """

    def __init__(self, grid: DyadicGrid, values, hermitian: bool = False, positive: bool = False,
                 projection: bool = False):
        """
        :param grid: grid the field lives on
        :param values: (N, m, m) matrices, or (N,) scalars for m = 1
        :param hermitian: claim cellwise self-adjointness; validated
        :param positive: claim cellwise positivity; validated, implies hermitian
        :param projection: claim cellwise projections; validated, implies positive
        """
        values = np.array(values, dtype=complex)
        if values.ndim == 1:
            values = values[:, None, None]
        if values.ndim != 3 or values.shape[0] != grid.num_cells or values.shape[1] != values.shape[2]:
            raise ContractViolationError(f'values of shape {values.shape} do not fit {grid}')
        positive = positive or projection
        hermitian = hermitian or positive
        if hermitian:
            check_hermitian(values)
            values = hermitian_part(values)
        if positive:
            _check_positive(values)
        if projection:
            check_projection(values)
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.hermitian = hermitian
        self.positive = positive
        self.projection = projection

    @classmethod
    def constant(cls, grid: DyadicGrid, matrix, **flags) -> 'OperatorField':
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.ndim == 0:
            matrix = matrix.reshape(1, 1)
        return cls(grid, np.broadcast_to(matrix, (grid.num_cells,) + matrix.shape), **flags)

    @classmethod
    def identity(cls, grid: DyadicGrid, m: int) -> 'OperatorField':
        return cls.constant(grid, np.eye(m), projection=True)

    @classmethod
    def zeros(cls, grid: DyadicGrid, m: int) -> 'OperatorField':
        return cls.constant(grid, np.zeros((m, m)), projection=True)

    @classmethod
    def from_cubes(cls, grid: DyadicGrid, per_cube: np.ndarray, n: int, **flags) -> 'OperatorField':
        return cls(grid, grid.expand(per_cube, n), **flags)

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def shape(self):
        return self.values.shape

    def cell(self, i: int) -> MatrixElement:
        return MatrixElement(self.values[i], hermitian=self.hermitian, projection=self.projection)

    def scalar_values(self) -> np.ndarray:
        """ Real cell values of an m = 1 field. """
        if self.m != 1:
            raise ContractViolationError('scalar values requested from a matrix-valued field')
        return np.real(self.values[:, 0, 0])

    def support(self, tolerance: float = 0.0) -> np.ndarray:
        return np.max(np.abs(self.values), axis=(1, 2)) > tolerance

    def cube_values(self, n: int) -> np.ndarray:
        """ Per-cube values of a field that is constant on level-n cubes. """
        self.grid.check_level(n)
        return self.values[::self.grid.cells_per_cube(n)]

    @cached_property
    def cube_averages(self) -> List[np.ndarray]:
        """ Per-level cube averages, index n holding the (2^{nd}, m, m) stack of level-n averages. """
        averages = [self.values]
        for _ in range(self.grid.depth):
            averages.append(self.grid.coarsen(averages[-1]))
        return averages[::-1]

    def _check_grid(self, other: 'OperatorField') -> None:
        if other.grid != self.grid or other.m != self.m:
            raise GridMismatchError(f'cannot combine fields on {self.grid}/m={self.m} and {other.grid}/m={other.m}')

    def _operand(self, other) -> np.ndarray:
        if isinstance(other, OperatorField):
            self._check_grid(other)
            return other.values
        return np.asarray(other)

    def adjoint(self) -> 'OperatorField':
        return OperatorField(self.grid, adjoint(self.values), hermitian=self.hermitian, positive=self.positive)

    def __add__(self, other) -> 'OperatorField':
        hermitian = self.hermitian and isinstance(other, OperatorField) and other.hermitian
        return OperatorField(self.grid, self.values + self._operand(other), hermitian=hermitian)

    def __sub__(self, other) -> 'OperatorField':
        hermitian = self.hermitian and isinstance(other, OperatorField) and other.hermitian
        return OperatorField(self.grid, self.values - self._operand(other), hermitian=hermitian)

    def __neg__(self) -> 'OperatorField':
        return OperatorField(self.grid, -self.values, hermitian=self.hermitian)

    def __mul__(self, scalar) -> 'OperatorField':
        """ Multiplication by a real or complex number. """
        hermitian = self.hermitian and np.isreal(scalar)
        positive = self.positive and np.isreal(scalar) and np.real(scalar) >= 0
        return OperatorField(self.grid, self.values * scalar, hermitian=hermitian, positive=positive)

    def __rmul__(self, scalar) -> 'OperatorField':
        return self.__mul__(scalar)

    def __truediv__(self, scalar) -> 'OperatorField':
        return self.__mul__(1.0 / scalar)

    def __matmul__(self, other) -> 'OperatorField':
        """ Cellwise algebra product. """
        return OperatorField(self.grid, self.values @ self._operand(other))

    def scale_by(self, scalars: np.ndarray) -> 'OperatorField':
        """ Multiply each cell by a real scalar, e.g. a weight. """
        scalars = np.asarray(scalars, dtype=float)
        positive = self.positive and bool(np.all(scalars >= 0))
        return OperatorField(self.grid, self.values * scalars[:, None, None], hermitian=self.hermitian,
                             positive=positive)

    def sandwich(self, projection: 'OperatorField') -> 'OperatorField':
        """ e f e cellwise. """
        e = self._operand(projection)
        return OperatorField(self.grid, e @ self.values @ e, hermitian=self.hermitian, positive=self.positive)

    def abs(self) -> 'OperatorField':
        return OperatorField(self.grid, abs_op(self.values), positive=True)

    def spectral_projection(self, interval: Interval) -> 'OperatorField':
        return OperatorField(self.grid, spectral_projection(self.values, interval), projection=True)

    def norm_inf(self) -> float:
        """ Max cellwise operator norm. """
        return float(np.max(schatten_norm(self.values, np.inf)))

    def min_eigenvalue(self) -> float:
        values, _ = eigh(self.values)
        return float(np.min(values))

    def allclose(self, other: 'OperatorField', atol: float) -> bool:
        return bool(np.max(np.abs(self.values - self._operand(other)), initial=0.0) <= atol)

    def distance(self, other: 'OperatorField') -> float:
        return float(np.max(np.abs(self.values - self._operand(other)), initial=0.0))

    def __repr__(self):
        return f'<OperatorField d={self.grid.dimension} J={self.grid.depth} m={self.m}>'


def _check_positive(values: np.ndarray) -> None:
    eigenvalues, _ = eigh(values)
    scale = max(1.0, float(np.max(np.abs(eigenvalues), initial=0.0)))
    if np.min(eigenvalues, initial=0.0) < -POSITIVITY_TOLERANCE * scale:
        raise NotPositiveError(f'field is not positive (min eigenvalue {np.min(eigenvalues):.3g})')


class TraceFunctional:
    """ phi^w(a) = sum over cells of |cell| * trace(a(cell) w(cell)); Lebesgue when no weight is given. """

    def __init__(self, weight=None):
        """
        :param weight: nczw.weights.Weight or None
        """
        self.weight = weight

    def weights_for(self, grid: DyadicGrid) -> np.ndarray:
        if self.weight is None:
            return np.ones(grid.num_cells)
        if self.weight.grid != grid:
            raise GridMismatchError(f'weight on {self.weight.grid} applied to field on {grid}')
        return self.weight.values

    def __call__(self, f: OperatorField):
        cell_traces = np.trace(f.values, axis1=1, axis2=2)
        total = np.sum(cell_traces * self.weights_for(f.grid)) * f.grid.cell_volume
        if abs(np.imag(total)) <= HERMITIAN_TOLERANCE * max(1.0, abs(total)):
            return float(np.real(total))
        return complex(total)


def conditional_expectation(f: OperatorField, n: int) -> OperatorField:
    """ E_n f: average over each level-n cube. """
    f.grid.check_level(n)
    return OperatorField.from_cubes(f.grid, f.cube_averages[n], n, hermitian=f.hermitian, positive=f.positive)


def martingale_differences(f: OperatorField) -> List[OperatorField]:
    """ [df_1, ..., df_J] with df_1 = E_1 f and df_n = E_n f - E_{n-1} f. """
    grid = f.grid
    differences = []
    previous = None
    for n in range(1, grid.depth + 1):
        current = grid.expand(f.cube_averages[n], n)
        values = current if previous is None else current - previous
        differences.append(OperatorField(grid, values, hermitian=f.hermitian))
        previous = current
    return differences


def regularity_check(f: OperatorField) -> float:
    """ Smallest rho with E_n f <= rho E_{n-1} f for all n >= 1, maximised over cells. """
    if not f.positive:
        _check_positive(f.values)
    grid = f.grid
    worst = 0.0
    for n in range(1, grid.depth + 1):
        finer = f.cube_averages[n]
        coarser = np.repeat(f.cube_averages[n - 1], grid.children, axis=0)
        values, vectors = eigh(coarser)
        scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
        inverse_sqrt = np.where(values > HERMITIAN_TOLERANCE * scale, 1.0 / np.sqrt(np.clip(values, 1e-300, None)),
                                0.0)
        whitening = vectors * inverse_sqrt[:, None, :]
        ratio, _ = eigh(adjoint(whitening) @ finer @ whitening)
        worst = max(worst, float(np.max(ratio)))
    return worst


def weighted_trace(f: OperatorField, w=None, p: float = 1.0) -> float:
    """ ||f||_{L_p^w} = phi(|f|^p w)^{1/p}; p = inf gives the cellwise sup of operator norms. """
    if p < 1:
        raise InvalidExponentError(f'p must be >= 1, got {p}')
    if np.isinf(p):
        return f.norm_inf()
    singular_values = np.linalg.svd(f.values, compute_uv=False)
    cell_traces = np.sum(singular_values ** p, axis=1)
    weights = TraceFunctional(w).weights_for(f.grid)
    return float(np.sum(cell_traces * weights) * f.grid.cell_volume) ** (1.0 / p)


def distribution_projection(f: OperatorField, lam: float) -> OperatorField:
    """ chi_(lam, inf)(|f|) cellwise. """
    if lam <= 0:
        raise ContractViolationError(f'lambda must be positive, got {lam}')
    return f.abs().spectral_projection(Interval.above(lam))


def weak_norm_estimate(f: OperatorField, lam: float, w=None) -> float:
    """ lam * phi^w(chi_(lam, inf)(|f|)) """
    return lam * TraceFunctional(w)(distribution_projection(f, lam))


def weak_quasi_norm(f: OperatorField, w=None) -> float:
    """
    sup_{lam > 0} lam phi^w(chi_(lam, inf)(|f|)).

    The distribution function only jumps at singular values, so the supremum is max_s s phi^w(chi_[s, inf)(|f|))
    over the singular values s of the cells.
    """
    singular_values = np.linalg.svd(f.values, compute_uv=False)
    weights = TraceFunctional(w).weights_for(f.grid)[:, None] * f.grid.cell_volume
    masses = np.broadcast_to(weights, singular_values.shape)
    order = np.argsort(-singular_values, axis=None, kind='stable')
    values = singular_values.ravel()[order]
    if values.size == 0 or values[0] <= 0:
        return 0.0
    return float(np.max(values * np.cumsum(masses.ravel()[order])))


def martingale_l2_ratio(f: OperatorField, w=None, level: int = 1) -> float:
    """ sum_{n>=l} ||df_n||^2 / ||sum_{n>=l} df_n||^2 in L_2^w; equals 1 without a weight. """
    differences = martingale_differences(f)[level - 1:]
    tail = OperatorField(f.grid, sum(df.values for df in differences))
    denominator = weighted_trace(tail, w, 2) ** 2
    if denominator == 0:
        return 1.0
    return sum(weighted_trace(df, w, 2) ** 2 for df in differences) / denominator


def field_to_json(f: OperatorField) -> str:
    cells = [[[float(z.real), float(z.imag)] for z in cell.reshape(-1)] for cell in f.values]
    return json.dumps({'d': f.grid.dimension, 'J': f.grid.depth, 'm': f.m, 'cells': cells})


def field_from_json(text: str, hermitian: bool = False, positive: bool = False) -> OperatorField:
    data = json.loads(text)
    grid = DyadicGrid(data['d'], data['J'])
    m = data['m']
    pairs = np.asarray(data['cells'], dtype=float).reshape(grid.num_cells, m * m, 2)
    values = (pairs[..., 0] + 1j * pairs[..., 1]).reshape(grid.num_cells, m, m)
    return OperatorField(grid, values, hermitian=hermitian, positive=positive)


def coarsen_field(f: OperatorField, levels: int = 1) -> OperatorField:
    """ The same function sampled on the grid `levels` coarser, cell values being cube averages. """
    coarse = f.grid.coarser(levels)
    return OperatorField(coarse, f.cube_averages[coarse.depth], hermitian=f.hermitian, positive=f.positive)


def weight_values(grid: DyadicGrid, weight: Optional[object]) -> np.ndarray:
    """ Cell values of `weight`, or ones when no weight is given. """
    return TraceFunctional(weight).weights_for(grid)

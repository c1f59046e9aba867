"""
Calderón-Zygmund kernels on the unit window and the operators built from them.

Integrals are midpoint sums over the level-J cells: a field is constant on each cell, so only the kernel is sampled,
at cell centres, and the diagonal pair x = y is left out. All radii are compared with cell-centre distances.
"""
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from nczw.dyadic_model import DyadicGrid, OperatorField, TraceFunctional, coarsen_field, weight_values, \
    weighted_trace
from nczw.exceptions import ContractViolationError, GridMismatchError, InvalidExponentError, InvalidKernelSpecError, \
    NotProjectionError
from nczw.matrix_algebra import PROJECTION_TOLERANCE, Interval, abs_op, adjoint, check_projection, eigh, \
    identity_like, positive_sqrt, spectral_projection
from nczw.weights import Weight

logger = logging.getLogger(__name__)

I_MIN = -2
MAX_VECTOR_COMPONENTS = 64
PARTITION_SPAN = 40
CERTIFICATE_SLACK = 1e-9
MAXIMAL_ITERATIONS = 200
BISECTION_STEPS = 50
FEASIBILITY_TOLERANCE = 1e-12


class Kernel:
    """ Scalar kernel K(x, y), evaluated on broadcastable point arrays of shape (..., d). """
    smoothness = 'none'
    antisymmetric = False

    @property
    def name(self) -> str:
        return type(self).__name__

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide='ignore', invalid='ignore'):
            values = self.evaluate(x, y)
        return np.where(np.all(x == y, axis=-1), 0.0, values)


@dataclass(frozen=True)
class HilbertKernel(Kernel):
    """ 1 / (x - y) on the line. """
    dimension: int = 1
    smoothness = 'lipschitz'
    antisymmetric = True

    @property
    def name(self) -> str:
        return 'hilbert'

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 1.0 / (x[..., 0] - y[..., 0])


@dataclass(frozen=True)
class RieszKernel(Kernel):
    """ (x_j - y_j) / |x - y|^{d+1}, with the component j counted from 1. """
    component: int
    dimension: int
    smoothness = 'lipschitz'
    antisymmetric = True

    def __post_init__(self):
        if not 1 <= self.component <= self.dimension:
            raise InvalidKernelSpecError(f'riesz component {self.component} outside 1..{self.dimension}')

    @property
    def name(self) -> str:
        return f'riesz:{self.component}'

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        difference = x - y
        distance = np.linalg.norm(difference, axis=-1)
        return difference[..., self.component - 1] / distance ** (self.dimension + 1)


def poisson_kernel(t: float, distance: np.ndarray, dimension: int) -> np.ndarray:
    """ P_t(z) = c_d t / (t^2 + |z|^2)^{(d+1)/2} """
    constant = 1.0 / np.pi if dimension == 1 else 1.0 / (2 * np.pi)
    return constant * t / (t ** 2 + distance ** 2) ** ((dimension + 1) / 2)


@dataclass(frozen=True)
class PoissonDifferenceKernel(Kernel):
    """ P_{2^-k}(x - y) - P_{2^-k-1}(x - y), one component of the dyadic Poisson square function. """
    scale: int
    dimension: int
    smoothness = 'lipschitz'

    @property
    def name(self) -> str:
        return f'poisson:{self.scale}'

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        distance = np.linalg.norm(x - y, axis=-1)
        return (poisson_kernel(2.0 ** (-self.scale), distance, self.dimension) -
                poisson_kernel(2.0 ** (-self.scale - 1), distance, self.dimension))


@dataclass(frozen=True)
class FunctionKernel(Kernel):
    """ Wraps a user callable func(x, y) taking (..., d) arrays. """
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str = 'custom'

    @property
    def name(self) -> str:
        return self.label

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.func(x, y), np.broadcast_shapes(x.shape, y.shape)[:-1])


@dataclass(frozen=True)
class VectorKernel:
    """ Finite family (K_k); its size is measured in the l_2 norm over k. """
    components: Tuple[Kernel, ...]
    label: str = 'vector'

    def __post_init__(self):
        if not 1 <= len(self.components) <= MAX_VECTOR_COMPONENTS:
            raise InvalidKernelSpecError(f'vector kernels hold 1..{MAX_VECTOR_COMPONENTS} components, '
                                         f'got {len(self.components)}')

    @property
    def name(self) -> str:
        return self.label

    def __len__(self):
        return len(self.components)

    def __call__(self, x, y) -> np.ndarray:
        return np.stack([component(x, y) for component in self.components])

    def norm(self, x, y) -> np.ndarray:
        return np.linalg.norm(self(x, y), axis=0)


AnyKernel = Union[Kernel, VectorKernel]


def dyadic_poisson_family(dimension: int, count: int) -> VectorKernel:
    return VectorKernel(tuple(PoissonDifferenceKernel(k, dimension) for k in range(1, count + 1)),
                        label=f'dyadic-poisson:{count}')


def parse_kernel_spec(spec: str, dimension: int) -> AnyKernel:
    """ Build a kernel from `hilbert`, `riesz:j` or `dyadic-poisson:N`. """
    kind, _, argument = spec.partition(':')
    if kind == 'hilbert' and not argument:
        if dimension != 1:
            raise InvalidKernelSpecError('the Hilbert kernel lives on the line (d = 1)')
        return HilbertKernel()
    try:
        value = int(argument)
    except ValueError:
        raise InvalidKernelSpecError(f'invalid kernel spec {spec!r}')
    if kind == 'riesz':
        return RieszKernel(value, dimension)
    if kind == 'dyadic-poisson':
        return dyadic_poisson_family(dimension, value)
    raise InvalidKernelSpecError(f'invalid kernel spec {spec!r}')


def _components(kernel: AnyKernel) -> Tuple[Kernel, ...]:
    return kernel.components if isinstance(kernel, VectorKernel) else (kernel,)


def _kernel_size(kernel: AnyKernel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """ |K(x, y)|, or the l_2 norm over the components of a vector kernel. """
    if isinstance(kernel, VectorKernel):
        return kernel.norm(x, y)
    return np.abs(kernel(x, y))


def _bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    result = np.zeros_like(s)
    result[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return result


def psi(t) -> np.ndarray:
    """
    Radial profile of the partition of unity: a C^inf bump in log2(t) supported on t in (1/2, 2), normalised so that
    sum_i psi(2^i t) = 1 for every t > 0.
    """
    t = np.asarray(t, dtype=float)
    result = np.zeros_like(t)
    positive = t > 0
    s = np.log2(t[positive])
    fraction = s - np.floor(s)
    result[positive] = _bump(s) / (_bump(fraction) + _bump(fraction - 1))
    return result


def psi_partition(i: int, dimension: int) -> Callable[[np.ndarray], np.ndarray]:
    """ psi_i(r) = psi(2^i r / sqrt(d)) as a function of the distance r. """
    def evaluator(distance):
        return psi(2.0 ** i * np.asarray(distance, dtype=float) / np.sqrt(dimension))
    return evaluator


def partition_residual(distances: np.ndarray, dimension: int, span: int = PARTITION_SPAN) -> float:
    distances = np.asarray(distances, dtype=float)
    if np.any(distances <= 0):
        raise ContractViolationError('the partition of unity is only defined away from the origin')
    total = sum(psi_partition(i, dimension)(distances) for i in range(-span, span + 1))
    return float(np.max(np.abs(total - 1)))


def lacunary_index(eps: float, dimension: int) -> int:
    """ j_eps = floor(log2(sqrt(d) / eps)): annuli below it lie beyond eps, annuli past j_eps + 1 inside it. """
    if eps <= 0:
        raise ContractViolationError(f'truncation radius must be positive, got {eps}')
    return int(np.floor(np.log2(np.sqrt(dimension) / eps)))


def lacunary_profile(j: int, distance: np.ndarray, dimension: int) -> np.ndarray:
    """ Phi_j(r) = sum_{I_MIN <= i < j} psi_i(r) """
    total = np.zeros_like(np.asarray(distance, dtype=float))
    for i in range(I_MIN, j):
        total = total + psi_partition(i, dimension)(distance)
    return total


@lru_cache(maxsize=8)
def pair_distances(grid: DyadicGrid) -> np.ndarray:
    centers = grid.cell_centers
    return np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)


@lru_cache(maxsize=16)
def kernel_matrix(kernel: AnyKernel, grid: DyadicGrid) -> np.ndarray:
    """ K(c_x, c_y) over all cell pairs, (N, N) or (C, N, N) for vector kernels, zero on the diagonal. """
    centers = grid.cell_centers
    matrix = kernel(centers[:, None, :], centers[None, :, :])
    logger.debug(f'kernel matrix {kernel.name} filled for {grid}')
    return matrix


def _check_dimension(kernel: AnyKernel, grid: DyadicGrid) -> None:
    for component in _components(kernel):
        dimension = getattr(component, 'dimension', grid.dimension)
        if dimension != grid.dimension:
            raise GridMismatchError(f'{component.name} is a d={dimension} kernel, the grid has d={grid.dimension}')


def _integrate(weights: np.ndarray, f: OperatorField) -> OperatorField:
    """ x -> sum_y weights[x, y] f(y) |cell| """
    values = np.einsum('xy,yab->xab', weights, f.values) * f.grid.cell_volume
    return OperatorField(f.grid, values, hermitian=f.hermitian and bool(np.isrealobj(weights)))


def _scalar_matrix(kernel: AnyKernel, grid: DyadicGrid) -> np.ndarray:
    if isinstance(kernel, VectorKernel):
        raise ContractViolationError('scalar operator requested from a vector kernel; use vector_apply')
    _check_dimension(kernel, grid)
    return kernel_matrix(kernel, grid)


def truncated_apply(kernel: Kernel, f: OperatorField, eps: float) -> OperatorField:
    """ T_eps f(x) = sum over cells with |x - y| > eps of K(x, y) f(y) |cell| """
    if eps <= 0:
        raise ContractViolationError(f'truncation radius must be positive, got {eps}')
    matrix = _scalar_matrix(kernel, f.grid)
    return _integrate(np.where(pair_distances(f.grid) > eps, matrix, 0.0), f)


def lacunary_apply(kernel: Kernel, f: OperatorField, j: int) -> OperatorField:
    """ T_j f = sum_{i < j} of the annular pieces K_i = K psi_i """
    matrix = _scalar_matrix(kernel, f.grid)
    return _integrate(matrix * lacunary_profile(j, pair_distances(f.grid), f.grid.dimension), f)


def annulus_apply(kernel: Kernel, f: OperatorField, i: int) -> OperatorField:
    matrix = _scalar_matrix(kernel, f.grid)
    return _integrate(matrix * psi_partition(i, f.grid.dimension)(pair_distances(f.grid)), f)


def boundary_apply(kernel: Kernel, f: OperatorField, eps: float) -> OperatorField:
    """ T_{eps, j_eps} f: the annuli j_eps and j_eps + 1 restricted to |x - y| > eps. """
    grid = f.grid
    j = lacunary_index(eps, grid.dimension)
    distances = pair_distances(grid)
    profile = psi_partition(j, grid.dimension)(distances) + psi_partition(j + 1, grid.dimension)(distances)
    return _integrate(np.where(distances > eps, _scalar_matrix(kernel, grid) * profile, 0.0), f)


def lacunary_range(grid: DyadicGrid) -> range:
    """ Every j at which T_j changes on the grid; T_j is the full discrete operator from the last one on. """
    return range(0, grid.depth + 3)


def reduction_residual(kernel: Kernel, f: OperatorField, eps: float) -> float:
    """ max cellwise distance between T_eps f and T_{j_eps} f + T_{eps, j_eps} f """
    j = lacunary_index(eps, f.grid.dimension)
    split = lacunary_apply(kernel, f, j) + boundary_apply(kernel, f, eps)
    return truncated_apply(kernel, f, eps).distance(split)


def averaging_apply(f: OperatorField, r: float) -> OperatorField:
    """ M_r f(x) = r^{-d} sum over cells with |x - y| <= r of f(y) |cell| """
    if r <= 0:
        raise ContractViolationError(f'averaging radius must be positive, got {r}')
    grid = f.grid
    weights = (pair_distances(grid) <= r).astype(float) / r ** grid.dimension
    result = _integrate(weights, f)
    return OperatorField(grid, result.values, hermitian=f.hermitian, positive=f.positive)


def sandwich_constant(kernel: Kernel, f: OperatorField, eps: float) -> float:
    """ Smallest C with |T_{eps, j_eps} f| <= C M_{2^{-j_eps+1} sqrt(d)} f cellwise, for positive scalar f. """
    if f.m != 1 or not f.positive:
        raise ContractViolationError('the sandwich constant is measured on positive scalar fields')
    j = lacunary_index(eps, f.grid.dimension)
    radius = 2.0 ** (-j + 1) * np.sqrt(f.grid.dimension)
    boundary = np.abs(boundary_apply(kernel, f, eps).scalar_values())
    average = averaging_apply(f, radius).scalar_values()
    active = average > 0
    if np.any(boundary[~active] > 0):
        return float('inf')
    if not np.any(active):
        return 0.0
    return float(np.max(boundary[active] / average[active]))


def size_constant(kernel: AnyKernel, grid: DyadicGrid) -> float:
    """ max over cell-centre pairs of |K(x, y)| |x - y|^d (l_2 over the components of a vector kernel) """
    _check_dimension(kernel, grid)
    matrix = kernel_matrix(kernel, grid)
    size = np.linalg.norm(matrix, axis=0) if isinstance(kernel, VectorKernel) else np.abs(matrix)
    return float(np.max(size * pair_distances(grid) ** grid.dimension))


def richardson_error(kernel: Kernel, f: OperatorField, eps: float) -> float:
    """ Distance on the level-(J-1) cells between T_eps at depth J, averaged down, and T_eps of the averaged field. """
    if f.grid.depth < 1:
        raise ContractViolationError('quadrature comparison needs depth >= 1')
    fine = coarsen_field(truncated_apply(kernel, f, eps))
    coarse = truncated_apply(kernel, coarsen_field(f), eps)
    return fine.distance(coarse)


@dataclass(frozen=True)
class HormanderRow:
    n: int
    k: int
    j: int
    value: float
    partial_sum: float
    truncated: bool


@dataclass(frozen=True)
class HormanderModulus:
    """ Rows m_r(j) per sampled cube with running sums over j. """
    r: float
    variant: str
    rows: Tuple[HormanderRow, ...]

    def table(self) -> Dict[Tuple[int, int], List[HormanderRow]]:
        grouped = {}
        for row in self.rows:
            grouped.setdefault((row.n, row.k), []).append(row)
        return grouped

    @property
    def supremum(self) -> float:
        """ sup over the sampled cubes of the full partial sum """
        return max((rows[-1].partial_sum for rows in self.table().values()), default=0.0)

    @property
    def any_truncated(self) -> bool:
        return any(row.truncated for row in self.rows)

    def decay_exponent(self) -> float:
        """ alpha in m_r(j) ~ 2^{-alpha j}, fitted on untruncated rows with the sup over cubes at each j. """
        best = {}
        for row in self.rows:
            if not row.truncated and row.value > 0:
                best[row.j] = max(best.get(row.j, 0.0), row.value)
        if len(best) < 2:
            raise ContractViolationError('decay fit needs untruncated values at two or more j')
        steps = sorted(best)
        slope, _ = np.polyfit(steps, np.log2([best[j] for j in steps]), 1)
        return float(-slope)

    def csv_rows(self) -> List[Dict]:
        return [{'Q': f'{row.n}:{row.k}', 'j': row.j, 'm_r': row.value, 'partial_sum': row.partial_sum,
                 'truncated': row.truncated} for row in self.rows]


def _difference_kernel(kernel: AnyKernel, x: np.ndarray, y: np.ndarray, center: np.ndarray,
                       variant: str) -> np.ndarray:
    if variant == 'column':
        return _kernel_size_difference(kernel, (x, y), (x, center))
    if variant == 'transposed':
        return _kernel_size_difference(kernel, (y, x), (center, x))
    raise ContractViolationError(f'unknown Hörmander variant {variant!r}')


def _kernel_size_difference(kernel: AnyKernel, first, second) -> np.ndarray:
    difference = kernel(*first) - kernel(*second)
    if isinstance(kernel, VectorKernel):
        return np.linalg.norm(difference, axis=0)
    return np.abs(difference)


def hormander_modulus(kernel: AnyKernel, r: float, cubes: Sequence[Tuple[int, int]], j_max: int, grid: DyadicGrid,
                      variant: str = 'column') -> HormanderModulus:
    """
    m_r(j) = sup_{y in Q} (2^j l(Q))^d ((2^j l(Q))^{-d} int_{2^j l <= |x - c_Q| <= 2^{j+1} l} |K_Q(x, y)|^r dx)^{1/r}

    with K_Q(x, y) = K(x, y) - K(x, c_Q), or K(y, x) - K(c_Q, x) for the transposed variant. y runs over the cell
    centres of Q. A row is flagged truncated when the outer ball leaves the window.
    """
    if r < 1:
        raise InvalidExponentError(f'Hörmander exponent must be >= 1, got {r}')
    _check_dimension(kernel, grid)
    centers = grid.cell_centers
    rows = []
    for n, k in cubes:
        grid.check_level(n)
        side = grid.side_length(n)
        center = grid.cube_centers(n)[k]
        sources = centers[grid.cube_cells(n, k)]
        radial = np.linalg.norm(centers - center, axis=1)
        running = 0.0
        for j in range(1, j_max + 1):
            inner, outer = 2.0 ** j * side, 2.0 ** (j + 1) * side
            truncated = bool(np.any(center - outer < 0) or np.any(center + outer > 1))
            targets = centers[(radial >= inner) & (radial <= outer)]
            if targets.size == 0:
                value = 0.0
            else:
                size = _difference_kernel(kernel, targets[None, :, :], sources[:, None, :], center, variant)
                integral = np.sum(size ** r, axis=1) * grid.cell_volume
                value = float(np.max(inner ** grid.dimension * (integral / inner ** grid.dimension) ** (1.0 / r)))
            running += value
            rows.append(HormanderRow(n=n, k=k, j=j, value=value, partial_sum=running, truncated=truncated))
    modulus = HormanderModulus(r=r, variant=variant, rows=tuple(rows))
    if modulus.any_truncated:
        logger.warning(f'{kernel.name}: some Hörmander annuli leave the window and are flagged truncated')
    return modulus


def vector_apply(kernel: VectorKernel, f: OperatorField) -> List[OperatorField]:
    """ [T_k f] for the components of a vector kernel, diagonal cell excluded. """
    _check_dimension(kernel, f.grid)
    matrices = kernel_matrix(kernel, f.grid)
    return [_integrate(matrix, f) for matrix in matrices]


def _square_sum(fields: Sequence[OperatorField], row: bool) -> OperatorField:
    values = sum((a.values @ adjoint(a.values)) if row else (adjoint(a.values) @ a.values) for a in fields)
    return OperatorField(fields[0].grid, positive_sqrt(values), positive=True)


def column_norm(fields: Sequence[OperatorField], p: float = 1.0, w: Optional[Weight] = None) -> float:
    """ ||(sum_k |a_k|^2)^{1/2}||_{L_p^w} """
    return weighted_trace(_square_sum(fields, row=False), w, p)


def row_norm(fields: Sequence[OperatorField], p: float = 1.0, w: Optional[Weight] = None) -> float:
    """ ||(sum_k |a_k^*|^2)^{1/2}||_{L_p^w} """
    return weighted_trace(_square_sum(fields, row=True), w, p)


def cr_norm(fields: Sequence[OperatorField], p: float = 1.0, w: Optional[Weight] = None) -> float:
    """
    Norm of (a_k) in the column/row space: the max of both norms for p >= 2, and for p < 2 an upper bound for the
    infimum over splits a_k = b_k + c_k, taken over the pure column split, the pure row split and the split sending
    the components of at least median L_p norm to the column side.
    """
    if p < 1:
        raise InvalidExponentError(f'p must be >= 1, got {p}')
    fields = list(fields)
    if not fields:
        return 0.0
    if p >= 2:
        return max(column_norm(fields, p, w), row_norm(fields, p, w))
    norms = np.array([weighted_trace(a, w, p) for a in fields])
    heavy = norms >= np.median(norms)
    column_part = [a for a, flag in zip(fields, heavy) if flag]
    row_part = [a for a, flag in zip(fields, heavy) if not flag]
    split = (column_norm(column_part, p, w) if column_part else 0.0) + (row_norm(row_part, p, w) if row_part else 0.0)
    return min(column_norm(fields, p, w), row_norm(fields, p, w), split)


def _min_slack(b: np.ndarray, family: np.ndarray) -> np.ndarray:
    """ Per cell, the smallest eigenvalue of b - a_n and b + a_n over the family. """
    upper, _ = eigh(b[None] - family)
    lower, _ = eigh(b[None] + family)
    return np.minimum(upper[..., 0].min(axis=0), lower[..., 0].min(axis=0))


def _cell_objective(b: np.ndarray, p: float) -> np.ndarray:
    values, _ = eigh(b)
    values = np.clip(values, 0.0, None)
    if np.isinf(p):
        return values[..., -1]
    return np.sum(values ** p, axis=-1)


def _commuting_supremum(family: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """ Cellwise sup_n |a_n| in a joint eigenbasis, and the mask of cells where the family commutes. """
    count = family.shape[0]
    scale = np.maximum(1.0, np.max(np.abs(family), axis=(0, 2, 3)))
    commutes = np.ones(family.shape[1], dtype=bool)
    for a, b in itertools.combinations(range(count), 2):
        defect = np.max(np.abs(family[a] @ family[b] - family[b] @ family[a]), axis=(1, 2))
        commutes &= defect <= FEASIBILITY_TOLERANCE * 1e2 * scale
    mixing = 1.0 + np.sqrt(np.arange(count) + 2.0)
    _, basis = eigh(np.tensordot(mixing, family, axes=1))
    diagonals = np.real(np.einsum('cji,ncjk,cki->nci', np.conj(basis), family, basis))
    supremum = np.max(np.abs(diagonals), axis=0)
    return (basis * supremum[:, None, :]) @ adjoint(basis), commutes


def _line_search(start: np.ndarray, target: np.ndarray, family: np.ndarray, tolerance: np.ndarray) -> np.ndarray:
    """ Per cell, the point closest to `target` on the segment from the feasible `start` that stays feasible. """
    direction = target - start
    accepted = np.zeros(start.shape[0])
    full = _min_slack(target, family) >= -tolerance
    accepted[full] = 1.0
    low = np.zeros(start.shape[0])
    high = np.ones(start.shape[0])
    pending = ~full
    for _ in range(BISECTION_STEPS):
        if not np.any(pending):
            break
        middle = (low + high) / 2
        feasible = _min_slack(start + middle[:, None, None] * direction, family) >= -tolerance
        low = np.where(pending & feasible, middle, low)
        high = np.where(pending & ~feasible, middle, high)
    accepted[pending] = low[pending]
    return start + accepted[:, None, None] * direction


def maximal_linfty_bound(family: Sequence[OperatorField], p: float = 1.0, w: Optional[Weight] = None) \
        -> Tuple[float, float]:
    """
    (upper, lower) bounds for ||(a_n)||_{L_p^w(l_inf)} = inf {||b||_{L_p^w} : -b <= a_n <= b}.

    lower = max_n ||a_n||_{L_p^w}. upper is the norm of a feasible cellwise majorant b, built as follows:

    1. start from whichever of sum_n |a_n| and max_n ||a_n|| 1 has the smaller ||b(x)||_p^p. sum_n |a_n| is the
       delta -> 0 limit of sum_n (a_n^2 + delta)^{1/2}, and both satisfy -b <= a_n <= b exactly;
    2. repeat at most MAXIMAL_ITERATIONS times: shrink b by its smallest slack (the least eigenvalue of b -+ a_n),
       then bisect along the segment towards a target (the joint-eigenbasis supremum on commuting cells, else
       (sum_n a_n^2 / N)^{1/2}) for the furthest point that stays feasible;
    3. a cell takes the new point only when ||b(x)||_p^p drops, and the loop stops once no cell improves.

    Every iterate is feasible, so upper is a true upper bound and upper >= lower.
    """
    family = list(family)
    if not family:
        raise ContractViolationError('maximal bound of an empty family')
    if p < 1:
        raise InvalidExponentError(f'p must be >= 1, got {p}')
    for a in family:
        if not a.hermitian:
            raise ContractViolationError('maximal bounds need self-adjoint families')
    grid = family[0].grid
    stack = np.stack([a.values for a in family])
    lower = max(weighted_trace(a, w, p) for a in family)

    scale = np.maximum(1.0, np.max(np.abs(stack), axis=(0, 2, 3)))
    tolerance = FEASIBILITY_TOLERANCE * scale
    sum_abs = np.sum(abs_op(stack), axis=0)
    spectral = identity_like(stack[0]) * np.max(np.linalg.norm(stack, ord=2, axis=(2, 3)), axis=0)[:, None, None]
    majorant = np.where((_cell_objective(sum_abs, p) <= _cell_objective(spectral, p))[:, None, None], sum_abs,
                        spectral)
    commuting, commutes = _commuting_supremum(stack)
    rms = positive_sqrt(np.sum(stack @ stack, axis=0) / len(family))
    target = np.where(commutes[:, None, None], commuting, rms)

    objective = _cell_objective(majorant, p)
    for iteration in range(MAXIMAL_ITERATIONS):
        slack = np.clip(_min_slack(majorant, stack), 0.0, None)
        shrunk = majorant - slack[:, None, None] * identity_like(majorant)
        candidate = _line_search(shrunk, target, stack, tolerance)
        candidate_objective = _cell_objective(candidate, p)
        improved = candidate_objective < objective - 1e-12 * (1 + objective)
        if not np.any(improved):
            break
        majorant = np.where(improved[:, None, None], candidate, majorant)
        objective = np.where(improved, candidate_objective, objective)
    logger.debug(f'maximal majorant settled after {iteration + 1} iterations')

    if np.isinf(p):
        upper = float(np.max(objective))
    else:
        upper = float(np.sum(objective * weight_values(grid, w)) * grid.cell_volume) ** (1.0 / p)
    return max(upper, lower), lower


@dataclass(frozen=True)
class MaximalCertificate:
    passed: bool
    mass: float
    worst: float
    lam: float


def weak_maximal_certificate(family: Sequence[OperatorField], lam: float, e: OperatorField,
                             w: Optional[Weight] = None) -> MaximalCertificate:
    """ Checks ||e a_k e||_inf <= lam for every k and returns the mass lam phi^w(1 - e). """
    if lam <= 0:
        raise ContractViolationError(f'lambda must be positive, got {lam}')
    if not e.projection:
        try:
            check_projection(e.values, PROJECTION_TOLERANCE)
        except NotProjectionError as exc:
            raise NotProjectionError(f'certificate witness is not a projection: {exc}') from exc
    worst = max((a.sandwich(e).norm_inf() for a in family), default=0.0)
    complement = OperatorField(e.grid, identity_like(e.values) - e.values)
    mass = lam * TraceFunctional(w)(complement)
    return MaximalCertificate(passed=worst <= lam * (1 + CERTIFICATE_SLACK), mass=float(mass), worst=worst, lam=lam)


def scalar_weak_oracle(f: OperatorField, lam: float, w: Optional[Weight] = None) -> float:
    """ lam w({|f| > lam}) for a scalar field. """
    values = np.abs(f.scalar_values())
    return float(lam * np.sum(weight_values(f.grid, w)[values > lam]) * f.grid.cell_volume)


def scalar_supremum(family: Sequence[OperatorField]) -> OperatorField:
    """ sup_k |a_k| of a scalar family. """
    values = np.max(np.abs(np.stack([a.scalar_values() for a in family])), axis=0)
    return OperatorField(family[0].grid, values, positive=True)


def optimal_scalar_witness(family: Sequence[OperatorField], lam: float) -> OperatorField:
    """ The indicator of {sup_k |a_k| <= lam}. """
    supremum = scalar_supremum(family)
    return OperatorField(supremum.grid, supremum.spectral_projection(Interval.at_most(lam)).values, projection=True)


def _f_trace_norm(f: OperatorField, cells: slice) -> np.ndarray:
    return np.sum(np.linalg.svd(f.values[cells], compute_uv=False), axis=-1)


def annular_lemma_ratio(kernel: Kernel, f: OperatorField, w: Optional[Weight], n: int, k: int, p: float = 1.0) -> float:
    """
    Ratio of

        sum_{0 <= i <= n-1} |Q_i| (|Q_i|^{-1} int_Q ||f(y)||_1 int_{Q_i} |K_{i,Q}(x, y)|^p w(x) dx dy)^{1/p}

    to ||chi_Q f||_{L_1^w}^{1/p}, with Q_i the level-i ancestor of Q = (n, k) and
    K_{i,Q}(x, y) = K_i(x, y) - K_i(x, c_Q).
    """
    grid = f.grid
    _check_dimension(kernel, grid)
    grid.check_level(n)
    if p < 1:
        raise InvalidExponentError(f'p must be >= 1, got {p}')
    cells = grid.cube_cells(n, k)
    masses = _f_trace_norm(f, cells)
    weights = weight_values(grid, w)
    norm = float(np.sum(masses * weights[cells]) * grid.cell_volume)
    if norm == 0:
        return 0.0
    centers = grid.cell_centers
    sources = centers[cells]
    center = grid.cube_centers(n)[k]
    total = 0.0
    for i in range(0, n):
        ancestor = grid.cube_cells(i, k >> (grid.dimension * (n - i)))
        targets = centers[ancestor]
        annulus = psi_partition(i, grid.dimension)
        near = annulus(np.linalg.norm(targets[None, :, :] - sources[:, None, :], axis=-1))
        far = annulus(np.linalg.norm(targets - center, axis=-1))
        difference = kernel(targets[None, :, :], sources[:, None, :]) * near - kernel(targets, center)[None, :] * far
        inner = np.sum(np.abs(difference) ** p * weights[ancestor][None, :], axis=1) * grid.cell_volume
        volume = grid.cube_volume(i)
        total += volume * (np.sum(masses * inner) * grid.cell_volume / volume) ** (1.0 / p)
    return total / norm ** (1.0 / p)


def quintuple_annuli_ratio(kernel: AnyKernel, f: OperatorField, w: Optional[Weight], n: int, k: int,
                           p: float = 1.0) -> float:
    """
    Ratio of

        sum_{j >= 1} |5^{j+1}Q| (|5^{j+1}Q|^{-1} int_Q ||f(y)||_1 int_{5^{j+1}Q \\ 5^j Q} ||K_Q(x, y)||^p w(x) dx dy)^{1/p}

    to ||chi_Q f||_{L_1^w}^{1/p}, with K_Q(x, y) = K(x, y) - K(x, c_Q), the annuli clipped to the window and
    |5^{j+1}Q| the unclipped volume.
    """
    grid = f.grid
    _check_dimension(kernel, grid)
    grid.check_level(n)
    if p < 1:
        raise InvalidExponentError(f'p must be >= 1, got {p}')
    cells = grid.cube_cells(n, k)
    masses = _f_trace_norm(f, cells)
    weights = weight_values(grid, w)
    norm = float(np.sum(masses * weights[cells]) * grid.cell_volume)
    if norm == 0:
        return 0.0
    centers = grid.cell_centers
    sources = centers[cells]
    center = grid.cube_centers(n)[k]
    total = 0.0
    j = 1
    inside = grid.dilated_mask(n, k, 5)
    while not np.all(inside):
        outside = grid.dilated_mask(n, k, 5 ** (j + 1))
        annulus = outside & ~inside
        targets = centers[annulus]
        difference = _kernel_size_difference(kernel, (targets[None, :, :], sources[:, None, :]),
                                             (targets[None, :, :], center))
        inner = np.sum(difference ** p * weights[annulus][None, :], axis=1) * grid.cell_volume
        volume = (5.0 ** (j + 1) * grid.side_length(n)) ** grid.dimension
        total += volume * (np.sum(masses * inner) * grid.cell_volume / volume) ** (1.0 / p)
        inside = outside
        j += 1
    return total / norm ** (1.0 / p)


def kernel_norm_proxy(kernel: Kernel, grid: DyadicGrid) -> float:
    """
    Number of lacunary truncations times max_x sum_y |K(x, y)| |cell|.

    Since sum_{i < j} psi_i <= 1, every ||T_j f(x)|| is at most the row sum times ||f||_inf, so for
    lam >= ||f||_inf max(1, proxy) nothing is stopped and sum_j |T_j f| <= lam cellwise.
    """
    row_sum = np.max(np.sum(np.abs(_scalar_matrix(kernel, grid)), axis=1)) * grid.cell_volume
    return float(len(lacunary_range(grid)) * row_sum)


def spectral_witness(a: OperatorField, lam: float) -> OperatorField:
    """ chi_[0, lam](a) for a positive majorant a. """
    return OperatorField(a.grid, spectral_projection(a.values, Interval.closed(0.0, lam)), projection=True)


def refine_witness(family: Sequence[OperatorField], lam: float, e: OperatorField) -> OperatorField:
    """
    Enlarges a witness cell by cell while keeping max_k ||e a_k e||_inf <= lam.

    The weak-type condition is cellwise, so every cell may take the largest valid projection among e(x),
    chi_[0, lam](sum_k |a_k|)(x) (valid because ||p a p|| <= ||p |a| p|| for Hermitian a) and the identity
    (valid where max_k ||a_k(x)|| <= lam). e(x) is kept unless a valid candidate has strictly larger rank.
    """
    if lam <= 0:
        raise ContractViolationError(f'lambda must be positive, got {lam}')
    stack = np.stack([a.values for a in family])
    budget = lam * (1 + CERTIFICATE_SLACK)
    summed = OperatorField(e.grid, np.sum(abs_op(stack), axis=0), positive=True)
    best = e.values
    start_rank = np.real(np.trace(best, axis1=1, axis2=2))
    best_rank = start_rank
    for candidate in (spectral_witness(summed, lam).values, identity_like(e.values)):
        worst = np.max(np.linalg.norm(candidate[None] @ stack @ candidate[None], ord=2, axis=(2, 3)), axis=0)
        rank = np.real(np.trace(candidate, axis1=1, axis2=2))
        better = (worst <= budget) & (rank > best_rank + 0.5)
        best = np.where(better[:, None, None], candidate, best)
        best_rank = np.where(better, rank, best_rank)
    logger.debug(f'witness refined on {int(np.sum(best_rank > start_rank + 0.5))} of {e.grid.num_cells} cells')
    return OperatorField(e.grid, best, projection=True)

"""
Finite matrix model of a semifinite algebra with its trace.

Every operation accepts either a :class:`MatrixElement` or a numpy stack of shape ``(..., m, m)``. Stacks are
processed in one vectorized call, which is how the dyadic fields use this module; a :class:`MatrixElement` in gives
a :class:`MatrixElement` out.

The trace is the standard, unnormalized matrix trace.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Union

import numpy as np
import scipy.linalg

from nczw.exceptions import EigensolverError, InvalidExponentError, NotHermitianError, NotProjectionError

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-12
PROJECTION_TOLERANCE = 1e-10
SPECTRAL_SNAP = 1e-10
RANK_THRESHOLD = 1e-10
SUPPORTED_DIMS = (1, 2, 4, 8)


@dataclass(frozen=True)
class Interval:
    """ Real interval with open/closed endpoint flags, used to select spectral projections. """
    low: float = -np.inf
    high: float = np.inf
    low_closed: bool = False
    high_closed: bool = False

    @classmethod
    def above(cls, lam: float) -> 'Interval':
        """ (lam, inf) """
        return cls(low=lam)

    @classmethod
    def at_most(cls, lam: float) -> 'Interval':
        """ (-inf, lam] """
        return cls(high=lam, high_closed=True)

    @classmethod
    def closed(cls, low: float, high: float) -> 'Interval':
        return cls(low=low, high=high, low_closed=True, high_closed=True)

    @classmethod
    def left_open(cls, low: float, high: float) -> 'Interval':
        """ (low, high] """
        return cls(low=low, high=high, high_closed=True)

    @classmethod
    def half_open(cls, low: float, high: float) -> 'Interval':
        """ [low, high) """
        return cls(low=low, high=high, low_closed=True)

    def contains(self, values: np.ndarray, snap: float = SPECTRAL_SNAP) -> np.ndarray:
        """
        Classify eigenvalues against the interval.

        Values within `snap` of an endpoint count as inside a closed endpoint and outside an open one.
        """
        values = np.asarray(values, dtype=float)
        if self.low_closed:
            lower = values >= self.low - snap
        else:
            lower = values > self.low + snap
        if self.high_closed:
            upper = values <= self.high + snap
        else:
            upper = values < self.high - snap
        return lower & upper


class MatrixElement:
    """ Immutable element of the m x m matrix algebra. """

    def __init__(self, entries, hermitian: bool = False, projection: bool = False):
        """
        :param entries: square matrix (anything numpy can turn into one)
        :param hermitian: claim self-adjointness; validated
        :param projection: claim e = e* = e^2; validated, implies hermitian
        """
        matrix = np.array(entries, dtype=complex)
        if matrix.ndim == 0:
            matrix = matrix.reshape(1, 1)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise NotHermitianError(f'expected a square matrix, got shape {matrix.shape}')
        hermitian = hermitian or projection
        if hermitian:
            check_hermitian(matrix)
            matrix = hermitian_part(matrix)
        if projection:
            check_projection(matrix)
        matrix.setflags(write=False)
        self._entries = matrix
        self._hermitian = hermitian
        self._projection = projection

    @classmethod
    def identity(cls, m: int) -> 'MatrixElement':
        return cls(np.eye(m), projection=True)

    @classmethod
    def zeros(cls, m: int) -> 'MatrixElement':
        return cls(np.zeros((m, m)), projection=True)

    @classmethod
    def diagonal(cls, values) -> 'MatrixElement':
        values = np.asarray(values)
        return cls(np.diag(values), hermitian=bool(np.all(np.isreal(values))))

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def is_hermitian(self) -> bool:
        return self._hermitian

    @property
    def is_projection(self) -> bool:
        return self._projection

    def adjoint(self) -> 'MatrixElement':
        return MatrixElement(adjoint(self._entries), hermitian=self._hermitian, projection=self._projection)

    def __array__(self, dtype=None, copy=None):
        return self._entries if dtype is None else self._entries.astype(dtype)

    def __add__(self, other):
        return MatrixElement(self._entries + _as_array(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return MatrixElement(self._entries - _as_array(other))

    def __rsub__(self, other):
        return MatrixElement(_as_array(other) - self._entries)

    def __neg__(self):
        return MatrixElement(-self._entries, hermitian=self._hermitian)

    def __mul__(self, scalar):
        if isinstance(scalar, MatrixElement):
            raise TypeError('use @ for the algebra product')
        hermitian = self._hermitian and np.isreal(scalar)
        return MatrixElement(self._entries * scalar, hermitian=hermitian)

    def __rmul__(self, scalar):
        return self.__mul__(scalar)

    def __matmul__(self, other):
        return MatrixElement(self._entries @ _as_array(other))

    def __rmatmul__(self, other):
        return MatrixElement(_as_array(other) @ self._entries)

    def __repr__(self):
        flags = 'projection' if self._projection else 'hermitian' if self._hermitian else 'general'
        return f'<MatrixElement m={self.dim} {flags}>'


ElementOrStack = Union[MatrixElement, np.ndarray]


@dataclass(frozen=True)
class SpectralDecomposition:
    """ Distinct eigenvalues (ascending) and their mutually orthogonal eigenprojections. """
    eigenvalues: List[float]
    eigenprojections: List[MatrixElement]

    def reconstruct(self) -> np.ndarray:
        return sum(value * np.asarray(projection) for value, projection in
                   zip(self.eigenvalues, self.eigenprojections))


def _as_array(x) -> np.ndarray:
    if isinstance(x, MatrixElement):
        return x.entries
    return np.asarray(x, dtype=complex)


def _like(x, result: np.ndarray, **flags):
    if isinstance(x, MatrixElement):
        return MatrixElement(result, **flags)
    return result


def adjoint(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def hermitian_part(x: np.ndarray) -> np.ndarray:
    return (x + adjoint(x)) / 2


def identity_like(x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(x.shape[-1], dtype=complex), x.shape).copy()


def hermitian_defect(x: ElementOrStack) -> float:
    """ Max-entry distance to the adjoint, relative to the entry scale. """
    x = _as_array(x)
    if x.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(x))))
    return float(np.max(np.abs(x - adjoint(x)))) / scale


def check_hermitian(x: ElementOrStack, tolerance: float = HERMITIAN_TOLERANCE) -> None:
    defect = hermitian_defect(x)
    if defect > tolerance:
        raise NotHermitianError(f'element is not Hermitian (defect {defect:.3g})')


def projection_defect(x: ElementOrStack) -> float:
    x = _as_array(x)
    if x.size == 0:
        return 0.0
    return max(float(np.max(np.abs(x @ x - x))), float(np.max(np.abs(x - adjoint(x)))))


def check_projection(x: ElementOrStack, tolerance: float = PROJECTION_TOLERANCE) -> None:
    defect = projection_defect(x)
    if defect > tolerance:
        raise NotProjectionError(f'element is not a projection (defect {defect:.3g})')


def eigh(x: ElementOrStack):
    """ Batched Hermitian eigendecomposition with ascending eigenvalues. """
    try:
        return np.linalg.eigh(hermitian_part(_as_array(x)))
    except np.linalg.LinAlgError as e:
        raise EigensolverError(f'eigensolver failed: {e}') from e


def functional_calculus(x: ElementOrStack, func: Callable[[np.ndarray], np.ndarray]) -> ElementOrStack:
    """ Apply a real function to the spectrum of a Hermitian element or stack. """
    values, vectors = eigh(x)
    result = (vectors * func(values)[..., None, :]) @ adjoint(vectors)
    return _like(x, result, hermitian=True)


def positive_sqrt(x: ElementOrStack) -> ElementOrStack:
    return functional_calculus(x, lambda v: np.sqrt(np.clip(v, 0.0, None)))


def positive_power(x: ElementOrStack, power: float) -> ElementOrStack:
    return functional_calculus(x, lambda v: np.power(np.clip(v, 0.0, None), power))


def trace(a: ElementOrStack):
    """ Standard matrix trace; real when the imaginary part is at rounding level. """
    value = np.trace(_as_array(a), axis1=-2, axis2=-1)
    scale = np.maximum(1.0, np.abs(value))
    if np.all(np.abs(np.imag(value)) <= HERMITIAN_TOLERANCE * scale):
        value = np.real(value)
    if np.ndim(value) == 0:
        return value.item()
    return value


def abs_op(a: ElementOrStack) -> ElementOrStack:
    """ |a| = (a* a)^{1/2} """
    x = _as_array(a)
    return _like(a, positive_sqrt(adjoint(x) @ x), hermitian=True)


def spectral_projection(a: ElementOrStack, interval: Interval, snap: float = SPECTRAL_SNAP) -> ElementOrStack:
    """ chi_B(a) for a Hermitian element or stack, with endpoint snapping. """
    check_hermitian(a)
    values, vectors = eigh(a)
    mask = interval.contains(values, snap=snap).astype(float)
    result = (vectors * mask[..., None, :]) @ adjoint(vectors)
    return _like(a, result, projection=True)


def spectral_decomposition(a: MatrixElement, snap: float = SPECTRAL_SNAP) -> SpectralDecomposition:
    check_hermitian(a)
    try:
        values, vectors = scipy.linalg.eigh(hermitian_part(_as_array(a)))
    except np.linalg.LinAlgError as e:
        raise EigensolverError(f'eigensolver failed: {e}') from e
    eigenvalues = []
    projections = []
    start = 0
    for stop in range(1, len(values) + 1):
        if stop < len(values) and values[stop] - values[stop - 1] <= snap:
            continue
        block = vectors[:, start:stop]
        eigenvalues.append(float(np.mean(values[start:stop])))
        projections.append(MatrixElement(block @ adjoint(block), projection=True))
        start = stop
    return SpectralDecomposition(eigenvalues, projections)


def schatten_norm(a: ElementOrStack, p: float):
    """ (trace |a|^p)^{1/p}; p = inf gives the operator norm. """
    if p < 1:
        raise InvalidExponentError(f'Schatten exponent must be >= 1, got {p}')
    singular_values = np.linalg.svd(_as_array(a), compute_uv=False)
    if np.isinf(p):
        result = np.max(singular_values, axis=-1)
    else:
        result = np.sum(singular_values ** p, axis=-1) ** (1.0 / p)
    if np.ndim(result) == 0:
        return float(result)
    return result


def operator_norm(a: ElementOrStack):
    return schatten_norm(a, np.inf)


def range_basis(e: ElementOrStack, threshold: float = RANK_THRESHOLD) -> np.ndarray:
    """ Orthonormal basis (as columns) of the range of a single matrix. """
    x = _as_array(e)
    if not np.any(np.abs(x) > threshold):
        return np.zeros((x.shape[0], 0), dtype=complex)
    return scipy.linalg.orth(x, rcond=threshold)


def _projection_onto(basis: np.ndarray, m: int) -> np.ndarray:
    if basis.shape[1] == 0:
        return np.zeros((m, m), dtype=complex)
    return basis @ adjoint(basis)


def lattice_meet(e: ElementOrStack, f: ElementOrStack, threshold: float = RANK_THRESHOLD) -> ElementOrStack:
    """ Projection onto the intersection of the ranges. """
    check_projection(e)
    check_projection(f)
    x, y = _as_array(e), _as_array(f)
    if x.ndim > 2:
        result = np.stack([np.asarray(lattice_meet(a, b, threshold)) for a, b in
                           zip(x.reshape(-1, *x.shape[-2:]), y.reshape(-1, *y.shape[-2:]))]).reshape(x.shape)
        return result
    m = x.shape[0]
    range_e, range_f = range_basis(x, threshold), range_basis(y, threshold)
    if range_e.shape[1] == 0 or range_f.shape[1] == 0:
        return _like(e, np.zeros((m, m), dtype=complex), projection=True)
    coefficients = scipy.linalg.null_space(np.hstack([range_e, -range_f]), rcond=threshold)
    if coefficients.shape[1] == 0:
        return _like(e, np.zeros((m, m), dtype=complex), projection=True)
    common = range_e @ coefficients[:range_e.shape[1]]
    return _like(e, _projection_onto(range_basis(common, threshold), m), projection=True)


def lattice_join(e: ElementOrStack, f: ElementOrStack, threshold: float = RANK_THRESHOLD) -> ElementOrStack:
    """ Projection onto the span of both ranges. """
    check_projection(e)
    check_projection(f)
    x, y = _as_array(e), _as_array(f)
    if x.ndim > 2:
        return np.stack([np.asarray(lattice_join(a, b, threshold)) for a, b in
                         zip(x.reshape(-1, *x.shape[-2:]), y.reshape(-1, *y.shape[-2:]))]).reshape(x.shape)
    m = x.shape[0]
    spanning = np.hstack([range_basis(x, threshold), range_basis(y, threshold)])
    if spanning.shape[1] == 0:
        return _like(e, np.zeros((m, m), dtype=complex), projection=True)
    return _like(e, _projection_onto(range_basis(spanning, threshold), m), projection=True)


def support_projection(x: ElementOrStack, threshold: float = RANK_THRESHOLD) -> ElementOrStack:
    """
    Range projection of a positive element.

    For a sum of projections this is their join, which is how joins over many cubes are taken in one batch.
    """
    return spectral_projection(x, Interval.above(threshold), snap=0.0)


def minimum_eigenvalue(x: ElementOrStack) -> float:
    values, _ = eigh(x)
    return float(np.min(values)) if values.size else 0.0


def usefullem_slack(a: ElementOrStack, b: ElementOrStack, omega: float = 1.0) -> float:
    """
    Slack of omega*trace(a^{-1}(a^2 - b^2)) <= 2*omega*trace(a - b).

    `a` must be positive invertible and `b` positive with b^2 <= a^2.
    """
    x, y = _as_array(a), _as_array(b)
    inverse = functional_calculus(x, lambda v: 1.0 / v)
    left = omega * np.real(np.trace(inverse @ (x @ x - y @ y), axis1=-2, axis2=-1))
    right = 2 * omega * np.real(np.trace(x - y, axis1=-2, axis2=-1))
    return float(np.min(right - left))

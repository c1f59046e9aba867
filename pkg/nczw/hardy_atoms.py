"""
Martingale square functions, weighted Hardy norms and atoms.

Atoms come in three kinds. Simple atoms a live on a projection e of level k: a = a e, E_k(a) = 0 and
||a||_{L_2^w} <= phi(e w)^{-1/2}. Crude atoms factor as y b with E_k(y) = 0 and b level-k measurable. Algebraic atoms are
sums of such products with square-summable norms. Row atoms are the adjoint picture (a = e a, products b y).
"""
import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from nczw.dyadic_model import OperatorField, TraceFunctional, conditional_expectation, martingale_differences, \
    weighted_trace
from nczw.exceptions import ContractViolationError, InvalidExponentError, SingularSquareFunctionError
from nczw.kernels_operators import cr_norm
from nczw.matrix_algebra import Interval, adjoint, eigh, functional_calculus, identity_like, positive_sqrt, \
    spectral_projection
from nczw.weights import Weight

logger = logging.getLogger(__name__)

ATOM_TOLERANCE = 1e-9
DEFAULT_REGULARIZER = 1e-8
EXHAUSTIVE_SIGNS_LIMIT = 12
COLUMN = 'column'
ROW = 'row'
ORIENTATIONS = (COLUMN, ROW)


def _square(values: np.ndarray, orientation: str) -> np.ndarray:
    """ |x|^2 = x^* x for columns, |x^*|^2 = x x^* for rows. """
    return adjoint(values) @ values if orientation == COLUMN else values @ adjoint(values)


def _check_orientation(orientation: str) -> None:
    if orientation not in ORIENTATIONS:
        raise ContractViolationError(f'orientation must be one of {ORIENTATIONS}, got {orientation!r}')


@dataclass(eq=False)
class SquareFunctionBundle:
    """
    Partial sums of the square functions of f, index n - 1 holding the sum up to level n:

        S_{c,n}^2 = sum_{k<=n} |df_k|^2,     s_{c,n}^2 = |df_1|^2 + sum_{2<=k<=n} E_{k-1}|df_k|^2

    and the same with |df_k^*|^2 for rows.
    """
    source: OperatorField
    differences: List[OperatorField]
    column_squares: List[np.ndarray]
    row_squares: List[np.ndarray]
    conditional_column_squares: List[np.ndarray]
    conditional_row_squares: List[np.ndarray]

    def _root(self, squares: List[np.ndarray], n: Optional[int]) -> OperatorField:
        grid = self.source.grid
        if not squares:
            return OperatorField.zeros(grid, self.source.m)
        n = grid.depth if n is None else n
        grid.check_level(n)
        if n == 0:
            return OperatorField.zeros(grid, self.source.m)
        return OperatorField(grid, positive_sqrt(squares[n - 1]), positive=True)

    def S_c(self, n: Optional[int] = None) -> OperatorField:
        return self._root(self.column_squares, n)

    def S_r(self, n: Optional[int] = None) -> OperatorField:
        return self._root(self.row_squares, n)

    def s_c(self, n: Optional[int] = None) -> OperatorField:
        return self._root(self.conditional_column_squares, n)

    def s_r(self, n: Optional[int] = None) -> OperatorField:
        return self._root(self.conditional_row_squares, n)

    def square(self, orientation: str = COLUMN, conditional: bool = False) -> OperatorField:
        _check_orientation(orientation)
        if conditional:
            return self.s_c() if orientation == COLUMN else self.s_r()
        return self.S_c() if orientation == COLUMN else self.S_r()

    def domination_defect(self, orientation: str = COLUMN) -> float:
        """ Min eigenvalue of 2^d s^2 - S^2; non-negative up to rounding. """
        _check_orientation(orientation)
        if not self.differences:
            return 0.0
        full = (self.column_squares if orientation == COLUMN else self.row_squares)[-1]
        conditional = (self.conditional_column_squares if orientation == COLUMN else self.conditional_row_squares)[-1]
        values, _ = eigh(self.source.grid.children * conditional - full)
        return float(np.min(values))

    def hardy_norm(self, w: Optional[Weight] = None, orientation: str = COLUMN) -> float:
        """ ||f||_{H_1^w} = phi^w(S(f)) """
        return weighted_trace(self.square(orientation), w, 1)

    def conditional_hardy_norm(self, w: Optional[Weight] = None, orientation: str = COLUMN) -> float:
        """ ||f||_{h_1^w} = phi^w(s(f)) """
        return weighted_trace(self.square(orientation, conditional=True), w, 1)


def _running(terms: List[np.ndarray]) -> List[np.ndarray]:
    return list(itertools.accumulate(terms))


def square_functions(f: OperatorField) -> SquareFunctionBundle:
    differences = martingale_differences(f)
    grid = f.grid
    column_terms, row_terms, conditional_column, conditional_row = [], [], [], []
    for k, df in enumerate(differences, start=1):
        column = _square(df.values, COLUMN)
        row = _square(df.values, ROW)
        column_terms.append(column)
        row_terms.append(row)
        if k == 1:
            conditional_column.append(column)
            conditional_row.append(row)
        else:
            squares = OperatorField(grid, column, hermitian=True)
            conditional_column.append(conditional_expectation(squares, k - 1).values)
            conditional_row.append(conditional_expectation(OperatorField(grid, row, hermitian=True), k - 1).values)
    return SquareFunctionBundle(source=f, differences=differences, column_squares=_running(column_terms),
                                row_squares=_running(row_terms),
                                conditional_column_squares=_running(conditional_column),
                                conditional_row_squares=_running(conditional_row))


def hardy_equivalence_ratio(fields: Union[OperatorField, Sequence[OperatorField]], w: Optional[Weight] = None,
                            orientation: str = COLUMN) -> Tuple[float, float]:
    """ (min, max) over the fields of ||f||_{H_1^w} / ||f||_{h_1^w}, skipping fields with zero norm. """
    if isinstance(fields, OperatorField):
        fields = [fields]
    ratios = []
    for f in fields:
        bundle = square_functions(f)
        conditional = bundle.conditional_hardy_norm(w, orientation)
        if conditional > 0:
            ratios.append(bundle.hardy_norm(w, orientation) / conditional)
    if not ratios:
        raise ContractViolationError('Hardy ratios of zero fields')
    return min(ratios), max(ratios)


@dataclass(frozen=True)
class Atom:
    """
    `value` is the assembled element. `projection` is the level-`level` projection e of a simple atom; `factors`
    holds (y, b) pairs with their levels for crude (one pair) and algebraic atoms.
    """
    kind: str
    level: int
    value: OperatorField
    projection: Optional[OperatorField] = None
    factors: Tuple[Tuple[int, OperatorField, OperatorField], ...] = ()
    orientation: str = COLUMN

    @property
    def grid(self):
        return self.value.grid


@dataclass
class AtomCheck:
    kind: str
    defects: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(defect <= ATOM_TOLERANCE for defect in self.defects.values())


def _product(first: OperatorField, second: OperatorField, orientation: str) -> np.ndarray:
    """ y b for columns, b y for rows. """
    return first.values @ second.values if orientation == COLUMN else second.values @ first.values


def _mean_defect(x: OperatorField, level: int) -> float:
    return float(np.max(np.abs(x.cube_averages[level])))


def _measurability_defect(x: OperatorField, level: int) -> float:
    return x.distance(conditional_expectation(x, level))


def _relative(excess: float, scale: float) -> float:
    return max(0.0, excess) / max(1.0, scale)


def check_atom(atom: Atom, w: Optional[Weight] = None) -> AtomCheck:
    """ Defects of the defining conditions of the atom's kind; all are <= 1e-9 for a valid atom. """
    _check_orientation(atom.orientation)
    atom.grid.check_level(atom.level)
    if atom.kind == 'simple':
        return _check_simple(atom, w)
    if atom.kind == 'crude':
        return _check_crude(atom, w)
    if atom.kind == 'algebraic':
        return _check_algebraic(atom, w)
    raise ContractViolationError(f'unknown atom kind {atom.kind!r}')


def _check_simple(atom: Atom, w: Optional[Weight]) -> AtomCheck:
    a, e, k = atom.value, atom.projection, atom.level
    if e is None:
        raise ContractViolationError('simple atoms carry their projection')
    supported = a.values @ e.values if atom.orientation == COLUMN else e.values @ a.values
    mass = TraceFunctional(w)(e)
    norm = weighted_trace(a, w, 2)
    bound = mass ** -0.5 if mass > 0 else 0.0
    return AtomCheck('simple', {
        'support': float(np.max(np.abs(supported - a.values), initial=0.0)),
        'projection_level': _measurability_defect(e, k),
        'mean': _mean_defect(a, k),
        'norm': _relative(norm - bound, bound),
        'l1': _relative(weighted_trace(a, w, 1) - 1.0, 1.0),
    })


def _check_crude(atom: Atom, w: Optional[Weight]) -> AtomCheck:
    (k, y, b), = atom.factors
    return AtomCheck('crude', {
        'factorization': float(np.max(np.abs(_product(y, b, atom.orientation) - atom.value.values), initial=0.0)),
        'mean': _mean_defect(y, k),
        'measurable': _measurability_defect(b, k),
        'y_norm': _relative(weighted_trace(y, w, 2) - 1.0, 1.0),
        'b_norm': _relative(weighted_trace(b, w, 2) - 1.0, 1.0),
    })


def _check_algebraic(atom: Atom, w: Optional[Weight]) -> AtomCheck:
    if not atom.factors:
        return AtomCheck('algebraic', {'factorization': float(np.max(np.abs(atom.value.values)))})
    total = sum(_product(y, b, atom.orientation) for _, y, b in atom.factors)
    a_mass = sum(weighted_trace(y, w, 2) ** 2 for _, y, _ in atom.factors)
    b_mass = sum(weighted_trace(b, w, 2) ** 2 for _, _, b in atom.factors)
    return AtomCheck('algebraic', {
        'factorization': float(np.max(np.abs(total - atom.value.values), initial=0.0)),
        'mean': max(_mean_defect(y, k) for k, y, _ in atom.factors),
        'measurable': max(_measurability_defect(b, k) for k, _, b in atom.factors),
        'a_norm': _relative(a_mass - 1.0, 1.0),
        'b_norm': _relative(b_mass - 1.0, 1.0),
    })


def atom_cube_cancellation(atom: Atom) -> float:
    """ max over Q in D_k of ||int_Q a|| """
    return _mean_defect(atom.value, atom.level) * atom.grid.cube_volume(atom.level)


def atom_hardy_norm_check(atom: Atom, w: Optional[Weight] = None) -> float:
    """ ||a||_{H_1^w} with the square function matching the atom's orientation. """
    return square_functions(atom.value).hardy_norm(w, atom.orientation)


@dataclass(eq=False)
class AtomicDecomposition:
    """ f = first_level + sum_k coefficients[k] atoms[k] """
    source: OperatorField
    coefficients: List[float]
    atoms: List[Atom]
    first_level: OperatorField
    alphas: List[OperatorField]
    betas: List[OperatorField]
    regularizer: float
    weight: Optional[Weight] = None

    @cached_property
    def assembled(self) -> OperatorField:
        values = self.first_level.values.copy()
        for coefficient, atom in zip(self.coefficients, self.atoms):
            values = values + coefficient * atom.value.values
        return OperatorField(self.source.grid, values)

    @property
    def residual(self) -> float:
        return self.assembled.distance(self.source)

    @property
    def atomic_norm(self) -> float:
        """ sum |lambda_k| plus ||E_1 f||_{L_1^w}, an upper bound for the atomic norm """
        return sum(abs(c) for c in self.coefficients) + weighted_trace(self.first_level, self.weight, 1)

    def product_residual(self) -> float:
        """ distance between f - E_1 f and sum_l alpha_l beta_l """
        total = sum((a.values @ b.values for a, b in zip(self.alphas, self.betas)),
                    np.zeros_like(self.source.values))
        return float(np.max(np.abs(total + self.first_level.values - self.source.values), initial=0.0))

    def predictability_defect(self) -> float:
        """ max_l of ||E_l(alpha_l)|| and the distance of beta_l from its level-l average """
        worst = 0.0
        for level, (alpha, beta) in enumerate(zip(self.alphas, self.betas), start=1):
            worst = max(worst, _mean_defect(alpha, level), _measurability_defect(beta, level))
        return worst


def _inverse(values: np.ndarray) -> np.ndarray:
    return functional_calculus(values, lambda v: 1.0 / v)


def atomic_decompose(f: OperatorField, w: Optional[Weight] = None, delta: Optional[float] = None) \
        -> AtomicDecomposition:
    """
    f - E_1 f = sum_{l=1}^{J-1} alpha_l beta_l with

        alpha_l = sum_{n >= l+1} df_n s_n^{-1} (s_{l+1} - s_l)^{1/2},     beta_l = (s_{l+1} - s_l)^{1/2}

    where s_n = s_{c,n}(f), s_1 = 0 and s_n is replaced by (s_n^2 + delta^2)^{1/2} for n >= 2. The telescoping sum
    of s_{l+1} - s_l reconstructs every difference exactly whatever delta is. The result is one algebraic atom with
    coefficient (sum ||alpha_l||^2 sum ||beta_l||^2)^{1/2}.

    :param delta: regulariser, 1e-8 ||f||_{L_2^w} when omitted; 0 demands invertible s_n
    """
    grid = f.grid
    first_level = conditional_expectation(f, min(1, grid.depth))
    tail = OperatorField(grid, f.values - first_level.values, hermitian=f.hermitian)
    if delta is None:
        delta = DEFAULT_REGULARIZER * weighted_trace(f, w, 2)
    if delta < 0:
        raise ContractViolationError(f'regulariser must be non-negative, got {delta}')
    bundle = square_functions(tail)
    differences = bundle.differences
    identity = identity_like(f.values)
    roots = [np.zeros_like(f.values)]
    for n in range(2, grid.depth + 1):
        squares = bundle.conditional_column_squares[n - 1] + delta ** 2 * identity
        if delta == 0:
            values, _ = eigh(squares)
            scale = max(1.0, float(np.max(values, initial=0.0)))
            if np.min(values) <= 1e-14 * scale:
                raise SingularSquareFunctionError(f's_{n} is singular; pass a positive delta to regularise')
        roots.append(positive_sqrt(squares))
    if delta > 0:
        logger.debug(f'square functions regularised with delta={delta:.3g}')

    increments = [positive_sqrt(roots[l] - roots[l - 1]) for l in range(1, len(roots))]
    inverses = [None] + [_inverse(root) for root in roots[1:]]
    alphas, betas = [], []
    for l in range(1, grid.depth):
        beta = increments[l - 1]
        alpha = sum(differences[n - 1].values @ inverses[n - 1] for n in range(l + 1, grid.depth + 1)) @ beta
        alphas.append(OperatorField(grid, alpha))
        betas.append(OperatorField(grid, beta, hermitian=True))

    coefficients, atoms = [], []
    a_mass = sum(weighted_trace(alpha, w, 2) ** 2 for alpha in alphas)
    b_mass = sum(weighted_trace(beta, w, 2) ** 2 for beta in betas)
    if a_mass > 0 and b_mass > 0:
        a_scale, b_scale = a_mass ** -0.5, b_mass ** -0.5
        factors = tuple((level, alpha * a_scale, beta * b_scale)
                        for level, (alpha, beta) in enumerate(zip(alphas, betas), start=1))
        value = OperatorField(grid, tail.values * a_scale * b_scale)
        coefficients.append(float(np.sqrt(a_mass * b_mass)))
        atoms.append(Atom(kind='algebraic', level=1, value=value, factors=factors))
    return AtomicDecomposition(source=f, coefficients=coefficients, atoms=atoms, first_level=first_level,
                               alphas=alphas, betas=betas, regularizer=delta, weight=w)


def algebraic_to_crude(z: Atom, w: Optional[Weight] = None) -> List[Tuple[float, Atom]]:
    """ z = sum_k lambda_k y_k with y_k = a_k b_k / (||a_k|| ||b_k||) and lambda_k = ||a_k|| ||b_k||. """
    if z.kind != 'algebraic':
        raise ContractViolationError(f'expected an algebraic atom, got {z.kind}')
    pieces = []
    for level, a, b in z.factors:
        a_norm, b_norm = weighted_trace(a, w, 2), weighted_trace(b, w, 2)
        if a_norm == 0 or b_norm == 0:
            continue
        y, b_unit = a / a_norm, b / b_norm
        value = OperatorField(z.grid, _product(y, b_unit, z.orientation))
        pieces.append((a_norm * b_norm, Atom(kind='crude', level=level, value=value, factors=((level, y, b_unit),),
                                             orientation=z.orientation)))
    return pieces


def polar_positive(y: OperatorField, b: OperatorField, orientation: str = COLUMN) \
        -> Tuple[OperatorField, OperatorField]:
    """ Rewrite y b as (y u) |b| (b y as |b^*| (u y) for rows), u the cellwise polar unitary of b. """
    left, singular, right = np.linalg.svd(b.values)
    unitary = left @ right
    if orientation == COLUMN:
        modulus = adjoint(right) @ (singular[..., None] * right)
        return OperatorField(y.grid, y.values @ unitary), OperatorField(b.grid, modulus, positive=True)
    modulus = left @ (singular[..., None] * adjoint(left))
    return OperatorField(y.grid, unitary @ y.values), OperatorField(b.grid, modulus, positive=True)


def crude_to_simple(atom: Atom, base: float, w: Optional[Weight] = None) -> List[Tuple[float, Atom]]:
    """
    Split a crude atom y b over the spectral slices e_k = chi_[l^k, l^{k+1})(b) of a positive b:

        lambda_k = ||y b e_k||_{L_2^w} phi(e_k w)^{1/2},     y_k = y b e_k / lambda_k

    A b that is not positive is first made positive by its polar decomposition.
    """
    if atom.kind != 'crude':
        raise ContractViolationError(f'expected a crude atom, got {atom.kind}')
    if base <= 1:
        raise ContractViolationError(f'slicing base must exceed 1, got {base}')
    (level, y, b), = atom.factors
    if not b.positive:
        try:
            b = OperatorField(b.grid, b.values, positive=True)
        except ContractViolationError:
            logger.debug('crude atom with non-positive b reduced by polar decomposition')
            y, b = polar_positive(y, b, atom.orientation)
    eigenvalues, _ = eigh(b.values)
    positive = eigenvalues[eigenvalues > 1e-12 * max(1.0, float(np.max(eigenvalues, initial=0.0)))]
    if positive.size == 0:
        return []
    phi = TraceFunctional(w)
    pieces = []
    lowest = int(np.floor(np.log(positive.min()) / np.log(base))) - 1
    highest = int(np.floor(np.log(positive.max()) / np.log(base))) + 1
    for k in range(lowest, highest + 1):
        interval = Interval.half_open(base ** k, base ** (k + 1))
        e = OperatorField(b.grid, spectral_projection(b.values, interval), projection=True)
        mass = phi(e)
        if mass <= 0:
            continue
        piece = OperatorField(b.grid, _product(y, OperatorField(b.grid, b.values @ e.values), atom.orientation))
        norm = weighted_trace(piece, w, 2)
        if norm == 0:
            continue
        coefficient = norm * mass ** 0.5
        pieces.append((coefficient, Atom(kind='simple', level=level, value=piece / coefficient, projection=e,
                                         orientation=atom.orientation)))
    return pieces


def rademacher_randomize(fields: Sequence[OperatorField], signs: Sequence[float]) -> OperatorField:
    """ sum_k eps_k a_k """
    if len(signs) != len(fields):
        raise ContractViolationError(f'{len(signs)} signs for {len(fields)} fields')
    values = sum(sign * a.values for sign, a in zip(signs, fields))
    return OperatorField(fields[0].grid, values, hermitian=all(a.hermitian for a in fields))


def sign_patterns(count: int, samples: Optional[int] = None, rng: Optional[np.random.Generator] = None) \
        -> np.ndarray:
    """ All 2^N patterns when samples is None (N <= 12), otherwise `samples` random ones. """
    if samples is None:
        if count > EXHAUSTIVE_SIGNS_LIMIT:
            raise ContractViolationError(f'exhaustive signs are limited to {EXHAUSTIVE_SIGNS_LIMIT} fields')
        return np.array(list(itertools.product((1.0, -1.0), repeat=count)))
    rng = np.random.default_rng() if rng is None else rng
    return rng.choice((1.0, -1.0), size=(samples, count))


def khintchine_ratio(fields: Sequence[OperatorField], p: Union[float, str] = 2, w: Optional[Weight] = None,
                     samples: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                     lambdas: Optional[Sequence[float]] = None) -> float:
    """
    Sign average of ||sum eps_k a_k|| over the matching norm of the family:

    - p = 2: E||sum eps_k a_k||_{L_2^w}^2 / sum_k ||a_k||_{L_2^w}^2, exactly 1 over all sign patterns;
    - p = 1: E||sum eps_k a_k||_{L_1^w} / ||(a_k)||_{cr, L_1^w};
    - p = 'weak': sup over lambda of E lambda phi^w(chi_(lambda, inf)(|sum eps_k a_k|)) / ||(a_k)||_{cr, L_1^w}.
    """
    fields = list(fields)
    patterns = sign_patterns(len(fields), samples, rng)
    sums = [rademacher_randomize(fields, signs) for signs in patterns]
    if p == 2:
        denominator = sum(weighted_trace(a, w, 2) ** 2 for a in fields)
        numerator = np.mean([weighted_trace(s, w, 2) ** 2 for s in sums])
    elif p == 1:
        denominator = cr_norm(fields, 1, w)
        numerator = np.mean([weighted_trace(s, w, 1) for s in sums])
    elif p == 'weak':
        denominator = cr_norm(fields, 1, w)
        phi = TraceFunctional(w)
        if lambdas is None:
            top = max(s.norm_inf() for s in sums)
            lambdas = np.geomspace(top / 64, top, 16) if top > 0 else []
        numerator = max((np.mean([lam * phi(s.abs().spectral_projection(Interval.above(lam))) for s in sums])
                         for lam in lambdas), default=0.0)
    else:
        raise InvalidExponentError(f'Khintchine ratios are defined for p in (1, 2, "weak"), got {p!r}')
    if denominator == 0:
        return 0.0
    return float(numerator / denominator)

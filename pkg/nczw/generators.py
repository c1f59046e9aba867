"""
Seeded random inputs shared by the experiment suites and the tests.

Every draw goes through a ``numpy.random.Generator``. :func:`suite_generator` derives one per (seed, suite) pair from
a ``SeedSequence`` so that results do not depend on the order in which suites run.
"""
import zlib
from typing import List, Optional, Sequence, Tuple

import numpy as np

from nczw.dyadic_model import DyadicGrid, OperatorField, TraceFunctional, conditional_expectation, weighted_trace
from nczw.hardy_atoms import COLUMN, Atom
from nczw.matrix_algebra import adjoint, hermitian_part, positive_sqrt
from nczw.weights import Weight

PAYLOAD_LEVELS = 2


def suite_generator(seed: int, suite: str, index: int = 0) -> np.random.Generator:
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(suite.encode()), index))
    return np.random.default_rng(sequence)


def spawn_generators(seed: int, count: int) -> List[np.random.Generator]:
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def random_matrices(rng: np.random.Generator, count: int, m: int) -> np.ndarray:
    return (rng.standard_normal((count, m, m)) + 1j * rng.standard_normal((count, m, m))) / np.sqrt(2)


def middle_third_mask(grid: DyadicGrid) -> np.ndarray:
    return np.all((grid.cell_centers > 1 / 3) & (grid.cell_centers < 2 / 3), axis=1)


def random_positive_field(grid: DyadicGrid, m: int, rng: np.random.Generator, spread: float = 1.5) -> OperatorField:
    """
    Positive field supported in the middle third of the window: g g^*/m per cell, scaled by a log-normal amplitude so
    that some cubes rise well above their neighbours.
    """
    g = random_matrices(rng, grid.num_cells, m)
    amplitude = np.exp(spread * rng.standard_normal(grid.num_cells)) * middle_third_mask(grid)
    values = (g @ adjoint(g)) / m * amplitude[:, None, None]
    return OperatorField(grid, values, positive=True)


def random_hermitian_field(grid: DyadicGrid, m: int, rng: np.random.Generator) -> OperatorField:
    g = random_matrices(rng, grid.num_cells, m)
    return OperatorField(grid, (g + adjoint(g)) / 2, hermitian=True)


def random_hermitian_family(grid: DyadicGrid, m: int, count: int, rng: np.random.Generator) -> List[OperatorField]:
    return [random_hermitian_field(grid, m, rng) for _ in range(count)]


def random_mean_zero_field(grid: DyadicGrid, m: int, rng: np.random.Generator, hermitian: bool = False) \
        -> OperatorField:
    """ A field with E_1 f = 0. """
    g = random_matrices(rng, grid.num_cells, m)
    if hermitian:
        g = (g + adjoint(g)) / 2
    f = OperatorField(grid, g, hermitian=hermitian)
    return OperatorField(grid, f.values - conditional_expectation(f, min(1, grid.depth)).values, hermitian=hermitian)


def random_cube_projection(grid: DyadicGrid, level: int, m: int, rng: np.random.Generator,
                           cubes: Optional[Sequence[int]] = None) -> OperatorField:
    """ e = sum_Q p_Q chi_Q over a few random cubes of the level, each p_Q of random positive rank. """
    count = grid.cube_count(level)
    if cubes is None:
        cubes = rng.choice(count, size=int(rng.integers(1, min(3, count) + 1)), replace=False)
    per_cube = np.zeros((count, m, m), dtype=complex)
    for k in cubes:
        basis, _ = np.linalg.qr(random_matrices(rng, 1, m)[0])
        rank = int(rng.integers(1, m + 1))
        per_cube[k] = basis[:, :rank] @ adjoint(basis[:, :rank])
    return OperatorField.from_cubes(grid, per_cube, level, projection=True)


def random_simple_atom(grid: DyadicGrid, m: int, rng: np.random.Generator, w: Optional[Weight] = None,
                       orientation: str = COLUMN, level: Optional[int] = None) -> Atom:
    """
    a = (g - E_k g) e (or e (g - E_k g) for rows) scaled to a random fraction of phi(e w)^{-1/2}.

    g is constant on cubes PAYLOAD_LEVELS below the atom, so the same atom looks alike on every finer grid.
    """
    if level is None:
        level = int(rng.integers(1, grid.depth))
    e = random_cube_projection(grid, level, m, rng)
    payload = min(level + PAYLOAD_LEVELS, grid.depth)
    g = OperatorField.from_cubes(grid, random_matrices(rng, grid.cube_count(payload), m), payload)
    oscillation = g.values - conditional_expectation(g, level).values
    values = oscillation @ e.values if orientation == COLUMN else e.values @ oscillation
    a = OperatorField(grid, values)
    target = rng.uniform(0.5, 1.0) * TraceFunctional(w)(e) ** -0.5
    return Atom(kind='simple', level=level, value=a * (target / weighted_trace(a, w, 2)), projection=e,
                orientation=orientation)


def random_algebraic_atom(grid: DyadicGrid, m: int, rng: np.random.Generator, w: Optional[Weight] = None,
                          terms: int = 3, orientation: str = COLUMN) -> Atom:
    """ z = sum_k a_k b_k over random levels with sum ||a_k||^2 = sum ||b_k||^2 = 1. """
    levels = sorted(rng.choice(np.arange(1, grid.depth), size=min(terms, grid.depth - 1), replace=False))
    pairs = []
    for level in levels:
        g = OperatorField(grid, random_matrices(rng, grid.num_cells, m))
        a = OperatorField(grid, g.values - conditional_expectation(g, level).values)
        b = conditional_expectation(OperatorField(grid, random_matrices(rng, grid.num_cells, m)), level)
        pairs.append((int(level), a, b))
    a_scale = sum(weighted_trace(a, w, 2) ** 2 for _, a, _ in pairs) ** -0.5
    b_scale = sum(weighted_trace(b, w, 2) ** 2 for _, _, b in pairs) ** -0.5
    factors = tuple((level, a * a_scale, b * b_scale) for level, a, b in pairs)
    if orientation == COLUMN:
        value = sum(a.values @ b.values for _, a, b in factors)
    else:
        value = sum(b.values @ a.values for _, a, b in factors)
    return Atom(kind='algebraic', level=int(levels[0]), value=OperatorField(grid, value), factors=factors,
                orientation=orientation)


def haar_atom(grid: DyadicGrid, level: int, k: int) -> Atom:
    """ Scalar Haar function of the cube (level, k), normalised to |Q|^{-1} so that ||a||_2 = |Q|^{-1/2}. """
    cells = grid.cube_cells(level, k)
    values = np.zeros(grid.num_cells)
    block = np.ones(grid.cells_per_cube(level)) / grid.cube_volume(level)
    block[block.size // 2:] *= -1
    values[cells] = block
    e = np.zeros(grid.num_cells)
    e[cells] = 1.0
    return Atom(kind='simple', level=level, value=OperatorField(grid, values, hermitian=True),
                projection=OperatorField(grid, e, projection=True))


def pauli_pair(grid: DyadicGrid) -> Tuple[OperatorField, OperatorField]:
    """ The anticommuting constant fields sigma_x and sigma_z. """
    sigma_x = np.array([[0, 1], [1, 0]], dtype=complex)
    sigma_z = np.array([[1, 0], [0, -1]], dtype=complex)
    return OperatorField.constant(grid, sigma_x, hermitian=True), OperatorField.constant(grid, sigma_z, hermitian=True)


def random_contraction_pair(m: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """ (a, b) with a positive invertible and b positive, b^2 <= a^2: b = (a (1 - c) a)^{1/2}, 0 <= c <= 1. """
    g = random_matrices(rng, 1, m)[0]
    a = g @ adjoint(g) + 0.1 * np.eye(m)
    h = random_matrices(rng, 1, m)[0]
    c = h @ adjoint(h)
    c = c / (np.linalg.norm(c, 2) * rng.uniform(1.0, 2.0))
    return a, positive_sqrt(hermitian_part(a @ (np.eye(m) - c) @ a))

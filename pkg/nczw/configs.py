import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

from nczw.dyadic_model import SUPPORTED_DIMENSIONS, DyadicGrid
from nczw.exceptions import ConfigError, InvalidKernelSpecError, InvalidWeightSpecError
from nczw.kernels_operators import VectorKernel, parse_kernel_spec
from nczw.matrix_algebra import SUPPORTED_DIMS
from nczw.weights import parse_weight_spec

logger = logging.getLogger(__name__)

PRESETS_DIR = Path(__file__).parent / 'presets'
DEFAULT_CONFIG = PRESETS_DIR / 'default.json'
GOLDEN_CONFIG = PRESETS_DIR / 'golden.json'
PLANE_CONFIG = PRESETS_DIR / 'plane.json'
THREADS_ENV = 'NCZW_THREADS'
MAX_DEPTH = {1: 12, 2: 6}


def _describe(instance, title: str) -> str:
    text = f'{title}:\n'
    max_len = max(len(field_name) for field_name in instance.__dataclass_fields__) + 2
    for field_name, field_info in instance.__dataclass_fields__.items():
        value = getattr(instance, field_name)
        if field_name == 'tolerances':
            value = '(see below)'
        doc = field_info.metadata.get('doc', 'No docstring available')
        text += f'\t{field_name.ljust(max_len)}: {str(value).ljust(5)} | {doc}\n'
    return text


@dataclass
class Tolerances:
    """ Numerical tolerances of the exact-identity checks. """
    hermitian: float = field(default=1e-12, metadata={'doc': 'Max entry gap of a Hermitian element to its adjoint.'})
    projection: float = field(default=1e-10, metadata={'doc': 'Max entry of e^2 - e for projections.'})
    spectral_snap: float = field(default=1e-10, metadata={'doc': 'Eigenvalues this close to an endpoint snap to it.'})
    rank: float = field(default=1e-10, metadata={'doc': 'Singular-value threshold deciding ranks in meets/joins.'})
    identity: float = field(default=1e-9, metadata={'doc': 'Exact identities: reconstructions, sums of projections.'})
    commutator: float = field(default=1e-10, metadata={'doc': 'Cuculescu commutation and height checks.'})
    reconstruction: float = field(default=1e-8, metadata={'doc': 'Regularised identities: atomic decomposition.'})
    exact_zero: float = field(default=1e-12, metadata={'doc': 'Products that vanish by projection algebra.'})

    def __str__(self):
        return _describe(self, 'Tolerances')


@dataclass
class ExperimentConfig:
    """ One experiment: the grids, fields, weights and kernels every suite sweeps over. """
    dimension: int = field(default=1, metadata={'doc': 'Dimension d of the window [0,1)^d (1 or 2).'})
    depths: List[int] = field(default_factory=lambda: [6, 8, 10], metadata={'doc': 'Depth grid J.'})
    matrix_dims: List[int] = field(default_factory=lambda: [1, 2, 4], metadata={'doc': 'Matrix sizes m.'})
    weights: List[str] = field(default_factory=lambda: ['const:1', 'step:2,1', 'power:0.5,0', 'cascade:2,7'],
                               metadata={'doc': 'Weight specs: const:c, step:a,b, power:alpha,x0, cascade:R,seed.'})
    kernels: List[str] = field(default_factory=lambda: ['hilbert', 'riesz:1'],
                               metadata={'doc': 'Scalar kernel specs: hilbert, riesz:j.'})
    vector_kernel: str = field(default='dyadic-poisson:4', metadata={'doc': 'Vector kernel spec: dyadic-poisson:N.'})
    lambdas: Optional[List[float]] = field(default=None,
                                           metadata={'doc': 'Explicit lambda grid; null for the per-field default.'})
    lambda_points: int = field(default=16, metadata={'doc': 'Points of the default log-spaced lambda grid.'})
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2], metadata={'doc': 'Seeds of the random suites.'})
    atom_count: int = field(default=500, metadata={'doc': 'Atoms generated per (depth, m, weight).'})
    sign_samples: int = field(default=16, metadata={'doc': 'Random sign patterns per randomised estimate.'})
    hormander_jmax: int = field(default=6, metadata={'doc': 'Largest annulus index of Hörmander tables.'})
    certificate_constant: float = field(default=4.0,
                                        metadata={'doc': 'C_1 in sup_j ||e T_j f e|| <= C_1 lambda for witnesses.'})
    stability_factor: float = field(default=2.0, metadata={'doc': 'Ratio suites pass when max <= factor * min over J.'})
    trend_threshold: float = field(default=0.5, metadata={'doc': 'Largest |Spearman rho| of ratio against J.'})
    output: str = field(default='nczw-report', metadata={'doc': 'Report directory.'})
    tolerances: Tolerances = field(default_factory=Tolerances, metadata={'doc': 'Numerical tolerances.'})

    def __str__(self):
        return _describe(self, 'Experiment configuration') + str(self.tolerances)

    def validate(self) -> 'ExperimentConfig':
        if self.dimension not in SUPPORTED_DIMENSIONS:
            raise ConfigError(f'dimension must be one of {SUPPORTED_DIMENSIONS}, got {self.dimension}')
        if not self.depths:
            raise ConfigError('the depth grid is empty')
        for depth in self.depths:
            if not 2 <= depth <= MAX_DEPTH[self.dimension]:
                raise ConfigError(f'depth {depth} outside 2..{MAX_DEPTH[self.dimension]} for d={self.dimension}')
        if not self.matrix_dims or any(m not in SUPPORTED_DIMS for m in self.matrix_dims):
            raise ConfigError(f'matrix sizes must be a non-empty subset of {SUPPORTED_DIMS}, got {self.matrix_dims}')
        if not self.seeds:
            raise ConfigError('the seed list is empty')
        if self.lambdas is not None:
            if not self.lambdas:
                raise ConfigError('the lambda grid is empty')
            if any(lam <= 0 for lam in self.lambdas):
                raise ConfigError('lambda values must be positive')
        if self.lambda_points < 1:
            raise ConfigError(f'lambda_points must be positive, got {self.lambda_points}')
        if self.atom_count < 1 or self.sign_samples < 1 or self.hormander_jmax < 1:
            raise ConfigError('atom_count, sign_samples and hormander_jmax must be positive')
        if self.certificate_constant < 1 or self.stability_factor < 1:
            raise ConfigError('certificate_constant and stability_factor must be at least 1')
        coarsest = DyadicGrid(self.dimension, min(self.depths))
        try:
            for spec in self.weights:
                parse_weight_spec(spec, coarsest)
            for spec in self.kernels:
                if isinstance(parse_kernel_spec(spec, self.dimension), VectorKernel):
                    raise ConfigError(f'{spec} is a vector kernel; use vector_kernel')
            if not isinstance(parse_kernel_spec(self.vector_kernel, self.dimension), VectorKernel):
                raise ConfigError(f'{self.vector_kernel} is not a vector kernel')
        except (InvalidWeightSpecError, InvalidKernelSpecError) as e:
            raise ConfigError(str(e)) from e
        if not self.weights or not self.kernels:
            raise ConfigError('at least one weight and one kernel are required')
        return self

    def with_overrides(self, **overrides) -> 'ExperimentConfig':
        """ A validated copy with the non-None overrides applied. """
        return replace(self, **{key: value for key, value in overrides.items() if value is not None}).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f'unknown configuration keys: {", ".join(sorted(unknown))}')
        data = dict(data)
        tolerances = data.pop('tolerances', {}) or {}
        tolerance_names = {f.name for f in fields(Tolerances)}
        if set(tolerances) - tolerance_names:
            raise ConfigError(f'unknown tolerance keys: {", ".join(sorted(set(tolerances) - tolerance_names))}')
        try:
            config = cls(**data, tolerances=Tolerances(**tolerances))
        except TypeError as e:
            raise ConfigError(f'invalid configuration: {e}') from e
        return config.validate()


def load_config(path: Optional[Path] = None) -> ExperimentConfig:
    """ Read and validate a JSON configuration; the packaged default when no path is given. """
    path = DEFAULT_CONFIG if path is None else Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f'cannot read configuration {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path} is not valid JSON: {e}') from e
    if not isinstance(data, dict):
        raise ConfigError(f'{path} must hold a JSON object')
    logger.debug(f'configuration loaded from {path}')
    return ExperimentConfig.from_dict(data)


def thread_count() -> int:
    """ Worker cap from NCZW_THREADS, 1 when unset. """
    value = os.environ.get(THREADS_ENV)
    if value is None or value == '':
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f'{THREADS_ENV} must be a positive integer, got {value!r}')
    if threads < 1:
        raise ConfigError(f'{THREADS_ENV} must be a positive integer, got {value!r}')
    return threads

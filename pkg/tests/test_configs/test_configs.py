import json

import pytest

from nczw.configs import DEFAULT_CONFIG, GOLDEN_CONFIG, PLANE_CONFIG, THREADS_ENV, ExperimentConfig, Tolerances, \
    load_config, thread_count
from nczw.exceptions import ConfigError


def test_packaged_presets_are_valid():
    default = load_config()
    assert default.depths == [6, 8, 10]
    assert default.lambdas is None
    assert default.certificate_constant == 4.0
    assert (default.lambda_points, default.atom_count) == (16, 500)
    assert 4 in default.matrix_dims
    assert 'riesz:1' in default.kernels
    golden = load_config(GOLDEN_CONFIG)
    assert golden.depths == [4, 5]
    assert golden.output == 'nczw-golden'
    assert load_config(DEFAULT_CONFIG) == default
    assert default == ExperimentConfig()


def test_plane_preset_sweeps_riesz_kernels():
    plane = load_config(PLANE_CONFIG)
    assert plane.dimension == 2
    assert plane.kernels == ['riesz:1', 'riesz:2']
    assert max(plane.depths) <= 6


def test_dict_conversion_keeps_every_field():
    config = load_config(GOLDEN_CONFIG)
    assert ExperimentConfig.from_dict(json.loads(config.to_json())) == config


@pytest.mark.parametrize('overrides', [
    {'dimension': 3},
    {'depths': []},
    {'depths': [1]},
    {'depths': [13]},
    {'dimension': 2, 'depths': [7], 'kernels': ['riesz:1']},
    {'matrix_dims': [3]},
    {'matrix_dims': []},
    {'seeds': []},
    {'lambdas': []},
    {'lambdas': [1.0, -2.0]},
    {'lambda_points': 0},
    {'atom_count': 0},
    {'certificate_constant': 0.5},
    {'weights': ['power:2']},
    {'weights': []},
    {'kernels': ['dyadic-poisson:2']},
    {'vector_kernel': 'hilbert'},
])
def test_invalid_configurations_are_rejected(overrides):
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(**overrides)


def test_overrides_skip_missing_values():
    config = ExperimentConfig().with_overrides(seeds=[7], weights=None)
    assert config.seeds == [7]
    assert config.weights == ExperimentConfig().weights


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({'depth': [4]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({'tolerances': {'loose': 1.0}})


def test_tolerances_are_read(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'depths': [4], 'tolerances': {'identity': 1e-7}}))
    config = load_config(path)
    assert config.tolerances.identity == 1e-7
    assert config.tolerances.exact_zero == Tolerances().exact_zero


@pytest.mark.parametrize('content', ['{"depths": [4', '[1, 2]'])
def test_malformed_files_are_rejected(tmp_path, content):
    path = tmp_path / 'config.json'
    path.write_text(content)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.json')


def test_description_lists_every_field():
    text = str(ExperimentConfig())
    for name in ('depths', 'weights', 'certificate_constant', 'exact_zero'):
        assert name in text


@pytest.mark.parametrize('value, expected', [
    (None, 1),
    ('', 1),
    ('4', 4),
])
def test_thread_count(monkeypatch, value, expected):
    if value is None:
        monkeypatch.delenv(THREADS_ENV, raising=False)
    else:
        monkeypatch.setenv(THREADS_ENV, value)
    assert thread_count() == expected


@pytest.mark.parametrize('value', ['0', 'many', '-2'])
def test_thread_count_rejects(monkeypatch, value):
    monkeypatch.setenv(THREADS_ENV, value)
    with pytest.raises(ConfigError):
        thread_count()

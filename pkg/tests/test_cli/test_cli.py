import json

import pytest
from click.testing import CliRunner

from nczw.cli import cli
from nczw.configs import GOLDEN_CONFIG


@pytest.fixture
def runner():
    return CliRunner()


def test_version(runner):
    result = runner.invoke(cli, ['version'])
    assert result.exit_code == 0
    assert result.output.strip()


def test_show_config_as_json(runner):
    result = runner.invoke(cli, ['show-config', '-c', str(GOLDEN_CONFIG), '--json'])
    assert result.exit_code == 0
    assert json.loads(result.output)['depths'] == [4, 5]


def test_show_config_describes_fields(runner):
    result = runner.invoke(cli, ['show-config'])
    assert result.exit_code == 0
    assert 'certificate_constant' in result.output


def test_invalid_config_is_a_usage_error(runner, tmp_path):
    path = tmp_path / 'config.json'
    path.write_text('{"depths": [1]}')
    result = runner.invoke(cli, ['show-config', '-c', str(path)])
    assert result.exit_code == 2


def test_unknown_suite_is_a_usage_error(runner):
    result = runner.invoke(cli, ['check', '-c', str(GOLDEN_CONFIG), '-s', 'bogus', '-q'])
    assert result.exit_code == 2


def test_check_runs_the_decomposition_suite(runner):
    result = runner.invoke(cli, ['check', '-c', str(GOLDEN_CONFIG), '-s', 'czd', '-q'])
    assert result.exit_code == 0


def test_sweep_writes_a_readable_report(runner, tmp_path):
    out = tmp_path / 'report'
    result = runner.invoke(cli, ['sweep', '-c', str(GOLDEN_CONFIG), '-s', 'theorem16', '-q', '-o', str(out)])
    summary = json.loads((out / 'summary.json').read_text())
    assert result.exit_code == 0
    assert summary['passed']
    assert all(record['passed'] for record in summary['stability'] if record['judged'])
    assert summary['suites'] == ['theorem16']

    rendered = runner.invoke(cli, ['report', '-o', str(out)])
    assert rendered.exit_code == 0
    assert 'ratio rows' in rendered.output

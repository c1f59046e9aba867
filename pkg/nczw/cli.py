import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

import click
import coloredlogs

from nczw.configs import ExperimentConfig, load_config
from nczw.exceptions import ConfigError, DiagnosticAbortError
from nczw.ui.ui_manager import UiManager
from nczw.verify import EXACT_SUITES, SUITES, ConstantReport, read_report, resolve_suites, run_config

try:
    from nczw._version import version
except ImportError:
    version = 'unknown'

EXIT_FAILED = 1
EXIT_ABORTED = 2

coloredlogs.install(level=logging.INFO)

logger = logging.getLogger(__name__)


@click.group()
def cli():
    pass


config_option = click.option('-c', '--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                             help='Experiment configuration JSON (the packaged default when omitted)')
suite_option = click.option('-s', '--suite', 'suites', multiple=True,
                            help=f'Suite to run, repeatable: {", ".join(SUITES)} or all')
seed_option = click.option('--seed', 'seeds', type=click.INT, multiple=True,
                           help='Seed replacing the configured seeds, repeatable')
out_option = click.option('-o', '--out', type=click.Path(file_okay=False), help='Report directory')
weight_option = click.option('-w', '--weight', 'weights', multiple=True,
                             help='Weight spec replacing the configured weights, repeatable (e.g. step:2,1)')
kernel_option = click.option('-k', '--kernel', 'kernels', multiple=True,
                             help='Scalar kernel spec replacing the configured kernels, repeatable (e.g. riesz:1)')
verbose_option = click.option('-v', '--verbose', is_flag=True, help='Debug logging')
quiet_option = click.option('-q', '--quiet', is_flag=True, help='No progress bar and no tables')


def run_options(func):
    for option in (quiet_option, verbose_option, kernel_option, weight_option, out_option, seed_option, suite_option,
                   config_option):
        func = option(func)
    return func


def resolve_config(config_path: Optional[str], seeds: Sequence[int] = (), weights: Sequence[str] = (),
                   kernels: Sequence[str] = ()) -> ExperimentConfig:
    """ The configuration file with the command-line lists applied on top. """
    try:
        return load_config(config_path).with_overrides(seeds=list(seeds) or None, weights=list(weights) or None,
                                                       kernels=list(kernels) or None)
    except ConfigError as e:
        raise click.BadParameter(str(e), param_hint='configuration')


def _set_verbosity(verbose: bool) -> None:
    if verbose:
        coloredlogs.set_level(logging.DEBUG)


def _execute(default_suites: Tuple[str, ...], config_path: Optional[str], suites: Sequence[str],
             seeds: Sequence[int], out: Optional[str], weights: Sequence[str], kernels: Sequence[str], quiet: bool,
             write_default: bool) -> ConstantReport:
    cfg = resolve_config(config_path, seeds, weights, kernels)
    try:
        selected = resolve_suites(suites, default_suites)
        report = run_config(cfg, selected, progress=not quiet)
    except ConfigError as e:
        raise click.BadParameter(str(e), param_hint='--suite')
    except DiagnosticAbortError as e:
        logger.error(f'run aborted: {e}')
        sys.exit(EXIT_ABORTED)
    target = out if out is not None else (cfg.output if write_default else None)
    if target is not None:
        report.write(Path(target))
    if not quiet:
        UiManager(json.loads(report.summary_json())).show()
    return report


@cli.command('check')
@run_options
def check(config_path: Optional[str], suites: Sequence[str], seeds: Sequence[int], out: Optional[str],
          weights: Sequence[str], kernels: Sequence[str], verbose: bool, quiet: bool) -> None:
    """ Run the exact-identity suites; exits non-zero when a check fails """
    _set_verbosity(verbose)
    report = _execute(EXACT_SUITES, config_path, suites, seeds, out, weights, kernels, quiet, write_default=False)
    for failed in report.failed_checks[:20]:
        logger.error(f'{failed.suite}/{failed.name} J={failed.depth} seed={failed.seed}: {failed.value:.3g} > '
                     f'{failed.tolerance:.3g}')
    if not report.checks_passed:
        sys.exit(EXIT_FAILED)


@cli.command('sweep')
@run_options
def sweep(config_path: Optional[str], suites: Sequence[str], seeds: Sequence[int], out: Optional[str],
          weights: Sequence[str], kernels: Sequence[str], verbose: bool, quiet: bool) -> None:
    """ Estimate the constants over the configured grids and write the ratio tables """
    _set_verbosity(verbose)
    report = _execute(SUITES, config_path, suites, seeds, out, weights, kernels, quiet, write_default=True)
    if not report.passed:
        sys.exit(EXIT_FAILED)


@cli.command('report')
@click.option('-o', '--out', required=True, type=click.Path(exists=True, file_okay=False),
              help='Report directory written by sweep or check')
def report(out: str) -> None:
    """ Render an existing report directory """
    try:
        summary, rows = read_report(out)
    except ConfigError as e:
        raise click.BadParameter(str(e), param_hint='--out')
    UiManager(summary).show()
    click.echo(f'{len(rows)} ratio rows in {Path(out) / "ratios.csv"}')


@cli.command('show-config')
@config_option
@click.option('--json', 'as_json', is_flag=True, help='Print the resolved configuration as JSON')
def show_config(config_path: Optional[str], as_json: bool) -> None:
    """ Print the resolved configuration """
    cfg = resolve_config(config_path)
    click.echo(cfg.to_json() if as_json else str(cfg))


@cli.command('version')
def cli_version() -> None:
    """ Print the version """
    click.echo(version)


if __name__ == '__main__':
    cli()

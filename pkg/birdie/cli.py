"""
Disparity estimation toolkit - command line entry point
BISG, BIRDiE, sensitivity analysis, simulation and evaluation as batch runs
"""

import logging

import click

from birdie import __version__
from birdie.commands.bisg import bisg_cmd
from birdie.commands.estimate import estimate_cmd
from birdie.commands.evaluate import evaluate_cmd
from birdie.commands.sensitivity import sensitivity_cmd
from birdie.commands.simulate import simulate_cmd
from birdie.config.settings import ANALYSIS_CONFIG, load_run_config
from birdie.middleware.error_handler import handle_exceptions
from birdie.utils.runs import RunContext

LOG_FORMAT = '[%(asctime)s] %(levelname)s in %(module)s: %(message)s'

logger = logging.getLogger(__name__)


@click.group()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              help='KEY=VALUE run config file.')
@click.option('--seed', type=int, help='Root seed; every subsystem seed is derived from it.')
@click.option('--threads', type=click.IntRange(min=1), help='Worker cap (default: available cores).')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Logging level.')
@click.version_option(__version__, prog_name='birdie')
@click.pass_context
@handle_exceptions
def cli(ctx, config_path, seed, threads, log_level):
    """Estimate outcome disparities by race from surname and geography."""
    logging.basicConfig(
        level=(log_level or ANALYSIS_CONFIG['log_level']).upper(),
        format=LOG_FORMAT,
        force=True,
    )
    config = load_run_config(config_path, seed=seed, threads=threads)
    ctx.obj = RunContext(config=config, config_path=config_path)


# Register subcommands
cli.add_command(bisg_cmd, name='bisg')
cli.add_command(estimate_cmd, name='estimate')
cli.add_command(sensitivity_cmd, name='sensitivity')
cli.add_command(simulate_cmd, name='simulate')
cli.add_command(evaluate_cmd, name='evaluate')


def main():
    cli(prog_name='birdie')


if __name__ == '__main__':
    main()

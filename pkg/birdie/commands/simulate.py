"""
simulate - synthetic records, census tables and ground truth

birdie --seed 7 simulate --n 100000 --out synth/
"""

import logging
from pathlib import Path

import click
import pandas as pd

from birdie.bisg import write_records
from birdie.census_tables import write_census_tables
from birdie.config.constants import FILE_NAMES
from birdie.middleware.error_handler import handle_exceptions
from birdie.synth import config_from_settings, generate, load_synth_settings, truth_frame
from birdie.utils.csv_store import write_table

logger = logging.getLogger(__name__)


@click.command()
@click.option('--synth-config', type=click.Path(exists=True, dir_okay=False),
              help='KEY=VALUE file of population settings.')
@click.option('--n', type=click.IntRange(min=0), help='Number of records.')
@click.option('--dag', type=click.Choice(['a', 'b']), help="'b': Y depends on R; 'a': Y depends on S.")
@click.option('--n-extras', type=click.IntRange(min=0), help='Levels of an extra covariate W.')
@click.option('--n-groups', type=click.IntRange(min=0), help='Surname groups with a direct effect on Y.')
@click.option('--group-effect', type=float, help='Logit scale of the surname-group effect.')
@click.option('--delta-norm', type=click.FloatRange(min=0), help='Perturb the emitted census tables.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.pass_obj
@handle_exceptions
def simulate_cmd(run, synth_config, n, dag, n_extras, n_groups, group_effect, delta_norm, out_dir):
    """Sample a synthetic population with known disparities."""
    run.begin('simulate', synth_config=synth_config)
    out_dir = Path(out_dir)
    settings = load_synth_settings(synth_config, seed=run.config.seed, n=n, dag=dag, n_extras=n_extras,
                                   n_groups=n_groups, group_effect=group_effect, delta_norm=delta_norm)
    config = config_from_settings(settings)
    sample = generate(config, settings.n, delta_norm=settings.delta_norm, threads=run.config.threads)

    run.record(*write_census_tables(sample.tables, out_dir))
    run.record(write_records(sample.records, out_dir / FILE_NAMES['RECORDS']))
    run.record(write_table(truth_frame(sample), out_dir / FILE_NAMES['TRUTH']))
    if sample.conditional_truth is not None:
        run.record(write_table(sample.conditional_truth.to_frame(), out_dir / FILE_NAMES['CONDITIONAL_TRUTH']))
    if config.surname_group is not None:
        groups = config.groups()
        frame = pd.DataFrame({'surname': list(groups.mapping), 'group': list(groups.mapping.values())})
        run.record(write_table(frame, out_dir / FILE_NAMES['GROUPS']))

    run.notes = {key: str(value) for key, value in settings.model_dump().items()}
    run.finish(out_dir, **settings.model_dump())
    click.echo(f'✅ {settings.n} synthetic records written to {out_dir}')

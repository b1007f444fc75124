"""
bisg - race probabilities from surname and geography

birdie bisg --records records.csv --census-dir census/ --level tract --out run/
"""

import logging
from pathlib import Path

import click

from birdie.bisg import bisg_predict, load_records, write_prob_matrix
from birdie.census_tables import load_census_dir
from birdie.config.constants import FILE_NAMES
from birdie.middleware.error_handler import handle_exceptions

logger = logging.getLogger(__name__)


def split_labels(value):
    return [label.strip() for label in value.split(',') if label.strip()] if value else None


@click.command()
@click.option('--records', 'records_path', required=True, type=click.Path(dir_okay=False),
              help='records.csv with id, surname, geo_<level>, cov.')
@click.option('--census-dir', required=True, type=click.Path(file_okay=False),
              help='Directory with prior.csv, surname_race.csv, geo_race_<level>.csv.')
@click.option('--level', help='Requested geo level (config GEO_LEVEL, then finest available).')
@click.option('--races', help='Comma-separated race order (default: prior.csv order).')
@click.option('--unmatched', type=click.Choice(['prior', 'drop']), help='Rows with no BISG mass.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.pass_obj
@handle_exceptions
def bisg_cmd(run, records_path, census_dir, level, races, unmatched, out_dir):
    """Compute BISG probabilities Pr(R | G, X, S)."""
    run.begin('bisg', records=records_path, census_dir=census_dir)
    config = run.config
    tables = load_census_dir(census_dir, race_labels=split_labels(races), geo_fallbacks=config.geo_fallbacks)
    records = load_records(records_path)

    probs = bisg_predict(tables, records, level=level or config.geo_level,
                         unmatched=unmatched or config.unmatched, threads=config.threads)
    run.record(write_prob_matrix(probs, Path(out_dir) / FILE_NAMES['PROBS']))
    run.notes = {key: str(value) for key, value in probs.diagnostics.items()}
    run.finish(out_dir, level=level, unmatched=unmatched, races=races)
    click.echo(f'✅ BISG probabilities for {probs.n} records written to {out_dir}')

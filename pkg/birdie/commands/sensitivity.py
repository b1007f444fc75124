"""
sensitivity - exclusion-restriction diagnostics and BISG-error bounds

birdie sensitivity --records records.csv --probs probs.csv --groups groups.csv --out run/
"""

import logging
from pathlib import Path

import click

from birdie.bisg import align_records, load_records, read_prob_matrix
from birdie.config.constants import ACCEL_METHODS, DEFAULTS, FILE_NAMES, MODEL_KINDS
from birdie.em import fit_birdie
from birdie.middleware.error_handler import handle_exceptions
from birdie.sensitivity import bias_bound, load_surname_groups, refit_with_groups, residual_correlation
from birdie.utils.csv_store import write_table

logger = logging.getLogger(__name__)

ANALYSES = ['correlation', 'refit', 'bound']


@click.command()
@click.option('--records', 'records_path', required=True, type=click.Path(dir_okay=False),
              help='records.csv with outcomes.')
@click.option('--probs', 'probs_path', required=True, type=click.Path(dir_okay=False), help='BISG probabilities.')
@click.option('--groups', 'groups_path', type=click.Path(dir_okay=False),
              help='surname,group CSV (needed for correlation and refit).')
@click.option('--analysis', 'analyses', multiple=True, type=click.Choice(ANALYSES),
              help='Analyses to run (repeatable; default: all that the inputs allow).')
@click.option('--model', type=click.Choice(MODEL_KINDS + ['pooling', 'mixed']), help='BIRDiE outcome model.')
@click.option('--accel', type=click.Choice(ACCEL_METHODS), help='EM acceleration.')
@click.option('--level', help='Geo level of the outcome-model cells.')
@click.option('--delta-norm', type=click.FloatRange(min=0), default=0.01, show_default=True,
              help='BISG error norm for the bias bound.')
@click.option('--draws', type=click.IntRange(min=10), default=DEFAULTS['BIAS_DRAWS'], show_default=True,
              help='Posterior draws for the bias bound.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.pass_obj
@handle_exceptions
def sensitivity_cmd(run, records_path, probs_path, groups_path, analyses, model, accel, level, delta_norm, draws,
                    out_dir):
    """Residual correlation, surname-group refit and bias bound."""
    run.begin('sensitivity', records=records_path, probs=probs_path, groups=groups_path)
    config = run.config
    out_dir = Path(out_dir)
    probs = read_prob_matrix(probs_path)
    records = align_records(load_records(records_path), probs)

    analyses = list(analyses) or (ANALYSES if groups_path else ['bound'])
    spec = config.outcome_spec(kind=model)
    options = {
        'accel': accel or config.accel,
        'tol': config.tol,
        'max_iter': config.max_iter,
        'level': level or config.effect_level,
        'threads': config.threads,
    }
    fit = fit_birdie(probs, records, spec, **options)

    if 'correlation' in analyses or 'refit' in analyses:
        if not groups_path:
            raise click.UsageError('--groups is required for correlation and refit')
        groups = load_surname_groups(groups_path)
        if 'correlation' in analyses:
            frame = residual_correlation(fit, records, groups, level=DEFAULTS['CI_LEVEL'])
            run.record(write_table(frame, out_dir / FILE_NAMES['CORRELATION']))
        if 'refit' in analyses:
            refit = refit_with_groups(probs, records, groups, spec, base_fit=fit, **options)
            run.record(write_table(refit.changes, out_dir / FILE_NAMES['CHANGES']))
            run.notes.update({'mean_abs_change': f'{refit.mean_abs_change:.17g}',
                              'max_abs_change': f'{refit.max_abs_change:.17g}'})

    if 'bound' in analyses:
        if fit.kind == 'mixed_effects':
            logger.warning('Bias bound needs a pooling or saturated model; skipped')
        else:
            report = bias_bound(fit, probs, records, delta_norm=delta_norm, draws=draws,
                                seed=run.seed_for('bias_bound'), threads=config.threads)
            run.record(write_table(report.to_frame(), out_dir / FILE_NAMES['BOUND']))

    run.finish(out_dir, analyses=','.join(analyses), model=spec.kind, delta_norm=delta_norm, draws=draws)
    click.echo(f'✅ Sensitivity analyses ({", ".join(analyses)}) written to {out_dir}')

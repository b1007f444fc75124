"""
estimate - outcome disparities by race

birdie estimate --records records.csv --probs probs.csv --method birdie --out run/
"""

import logging
from pathlib import Path

import click

from birdie.bisg import align_records, load_records, read_prob_matrix, write_prob_matrix
from birdie.census_tables import load_census_dir
from birdie.conditional import estimate_joint, estimate_two_step
from birdie.config.constants import ACCEL_METHODS, ERROR_MESSAGES, FILE_NAMES, METHODS, MODEL_KINDS
from birdie.em import bootstrap_pooling, estimate_from_fit, fit_birdie
from birdie.estimators_baseline import (
    ols_estimate,
    ols_poststratify,
    thresholding_estimate,
    weighting_estimate,
)
from birdie.middleware.error_handler import ConvergenceError, ValidationError, handle_exceptions
from birdie.utils.csv_store import write_table

logger = logging.getLogger(__name__)


def _run_birdie(run, probs, records, tables, out_dir, model, alpha, accel, level, weights, bootstrap):
    config = run.config
    spec = config.outcome_spec(kind=model, alpha=alpha)
    options = config.fit_options(accel, level)
    fit = fit_birdie(probs, records, spec, threads=config.threads, **options)

    run.record(write_table(fit.trace_frame(), out_dir / FILE_NAMES['TRACE']))
    run.notes.update({'iterations': str(fit.iterations), 'map_evaluations': str(fit.map_evaluations),
                      'converged': str(fit.converged), 'accel': fit.accel})
    if not fit.converged:
        run.finish(out_dir, method='birdie', model=spec.kind, accel=options['accel'])
        raise ConvergenceError(f'EM did not converge in {config.max_iter} iterations; trace written to '
                               f'{out_dir / FILE_NAMES["TRACE"]}', last_iterate=fit)

    weights = weights or ('census' if tables is not None else 'sample')
    estimate = estimate_from_fit(fit, tables, weights=weights)
    run.record(write_table(fit.theta_frame(), out_dir / FILE_NAMES['THETA']))
    run.record(write_prob_matrix(fit.updated_probs, out_dir / FILE_NAMES['UPDATED_PROBS']))
    if bootstrap:
        covariance = bootstrap_pooling(probs, records, spec, replicates=bootstrap,
                                       seed=run.seed_for('bootstrap'), threads=config.threads, **{
                                           key: options[key] for key in ('accel', 'tol', 'max_iter')})
        covariance.columns = covariance.columns.set_names(['race2', 'y2'])
        frame = covariance.stack(['race2', 'y2'], future_stack=True).rename('cov').reset_index()
        run.record(write_table(frame, out_dir / FILE_NAMES['BOOTSTRAP']))
    return estimate


@click.command()
@click.option('--records', 'records_path', required=True, type=click.Path(dir_okay=False),
              help='records.csv with outcomes.')
@click.option('--probs', 'probs_path', required=True, type=click.Path(dir_okay=False), help='BISG probabilities.')
@click.option('--method', type=click.Choice(METHODS), default='birdie', show_default=True)
@click.option('--census-dir', type=click.Path(file_okay=False), help='Census tables for post-stratification.')
@click.option('--model', type=click.Choice(MODEL_KINDS + ['pooling', 'mixed']), help='BIRDiE outcome model.')
@click.option('--alpha', type=float, help='Dirichlet prior concentration.')
@click.option('--accel', type=click.Choice(ACCEL_METHODS), help='EM acceleration.')
@click.option('--level', help='Geo level of the outcome-model and OLS cells.')
@click.option('--weights', type=click.Choice(['census', 'sample']), help='BIRDiE aggregation weights.')
@click.option('--conditional', type=click.Choice(['joint', 'two_step']),
              help='Estimate Pr(Y | W, R) using the extra column.')
@click.option('--bootstrap', type=click.IntRange(min=2), help='Bootstrap replicates (pooling model).')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.pass_obj
@handle_exceptions
def estimate_cmd(run, records_path, probs_path, method, census_dir, model, alpha, accel, level, weights,
                 conditional, bootstrap, out_dir):
    """Estimate Pr(Y | R) with the selected method."""
    run.begin('estimate', records=records_path, probs=probs_path, census_dir=census_dir)
    config = run.config
    out_dir = Path(out_dir)
    probs = read_prob_matrix(probs_path)
    tables = None
    if census_dir:
        tables = load_census_dir(census_dir, race_labels=list(probs.races), geo_fallbacks=config.geo_fallbacks)
    records = align_records(load_records(records_path), probs)

    if conditional:
        spec = config.outcome_spec(kind=model, alpha=alpha)
        options = config.fit_options(accel, level)
        if conditional == 'joint':
            result = estimate_joint(probs, records, spec, tables, joint_cap=config.joint_cap,
                                    threads=config.threads, **options)
        else:
            result = estimate_two_step(probs, records, spec, spec, threads=config.threads, **options)
        run.record(write_table(result.to_frame(), out_dir / FILE_NAMES['CONDITIONAL']))
        run.finish(out_dir, conditional=conditional, model=spec.kind, accel=options['accel'])
        click.echo(f'✅ {conditional} conditional estimate written to {out_dir}')
        return

    if method == 'weighting':
        estimate = weighting_estimate(probs, records)
    elif method == 'thresholding':
        estimate = thresholding_estimate(probs, records)
    elif method in ('ols', 'ols_poststrat'):
        estimate = ols_estimate(probs, records, level=level or config.effect_level, threads=config.threads)
        if method == 'ols_poststrat':
            if tables is None:
                raise ValidationError(f'{ERROR_MESSAGES["MISSING_Q_WEIGHTS"]}: --census-dir is required')
            estimate = ols_poststratify(estimate, tables)
    else:
        estimate = _run_birdie(run, probs, records, tables, out_dir, model, alpha, accel, level, weights,
                               bootstrap)

    run.record(write_table(estimate.to_frame(), out_dir / FILE_NAMES['ESTIMATE']))
    run.finish(out_dir, method=method, model=model, alpha=alpha, accel=accel, level=level, weights=weights)
    click.echo(f'✅ {method} estimate written to {out_dir}')

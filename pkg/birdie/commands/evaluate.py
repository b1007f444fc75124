"""
evaluate - compare estimates and race probabilities with ground truth

birdie evaluate --estimate run/estimate.csv --truth synth/truth.csv --marginal synth/prior.csv --out eval/
"""

import logging
from pathlib import Path

import click
import numpy as np
import pandas as pd

from birdie.bisg import align_records, load_records, map_classify, read_prob_matrix
from birdie.config.constants import FILE_NAMES, FLAGS
from birdie.em import fit_birdie
from birdie.metrics import (
    align_estimate,
    area_tables_from_fit,
    area_tables_from_weights,
    log_score,
    map_accuracy,
    reports_frame,
    rmse_and_correlation,
    roc_auc,
    scalar_report,
    series_report,
    small_area_mean_tv,
    true_race_weights,
    tv_distance,
    tv_within_race,
)
from birdie.middleware.error_handler import ValidationError, handle_exceptions
from birdie.models.estimates import DisparityEstimate, EvalReport
from birdie.utils.csv_store import read_table, write_table

logger = logging.getLogger(__name__)


# ============================================
# HELPER: READ ESTIMATE TABLES
# ============================================
def read_estimates(path):
    """
    Read a method,y,r,estimate,flag CSV

    Returns:
        Dict of method -> DisparityEstimate, in file order
    """
    frame = read_table(path, required=['method', 'y', 'r', 'estimate'],
                       text_columns=['method', 'y', 'r', 'flag'], numeric_columns=['estimate'])
    if 'flag' not in frame.columns:
        frame['flag'] = None
    estimates = {}
    for method in pd.unique(frame['method']):
        rows = frame[frame['method'] == method]
        outcomes, races = tuple(pd.unique(rows['y'])), tuple(pd.unique(rows['r']))
        table = rows.pivot(index='y', columns='r', values='estimate').reindex(index=outcomes, columns=races)
        flags = {race: flag for race, flag in zip(rows['r'], rows['flag']) if flag}
        estimates[method] = DisparityEstimate(method=method, outcomes=outcomes, races=races,
                                              mu_y_given_r=table.to_numpy(dtype=float), flags=flags)
    return estimates


def read_marginal(path, races):
    frame = read_table(path, required=['race', 'prob'], text_columns=['race'], numeric_columns=['prob'])
    lookup = dict(zip(frame['race'], frame['prob'].astype(float)))
    missing = [race for race in races if race not in lookup]
    if missing:
        raise ValidationError(f'{path}: no marginal for {missing}')
    return np.array([lookup[race] for race in races], dtype=float)


def _area_reports(name, est_cells, truth_cells, min_cell):
    mean_tv = small_area_mean_tv(est_cells, truth_cells, min_cell)
    accuracy = rmse_and_correlation(est_cells, truth_cells, min_cell)
    correlation = pd.DataFrame({
        'key': [str(race) for race in accuracy.index],
        'value': accuracy['correlation'].to_numpy(dtype=float),
        'flag': accuracy['flag'].to_numpy(dtype=object),
    })
    return [
        series_report(f'{name}.small_area_tv', mean_tv),
        series_report(f'{name}.small_area_rmse', accuracy['rmse']),
        EvalReport(metric=f'{name}.small_area_correlation', scope='per-race', values=correlation),
    ]


@click.command()
@click.option('--estimate', 'estimate_path', type=click.Path(dir_okay=False), help='Estimate CSV to score.')
@click.option('--truth', 'truth_path', type=click.Path(dir_okay=False), help='Truth CSV in the estimate layout.')
@click.option('--truth-method', default='truth', show_default=True, help='Method label of the truth rows.')
@click.option('--marginal', 'marginal_path', type=click.Path(dir_okay=False),
              help='race,prob CSV forming joint tables (default: uniform).')
@click.option('--probs', 'probs_path', type=click.Path(dir_okay=False), help='Race probabilities to score.')
@click.option('--records', 'records_path', type=click.Path(dir_okay=False), help='records.csv with true_race.')
@click.option('--min-cell', type=click.IntRange(min=1), help='Smallest area-race cell kept.')
@click.option('--birdie', 'score_birdie', is_flag=True,
              help='Also fit the configured outcome model on --probs/--records and score its small areas.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.pass_obj
@handle_exceptions
def evaluate_cmd(run, estimate_path, truth_path, truth_method, marginal_path, probs_path, records_path, min_cell,
                 score_birdie, out_dir):
    """Score disparity estimates and race probabilities against the truth."""
    run.begin('evaluate', estimate=estimate_path, truth=truth_path, marginal=marginal_path, probs=probs_path,
              records=records_path)
    if not (estimate_path and truth_path) and not (probs_path and records_path):
        raise click.UsageError('give --estimate with --truth, or --probs with --records')
    if score_birdie and not (probs_path and records_path):
        raise click.UsageError('--birdie needs --probs and --records')
    min_cell = min_cell or run.config.min_cell
    reports = []

    if estimate_path and truth_path:
        estimates = read_estimates(estimate_path)
        truths = read_estimates(truth_path)
        truth = truths.get(truth_method) or next(iter(truths.values()))
        if marginal_path:
            marginal = read_marginal(marginal_path, truth.races)
        else:
            logger.warning('No --marginal given; joint tables use uniform race weights')
            marginal = np.full(len(truth.races), 1.0 / len(truth.races))
        for method, estimate in estimates.items():
            estimate = align_estimate(estimate, truth)
            reports.append(scalar_report(f'{method}.tv', tv_distance(estimate, truth, marginal)))
            reports.append(series_report(f'{method}.tv_within_race', tv_within_race(estimate, truth)))

    if probs_path and records_path:
        probs = read_prob_matrix(probs_path)
        records = align_records(load_records(records_path), probs)
        if records.true_race is None:
            raise ValidationError('--records must carry true_race to score probabilities')
        reports.append(scalar_report('probs.log_score', log_score(probs, records.true_race)))
        reports.append(scalar_report('probs.map_accuracy', map_accuracy(probs, records.true_race)))
        reports.append(series_report('probs.auc', roc_auc(probs, records.true_race)))
        if score_birdie and records.outcome is None:
            raise ValidationError('--birdie needs records with outcomes')
        if records.outcome is not None:
            level = run.config.effect_level or records.geo_levels[0]
            races = probs.races
            truth_cells = area_tables_from_weights(records, true_race_weights(records, races), races, level)
            threshold = (map_classify(probs)[:, None] == np.asarray(races, dtype=object)[None]).astype(float)
            for name, weights in (('weighting', probs.probs), ('thresholding', threshold)):
                est_cells = area_tables_from_weights(records, weights, races, level)
                reports += _area_reports(name, est_cells, truth_cells, min_cell)
            if score_birdie:
                fit = fit_birdie(probs, records, run.config.outcome_spec(), threads=run.config.threads,
                                 **run.config.fit_options(level=level))
                run.notes['birdie_converged'] = str(fit.converged)
                if not fit.converged:
                    logger.warning(f'EM did not converge in {fit.iterations} iterations; scoring the last iterate')
                reports += _area_reports('birdie', area_tables_from_fit(fit), truth_cells, min_cell)

    frame = reports_frame(reports)
    frame['flag'] = frame['flag'].fillna(FLAGS['OK'])
    run.record(write_table(frame, Path(out_dir) / FILE_NAMES['EVAL']))
    run.finish(out_dir, truth_method=truth_method, min_cell=min_cell, birdie=score_birdie)
    click.echo(f'✅ {len(frame)} evaluation rows written to {out_dir}')

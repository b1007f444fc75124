"""
BIRDiE estimation by EM
E-step, fit driver, marginal log-posterior, aggregation and bootstrap
"""

import logging
import time

import numpy as np
import pandas as pd

from birdie.acceleration import run_fixed_point
from birdie.config.constants import DEFAULTS, ERROR_MESSAGES, FLAGS
from birdie.config.settings import ANALYSIS_CONFIG
from birdie.estimators_baseline import census_cell_weights
from birdie.middleware.error_handler import ValidationError
from birdie.middleware.validators import validate_alignment, validate_records
from birdie.models.census import CensusTables
from birdie.models.estimates import DisparityEstimate
from birdie.models.outcome import OutcomeFit, OutcomeModelSpec
from birdie.models.probs import ProbMatrix
from birdie.models.records import RecordTable
from birdie.outcome_models import build_outcome_model
from birdie.utils.helpers import chunk_bounds, spawn_seeds
from birdie.utils.parallel import parallel_map, tree_reduce

logger = logging.getLogger(__name__)


# ============================================
# E-STEP
# ============================================
def _e_step_block(table, probs, cell_codes, y_codes, n_cells, n_outcomes, bounds):
    start, stop = bounds
    prior = probs[start:stop]
    cells, y = cell_codes[start:stop], y_codes[start:stop]
    likelihood = table[:, cells, y].T
    joint = likelihood * prior
    normalizer = joint.sum(axis=1)
    zero = normalizer <= 0
    updated = np.empty_like(joint)
    updated[~zero] = joint[~zero] / normalizer[~zero, None]
    updated[zero] = prior[zero]

    flat = cells * n_outcomes + y
    suffstats = np.stack([
        np.bincount(flat, weights=updated[:, r], minlength=n_cells * n_outcomes)
        for r in range(updated.shape[1])
    ])
    with np.errstate(divide='ignore'):
        loglik = float(np.sum(np.log(normalizer)))
    return updated, suffstats, loglik, int(zero.sum())


def e_step_arrays(table, probs, cell_codes, y_codes, n_cells, n_outcomes, threads=None, block_size=None):
    """
    Bayes update of race probabilities and outcome sufficient statistics

    Args:
        table: races x cells x outcomes Pr(Y | R, cell)
        probs: N x races input probabilities
        cell_codes: Per-record cell code
        y_codes: Per-record outcome code
        n_cells: Number of cells
        n_outcomes: Number of outcome levels
        threads: Worker cap
        block_size: Records per block

    Returns:
        Tuple of (updated N x races, races x cells x outcomes suffstats,
        sum of log normalizers, zero-normalizer count)
    """
    n_races = probs.shape[1]
    blocks = chunk_bounds(len(y_codes), block_size or ANALYSIS_CONFIG['block_size'])
    if not blocks:
        return (np.empty((0, n_races)), np.zeros((n_races, n_cells, n_outcomes)), 0.0, 0)
    parts = parallel_map(
        lambda bounds: _e_step_block(table, probs, cell_codes, y_codes, n_cells, n_outcomes, bounds),
        blocks, threads)
    updated = np.concatenate([part[0] for part in parts])
    suffstats = tree_reduce(np.add, [part[1] for part in parts]).reshape(n_races, n_cells, n_outcomes)
    loglik = float(tree_reduce(lambda a, b: a + b, [part[2] for part in parts]))
    zero = sum(part[3] for part in parts)
    return updated, suffstats, loglik, zero


def _effect_level(spec, records, level):
    return level or spec.effect_level or (records.geo_levels[0] if records.geo_levels else None)


def _as_table(theta, n_cells):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 2:
        return np.broadcast_to(theta[:, None, :], (theta.shape[0], n_cells, theta.shape[1]))
    return theta


def e_step(theta, probs: ProbMatrix, records: RecordTable, cells=None, level=None, threads=None):
    """
    Updated probabilities Pr(R | G, X, S, Y) and sufficient statistics

    Args:
        theta: races x outcomes (shared by every cell) or races x cells x
            outcomes outcome probabilities
        probs: Input ProbMatrix aligned with records
        records: RecordTable with outcomes
        cells: CellIndex (defaults to records.cell_index(level))
        level: Geo level of the cells
        threads: Worker cap

    Returns:
        Tuple of (updated ProbMatrix, races x cells x outcomes suffstats,
        diagnostics with the zero-normalizer tally)
    """
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)
    cells = cells or records.cell_index(level)
    table = _as_table(theta, cells.n_cells)
    updated, suffstats, loglik, zero = e_step_arrays(
        table, probs.probs, cells.codes, records.outcome_codes(), cells.n_cells,
        len(records.outcome_levels), threads)
    if zero:
        logger.warning(f'{zero} records have zero likelihood under every race; kept their input probabilities')
    diagnostics = {'zero_normalizer': zero, 'loglik': loglik}
    updated_probs = probs.with_probs(updated, conditioning=probs.conditioning + ('Y',), diagnostics=diagnostics)
    return updated_probs, suffstats, diagnostics


def marginal_log_posterior(theta, probs: ProbMatrix, records: RecordTable, spec: OutcomeModelSpec,
                           level=None, cells=None):
    """
    log prior(theta) + sum_i log sum_r Pr(Y_i | r, G_i, X_i, theta) P_ir

    Args:
        theta: Model parameters in the layout of spec.kind
        probs: Input ProbMatrix
        records: RecordTable with outcomes
        spec: OutcomeModelSpec
        level: Geo level of the cells
        cells: CellIndex (overrides level)

    Returns:
        float
    """
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)
    cells = cells or records.cell_index(_effect_level(spec, records, level))
    model = build_outcome_model(spec, cells, len(probs.races), len(records.outcome_levels))
    theta = np.asarray(theta, dtype=float)
    _, _, loglik, _ = e_step_arrays(model.cell_table(theta), probs.probs, cells.codes,
                                    records.outcome_codes(), cells.n_cells, len(records.outcome_levels))
    return loglik + model.log_prior(theta)


# ============================================
# FIT
# ============================================
def fit_birdie(probs: ProbMatrix, records: RecordTable, spec: OutcomeModelSpec = None,
               accel=DEFAULTS['ACCEL'], tol=None, max_iter=None, level=None, threads=None):
    """
    Fit a BIRDiE outcome model by (accelerated) EM

    Args:
        probs: BISG ProbMatrix aligned with records
        records: RecordTable with outcomes
        spec: OutcomeModelSpec (saturated with uniform prior by default)
        accel: 'none', 'squarem' or 'anderson'
        tol: Absolute change in marginal log-posterior for convergence
        max_iter: Iteration cap
        level: Geo level of the model cells (spec.effect_level, then finest)
        threads: Worker cap

    Returns:
        OutcomeFit; converged is False when max_iter was reached
    """
    started = time.perf_counter()
    spec = spec or OutcomeModelSpec()
    tol = ANALYSIS_CONFIG['tol'] if tol is None else tol
    max_iter = ANALYSIS_CONFIG['max_iter'] if max_iter is None else max_iter
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)

    cells = records.cell_index(_effect_level(spec, records, level))
    y_codes = records.outcome_codes()
    n_races, n_outcomes = len(probs.races), len(records.outcome_levels)
    model = build_outcome_model(spec, cells, n_races, n_outcomes, threads)

    def update(vector):
        theta = model.from_vector(vector)
        _, suffstats, loglik, _ = e_step_arrays(model.cell_table(theta), probs.probs, cells.codes, y_codes,
                                                cells.n_cells, n_outcomes, threads)
        value = loglik + model.log_prior(theta)
        return model.to_vector(model.m_step(suffstats, warm=theta)), value

    def project(vector):
        theta = model.from_vector(vector)
        return None if theta is None else model.to_vector(theta)

    result = run_fixed_point(update, project, model.to_vector(model.init_theta()), accel, tol, max_iter)

    theta = model.from_vector(result.x)
    table = np.array(model.cell_table(theta))
    updated, suffstats, loglik, zero = e_step_arrays(table, probs.probs, cells.codes, y_codes,
                                                     cells.n_cells, n_outcomes, threads)
    if zero:
        logger.warning(f'{zero} records have zero likelihood under every race; kept their input probabilities')
    if not result.converged:
        logger.warning(f'EM did not converge in {max_iter} iterations '
                       f'(last change {abs(result.trace[-1] - result.trace[-2]) if len(result.trace) > 1 else 0:.3g})')

    runtime = time.perf_counter() - started
    logger.info(f'✅ {spec.kind} fit: {result.iterations} iterations, {result.map_evaluations} map evaluations, '
                f'{runtime:.2f}s, accel={accel}')
    diagnostics = {'zero_normalizer': zero, 'loglik': loglik, 'rejected_extrapolations': result.rejected}
    return OutcomeFit(
        spec=spec,
        theta=theta,
        cell_table=table,
        cells=cells,
        races=probs.races,
        outcomes=records.outcome_levels,
        updated_probs=probs.with_probs(updated, conditioning=probs.conditioning + ('Y',), diagnostics=diagnostics),
        suffstats=suffstats,
        trace=np.asarray(result.trace),
        iterations=result.iterations,
        map_evaluations=result.map_evaluations,
        converged=result.converged,
        runtime=runtime,
        accel=accel,
        flags=dict(model.flags),
        diagnostics=diagnostics,
        model=model,
    )


# ============================================
# AGGREGATION
# ============================================
def _sample_mass(fit: OutcomeFit):
    updated = fit.updated_probs.probs
    return np.stack([
        np.bincount(fit.cells.codes, weights=updated[:, r], minlength=fit.cells.n_cells)
        for r in range(updated.shape[1])
    ], axis=1)


def estimate_from_fit(fit: OutcomeFit, tables: CensusTables = None, weights='census'):
    """
    Pr(Y | R) from a fit

    Pooling fits pass theta through. Other fits average cell tables with
    q_{gx|r} renormalized over the fitted cells ('census') or with each
    cell's updated-probability race mass ('sample').

    Args:
        fit: OutcomeFit
        tables: CensusTables (required for census weights)
        weights: 'census' or 'sample'

    Returns:
        DisparityEstimate with method 'birdie'
    """
    if weights not in ('census', 'sample'):
        raise ValidationError("weights must be 'census' or 'sample'")
    n_races = len(fit.races)
    cell_tables = fit.cell_table.transpose(1, 2, 0)

    if fit.kind == 'complete_pooling':
        marginal = fit.theta.T.copy()
        flags = {fit.races[r]: FLAGS['DEGENERATE'] for r in fit.flags.get('degenerate_races', [])}
    else:
        if weights == 'census':
            if tables is None:
                raise ValidationError('census weights need census tables')
            mass, found = census_cell_weights(tables, fit.cells.keys)
            if not found.all():
                missing = [key for key, ok in zip(fit.cells.keys, found) if not ok][:5]
                raise ValidationError(f'{ERROR_MESSAGES["MISSING_Q_WEIGHTS"]}: {missing}')
        else:
            mass = _sample_mass(fit)
        totals = mass.sum(axis=0)
        defined = totals > 0
        share = np.zeros_like(mass)
        share[:, defined] = mass[:, defined] / totals[defined]
        marginal = np.einsum('cr,rcy->yr', share, fit.cell_table)
        marginal[:, ~defined] = np.nan
        flags = {race: FLAGS['UNDEFINED'] for race, ok in zip(fit.races, defined) if not ok}

    if tables is not None:
        weights_r = tables.prior
    else:
        weights_r = fit.updated_probs.probs.mean(axis=0) if fit.updated_probs.n else np.full(n_races, np.nan)
    return DisparityEstimate(
        method='birdie',
        outcomes=fit.outcomes,
        races=fit.races,
        mu_y_given_r=marginal,
        flags=flags,
        weights_r=weights_r,
        cell_keys=fit.cells.keys,
        mu_y_given_rgx=cell_tables,
    )


def cell_tables_by_area(fit: OutcomeFit):
    """
    Pr(Y | R, area) per geo area, pooling the area's cells by updated-probability mass

    Returns:
        Tuple of (area keys, areas x outcomes x races probabilities with NaN
        where a race has no mass, areas x races mass)
    """
    geo_codes, geo_keys = fit.cells.geo_codes()
    mass = _sample_mass(fit)
    n_areas = len(geo_keys)
    area_mass = np.zeros((n_areas, mass.shape[1]))
    np.add.at(area_mass, geo_codes, mass)
    weighted = np.einsum('cr,rcy->cyr', mass, fit.cell_table)
    area_sum = np.zeros((n_areas,) + weighted.shape[1:])
    np.add.at(area_sum, geo_codes, weighted)
    probs = np.divide(area_sum, area_mass[:, None, :], out=np.full(area_sum.shape, np.nan),
                      where=area_mass[:, None, :] > 0)
    return [geo for _, geo in geo_keys], probs, area_mass


# ============================================
# BOOTSTRAP
# ============================================
def bootstrap_pooling(probs: ProbMatrix, records: RecordTable, spec: OutcomeModelSpec = None,
                      replicates=DEFAULTS['BOOTSTRAP_REPLICATES'], seed=DEFAULTS['SEED'],
                      accel=DEFAULTS['ACCEL'], tol=None, max_iter=None, threads=None):
    """
    Bootstrap covariance of complete-pooling theta

    Args:
        probs: ProbMatrix aligned with records
        records: RecordTable with outcomes
        spec: Pooling OutcomeModelSpec
        replicates: Number of resamples B (at least 2)
        seed: Root seed; replicate seeds are spawned from it
        accel: Acceleration for each refit
        tol: Convergence tolerance
        max_iter: Iteration cap
        threads: Worker cap across replicates

    Returns:
        Covariance DataFrame indexed and columned by (race, outcome)
    """
    spec = spec or OutcomeModelSpec(kind='complete_pooling')
    if spec.kind != 'complete_pooling':
        raise ValidationError(f'{ERROR_MESSAGES["UNSUPPORTED_MODEL"]}: {spec.kind}')
    if replicates < 2:
        raise ValidationError(ERROR_MESSAGES['BOOTSTRAP_REPLICATES'])
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)

    def replicate(seed_seq):
        rng = np.random.default_rng(seed_seq)
        index = rng.integers(0, records.n, records.n)
        fit = fit_birdie(probs.take(index), records.take(index), spec, accel=accel, tol=tol,
                         max_iter=max_iter, threads=1)
        return fit.theta.ravel()

    draws = np.stack(parallel_map(replicate, spawn_seeds(seed, replicates), threads))
    covariance = np.cov(draws, rowvar=False)
    index = pd.MultiIndex.from_product([list(probs.races), list(records.outcome_levels)], names=['race', 'y'])
    logger.info(f'✅ Bootstrap covariance from {replicates} replicates')
    return pd.DataFrame(np.atleast_2d(covariance), index=index, columns=index)

"""
Weighting, thresholding and least-squares disparity estimators
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from birdie.bisg import map_classify
from birdie.config.constants import ERROR_MESSAGES, FLAGS
from birdie.middleware.error_handler import IdentificationError, ValidationError
from birdie.middleware.validators import validate_alignment, validate_records
from birdie.models.census import CensusTables
from birdie.models.estimates import DisparityEstimate
from birdie.models.probs import ProbMatrix
from birdie.models.records import RecordTable
from birdie.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

EQUALITY_TOL = 1e-9
ORTHOGONAL_TOL = 1e-12


def _indicator(records):
    codes = records.outcome_codes()
    onehot = np.zeros((records.n, len(records.outcome_levels)))
    onehot[np.arange(records.n), codes] = 1.0
    return onehot


def _column_flags(races, defined):
    return {race: FLAGS['UNDEFINED'] for race, ok in zip(races, defined) if not ok}


def weighted_table(weights, onehot):
    """
    Pr(Y | R) from per-record race weights

    Returns:
        Tuple of (|Y| x |R| table with NaN columns where the race has no mass,
        defined mask per race)
    """
    numerator = onehot.T @ weights
    mass = weights.sum(axis=0)
    defined = mass > 0
    table = np.full(numerator.shape, np.nan)
    table[:, defined] = numerator[:, defined] / mass[defined]
    return table, defined


# ============================================
# WEIGHTING AND THRESHOLDING
# ============================================
def weighting_estimate(probs: ProbMatrix, records: RecordTable):
    """
    Probability-weighted outcome averages

    Args:
        probs: ProbMatrix aligned with records
        records: RecordTable with outcomes

    Returns:
        DisparityEstimate with method 'weighting'
    """
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)
    table, defined = weighted_table(probs.probs, _indicator(records))
    flags = _column_flags(probs.races, defined)
    if flags:
        logger.warning(f'Weighting estimate undefined for races with zero mass: {list(flags)}')
    return DisparityEstimate(
        method='weighting',
        outcomes=records.outcome_levels,
        races=probs.races,
        mu_y_given_r=table,
        flags=flags,
        weights_r=probs.probs.mean(axis=0) if probs.n else None,
    )


def thresholding_estimate(probs: ProbMatrix, records: RecordTable):
    """Tabulate outcomes by the most probable race"""
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)
    predicted = map_classify(probs)
    lookup = {race: i for i, race in enumerate(probs.races)}
    assigned = np.zeros((probs.n, len(probs.races)))
    assigned[np.arange(probs.n), [lookup[race] for race in predicted]] = 1.0
    table, defined = weighted_table(assigned, _indicator(records))
    return DisparityEstimate(
        method='thresholding',
        outcomes=records.outcome_levels,
        races=probs.races,
        mu_y_given_r=table,
        flags=_column_flags(probs.races, defined),
        weights_r=assigned.mean(axis=0) if probs.n else None,
    )


def weighting_bias_formula(records: RecordTable, probs: ProbMatrix, y, r, level=None):
    """
    Asymptotic bias of the weighting estimator for binary race

    Estimates -E[Cov(1{Y=y}, 1{R=r} | G, X, S)] / Pr(R=r) with within-cell
    empirical covariances over (geo, cov, surname) cells, weighted by cell size.

    Args:
        records: RecordTable with outcomes and true race
        probs: ProbMatrix supplying the race set
        y: Outcome level
        r: Race label
        level: Geo level of the cells (finest available by default)

    Returns:
        float
    """
    if len(probs.races) != 2:
        raise ValidationError(ERROR_MESSAGES['BINARY_RACE_ONLY'])
    validate_records(records, need_outcome=True, need_true_race=True)
    if y not in records.outcome_levels:
        raise ValidationError(f'{ERROR_MESSAGES["UNKNOWN_OUTCOME"]}: {y}')

    is_y = (records.outcome == y).astype(float)
    is_r = (records.true_race == r).astype(float)
    p_r = is_r.mean()
    if p_r == 0:
        return float('nan')

    geo_cells = records.cell_index(level).codes
    surnames, surname_keys = pd.factorize(records.surname, use_na_sentinel=False)
    _, cells = np.unique(geo_cells * (len(surname_keys) + 1) + surnames, return_inverse=True)
    n_cells = cells.max() + 1
    size = np.bincount(cells, minlength=n_cells).astype(float)
    mean_y = np.bincount(cells, weights=is_y, minlength=n_cells) / size
    mean_r = np.bincount(cells, weights=is_r, minlength=n_cells) / size
    mean_yr = np.bincount(cells, weights=is_y * is_r, minlength=n_cells) / size
    within = mean_yr - mean_y * mean_r
    expected = np.sum(within * size) / size.sum()
    return float(-expected / p_r)


# ============================================
# LEAST SQUARES
# ============================================
@dataclass(frozen=True)
class IdentificationResult:
    """
    Rank check of a cell's linear system

    Attributes:
        status: 'identified', 'rank_deficient' or 'inconsistent'
        rank_p: Numerical rank of P
        rank_augmented: Numerical rank of [P | b]
        n_races: Columns of P
    """
    status: str
    rank_p: int
    rank_augmented: int
    n_races: int

    @property
    def identified(self):
        return self.status == 'identified'


def numerical_rank(matrix):
    """Rank with singular values above max(dim) * eps * sigma_max"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    return int(np.linalg.matrix_rank(matrix))


def check_identification(probs_cell, outcome_cell):
    """
    Rank conditions for solving P mu = b

    Args:
        probs_cell: n x |R| matrix P
        outcome_cell: Length-n vector b (or n x k matrix of several b)

    Returns:
        IdentificationResult
    """
    p = np.atleast_2d(np.asarray(probs_cell, dtype=float))
    b = np.asarray(outcome_cell, dtype=float).reshape(p.shape[0], -1)
    n_races = p.shape[1]
    rank_p = numerical_rank(p)
    rank_augmented = numerical_rank(np.column_stack([p, b]))
    if rank_p < n_races:
        status = 'rank_deficient'
    elif rank_augmented > n_races:
        status = 'inconsistent'
    else:
        status = 'identified'
    return IdentificationResult(status=status, rank_p=rank_p, rank_augmented=rank_augmented, n_races=n_races)


def _solve_cell(p, onehot):
    if numerical_rank(p) < p.shape[1]:
        return None
    beta, *_ = np.linalg.lstsq(p, onehot, rcond=None)
    return beta.T


def ols_estimate(probs: ProbMatrix, records: RecordTable, level=None, threads=None):
    """
    Per-cell least-squares estimates of Pr(Y | R, G, X)

    Cells where P lacks full column rank are flagged unidentified. The
    marginal table aggregates identified cells by their share of each race's
    probability mass.

    Args:
        probs: ProbMatrix aligned with records
        records: RecordTable with outcomes
        level: Geo level of the (geo, cov) cells
        threads: Worker cap for the per-cell solves

    Returns:
        DisparityEstimate with method 'ols' and per-cell tables
    """
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)
    cells = records.cell_index(level)
    onehot = _indicator(records)
    order = np.argsort(cells.codes, kind='stable')
    bounds = np.searchsorted(cells.codes[order], np.arange(cells.n_cells + 1))
    members = [order[bounds[c]:bounds[c + 1]] for c in range(cells.n_cells)]

    solved = parallel_map(lambda idx: _solve_cell(probs.probs[idx], onehot[idx]), members, threads)

    n_outcomes, n_races = onehot.shape[1], len(probs.races)
    cell_tables = np.full((cells.n_cells, n_outcomes, n_races), np.nan)
    cell_flags = {}
    mass = np.zeros((cells.n_cells, n_races))
    for c, (key, table) in enumerate(zip(cells.keys, solved)):
        if table is None:
            cell_flags[key] = FLAGS['UNIDENTIFIED']
            continue
        cell_tables[c] = table
        mass[c] = probs.probs[members[c]].sum(axis=0)
    if cell_flags:
        logger.warning(f'{len(cell_flags)} of {cells.n_cells} cells are unidentified (P lacks full column rank)')

    defined = mass.sum(axis=0) > 0
    weights = np.zeros_like(mass)
    weights[:, defined] = mass[:, defined] / mass[:, defined].sum(axis=0)
    marginal = np.einsum('cyr,cr->yr', np.nan_to_num(cell_tables), weights)
    marginal[:, ~defined] = np.nan

    return DisparityEstimate(
        method='ols',
        outcomes=records.outcome_levels,
        races=probs.races,
        mu_y_given_r=marginal,
        flags=_column_flags(probs.races, defined),
        weights_r=probs.probs.mean(axis=0) if probs.n else None,
        cell_keys=cells.keys,
        mu_y_given_rgx=cell_tables,
        cell_flags=cell_flags,
    )


def census_cell_weights(tables: CensusTables, cell_keys):
    """
    q_{gx|r} rows for (level, geo, cov) cell keys

    Returns:
        Tuple of (cells x races array, found mask)
    """
    weights = np.full((len(cell_keys), len(tables.races)), np.nan)
    found = np.zeros(len(cell_keys), dtype=bool)
    by_level: Dict[str, List[int]] = {}
    for i, (level, _, _) in enumerate(cell_keys):
        by_level.setdefault(level, []).append(i)
    for level, index in by_level.items():
        if level not in tables.geo_cov_given_race:
            continue
        rows, hit = tables.q_weights(level, [(cell_keys[i][1], cell_keys[i][2]) for i in index])
        weights[index] = rows
        found[index] = hit
    return weights, found


def ols_poststratify(cell_estimates: DisparityEstimate, tables: CensusTables):
    """
    Aggregate per-cell estimates with census weights q_{gx|r}

    Weights are renormalized over the identified cells present in the sample.

    Args:
        cell_estimates: Output of ols_estimate
        tables: CensusTables

    Returns:
        DisparityEstimate with method 'ols_poststrat'
    """
    if cell_estimates.mu_y_given_rgx is None:
        raise ValidationError('post-stratification needs per-cell estimates')
    keys = cell_estimates.cell_keys
    identified = np.array([key not in cell_estimates.cell_flags for key in keys], dtype=bool)
    q, found = census_cell_weights(tables, keys)
    if not found[identified].all():
        missing = [keys[i] for i in np.flatnonzero(identified & ~found)][:5]
        raise ValidationError(f'{ERROR_MESSAGES["MISSING_Q_WEIGHTS"]}: {missing}')

    q = np.where(identified[:, None], np.nan_to_num(q), 0.0)
    totals = q.sum(axis=0)
    empty = [race for race, total in zip(cell_estimates.races, totals) if total <= 0]
    if empty:
        raise IdentificationError(f'{ERROR_MESSAGES["NO_IDENTIFIED_CELLS"]}: {", ".join(empty)}')
    weights = q / totals
    marginal = np.einsum('cyr,cr->yr', np.nan_to_num(cell_estimates.mu_y_given_rgx), weights)
    logger.info(f'Post-stratified {int(identified.sum())} identified cells')
    return DisparityEstimate(
        method='ols_poststrat',
        outcomes=cell_estimates.outcomes,
        races=cell_estimates.races,
        mu_y_given_r=marginal,
        weights_r=tables.prior,
        cell_keys=keys,
        mu_y_given_rgx=cell_estimates.mu_y_given_rgx,
        cell_flags=dict(cell_estimates.cell_flags),
    )


# ============================================
# WEIGHTING VERSUS OLS
# ============================================
@dataclass(frozen=True)
class EqualityReport:
    """
    Comparison of weighting and OLS estimates within one cell

    Attributes:
        verdict: 'equal' or 'unequal'
        weighting: Per-race weighting estimates
        ols: Per-race OLS estimates (None when P is rank deficient)
        pairs: (r, s) -> {'orthogonal', 'equal_weighting', 'holds'}
        condition_holds: Every pair is orthogonal or has equal weighting estimates
    """
    verdict: str
    weighting: np.ndarray
    ols: np.ndarray
    pairs: Dict[tuple, Dict[str, bool]] = field(default_factory=dict)
    condition_holds: bool = False

    @property
    def equal(self):
        return self.verdict == 'equal'


def wtd_ols_equality_check(probs_cell, outcome_cell, tol=EQUALITY_TOL):
    """
    Whether weighting and OLS coincide in a cell, with the pairwise condition

    The estimators agree exactly when every pair of races either has disjoint
    probability support or equal weighting estimates.

    Args:
        probs_cell: n x |R| row-stochastic matrix
        outcome_cell: Length-n indicator vector
        tol: Agreement tolerance

    Returns:
        EqualityReport
    """
    p = np.atleast_2d(np.asarray(probs_cell, dtype=float))
    b = np.asarray(outcome_cell, dtype=float).ravel()
    mass = p.sum(axis=0)
    weighting = np.divide(p.T @ b, mass, out=np.full(p.shape[1], np.nan), where=mass > 0)

    ols = None
    if numerical_rank(p) == p.shape[1]:
        ols, *_ = np.linalg.lstsq(p, b, rcond=None)

    gram = p.T @ p
    pairs = {}
    for r in range(p.shape[1]):
        for s in range(r + 1, p.shape[1]):
            orthogonal = bool(gram[r, s] <= ORTHOGONAL_TOL)
            equal_weighting = bool(abs(weighting[r] - weighting[s]) <= tol)
            pairs[(r, s)] = {'orthogonal': orthogonal, 'equal_weighting': equal_weighting,
                             'holds': orthogonal or equal_weighting}

    equal = ols is not None and bool(np.all(np.abs(ols - weighting) <= tol))
    return EqualityReport(
        verdict='equal' if equal else 'unequal',
        weighting=weighting,
        ols=ols,
        pairs=pairs,
        condition_holds=all(pair['holds'] for pair in pairs.values()),
    )

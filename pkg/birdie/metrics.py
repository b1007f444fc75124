"""
Evaluation metrics for disparity estimates and race probabilities
"""

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
import pandas as pd
from scipy import stats

from birdie.bisg import map_classify
from birdie.config.constants import DEFAULTS, ERROR_MESSAGES, FLAGS
from birdie.em import cell_tables_by_area
from birdie.middleware.error_handler import ValidationError
from birdie.middleware.validators import validate_records
from birdie.models.estimates import DisparityEstimate, EvalReport
from birdie.models.outcome import OutcomeFit
from birdie.models.probs import ProbMatrix
from birdie.models.records import RecordTable

logger = logging.getLogger(__name__)


def align_estimate(est: DisparityEstimate, truth: DisparityEstimate):
    """est with rows and columns reordered to truth's labels when the label sets agree"""
    if set(est.outcomes) != set(truth.outcomes) or set(est.races) != set(truth.races):
        return est
    rows = [est.outcomes.index(y) for y in truth.outcomes]
    columns = [est.races.index(r) for r in truth.races]
    return replace(est, outcomes=tuple(truth.outcomes), races=tuple(truth.races),
                   mu_y_given_r=est.mu_y_given_r[np.ix_(rows, columns)])


def _check_support(est, truth):
    if tuple(est.outcomes) != tuple(truth.outcomes) or tuple(est.races) != tuple(truth.races):
        raise ValidationError(f'{ERROR_MESSAGES["SUPPORT_MISMATCH"]}: '
                              f'{list(est.outcomes)} x {list(est.races)} vs {list(truth.outcomes)} x {list(truth.races)}')


# ============================================
# DISPARITY TABLES
# ============================================
def tv_distance(est: DisparityEstimate, truth: DisparityEstimate, marginal_r=None):
    """
    Total variation distance between joint tables Pr(Y, R)

    Args:
        est: Estimated Pr(Y | R)
        truth: True Pr(Y | R)
        marginal_r: Pr(R = r) forming the joint tables (truth.weights_r by default)

    Returns:
        float; NaN when an estimate column with positive marginal is undefined
    """
    _check_support(est, truth)
    marginal = np.asarray(truth.weights_r if marginal_r is None else marginal_r, dtype=float)
    if marginal.shape != (len(truth.races),):
        raise ValidationError(f'{ERROR_MESSAGES["SUPPORT_MISMATCH"]}: marginal length {marginal.shape}')
    used = marginal > 0
    diff = (est.mu_y_given_r[:, used] - truth.mu_y_given_r[:, used]) * marginal[used]
    if np.isnan(diff).any():
        return float('nan')
    return float(0.5 * np.abs(diff).sum())


def tv_within_race(est: DisparityEstimate, truth: DisparityEstimate):
    """
    Total variation distance between Pr(Y | R = r) tables, per race

    Returns:
        Series indexed by race; NaN where either column is undefined
    """
    _check_support(est, truth)
    tv = 0.5 * np.abs(est.mu_y_given_r - truth.mu_y_given_r).sum(axis=0)
    undefined = np.isnan(est.mu_y_given_r).any(axis=0) | np.isnan(truth.mu_y_given_r).any(axis=0)
    tv[undefined] = np.nan
    return pd.Series(tv, index=list(truth.races), name='tv')


# ============================================
# SMALL AREAS
# ============================================
@dataclass(frozen=True)
class AreaTables:
    """
    Pr(Y | R, area) per geo area

    Attributes:
        areas: Area keys
        outcomes: Outcome labels
        races: Race labels
        probs: areas x outcomes x races, NaN where the race has no mass
        counts: areas x races record counts (or probability mass)
    """
    areas: Tuple[str, ...]
    outcomes: Tuple[str, ...]
    races: Tuple[str, ...]
    probs: np.ndarray
    counts: np.ndarray

    def reindex(self, areas):
        """Tables aligned to the given area order; missing areas are NaN with zero count"""
        lookup = {area: i for i, area in enumerate(self.areas)}
        probs = np.full((len(areas),) + self.probs.shape[1:], np.nan)
        counts = np.zeros((len(areas), self.counts.shape[1]))
        for i, area in enumerate(areas):
            if area in lookup:
                probs[i] = self.probs[lookup[area]]
                counts[i] = self.counts[lookup[area]]
        return AreaTables(tuple(areas), self.outcomes, self.races, probs, counts)


def area_tables_from_weights(records: RecordTable, weights, races, level=None):
    """
    Weighted Pr(Y | R, area) from per-record race weights

    Indicator weights of true race give the ground-truth tables; BISG
    probabilities give the weighting estimator; MAP indicators give thresholding.

    Args:
        records: RecordTable with outcomes
        weights: N x races weights
        races: Race labels for the weight columns
        level: Geo level defining areas (finest available by default)

    Returns:
        AreaTables
    """
    validate_records(records, need_outcome=True)
    weights = np.asarray(weights, dtype=float)
    level = level or records.geo_levels[0]
    _, geo = records.geo_at(level)
    area_codes, areas = pd.factorize(pd.Series(geo, dtype=object).fillna(''), sort=True)
    n_areas, n_outcomes = len(areas), len(records.outcome_levels)
    flat = area_codes * n_outcomes + records.outcome_codes()
    numerator = np.stack([
        np.bincount(flat, weights=weights[:, r], minlength=n_areas * n_outcomes).reshape(n_areas, n_outcomes)
        for r in range(weights.shape[1])
    ], axis=2)
    counts = numerator.sum(axis=1)
    probs = np.divide(numerator, counts[:, None, :], out=np.full(numerator.shape, np.nan),
                      where=counts[:, None, :] > 0)
    return AreaTables(tuple(str(a) for a in areas), records.outcome_levels, tuple(races), probs, counts)


def true_race_weights(records: RecordTable, races):
    validate_records(records, need_true_race=True)
    codes = records.race_codes(races)
    weights = np.zeros((records.n, len(races)))
    known = codes >= 0
    weights[np.flatnonzero(known), codes[known]] = 1.0
    return weights


def area_tables_from_fit(fit: OutcomeFit, records: RecordTable = None):
    """AreaTables from a fit's cell tables, pooled within each area by updated-probability mass"""
    areas, probs, mass = cell_tables_by_area(fit)
    return AreaTables(tuple(areas), fit.outcomes, fit.races, probs, mass)


def _included(est_cells, truth_cells, min_cell):
    est = est_cells.reindex(truth_cells.areas)
    keep = truth_cells.counts >= min_cell
    keep &= ~np.isnan(truth_cells.probs).any(axis=1)
    keep &= ~np.isnan(est.probs).any(axis=1)
    if not keep.any():
        raise ValidationError(ERROR_MESSAGES['NO_AREAS'])
    return est, keep


def small_area_mean_tv(est_cells: AreaTables, truth_cells: AreaTables, min_cell=DEFAULTS['MIN_CELL']):
    """
    Mean over areas of the within-race TV distance

    Area-race cells with fewer than min_cell true records are excluded.

    Returns:
        Series indexed by race; NaN where no area qualifies
    """
    est, keep = _included(est_cells, truth_cells, min_cell)
    tv = 0.5 * np.abs(np.nan_to_num(est.probs) - np.nan_to_num(truth_cells.probs)).sum(axis=1)
    values = [tv[keep[:, r], r].mean() if keep[:, r].any() else np.nan for r in range(tv.shape[1])]
    return pd.Series(values, index=list(truth_cells.races), name='mean_tv')


def rmse_and_correlation(est_cells: AreaTables, truth_cells: AreaTables, min_cell=DEFAULTS['MIN_CELL']):
    """
    Per-race RMSE over (outcome, area) entries and cross-area correlation

    The correlation is computed across areas for each outcome level and then
    averaged over outcome levels; levels where either side is constant across
    areas are skipped, and the race is flagged when none remain.

    Returns:
        DataFrame indexed by race with columns rmse, correlation, flag
    """
    est, keep = _included(est_cells, truth_cells, min_cell)
    rows = []
    for r, race in enumerate(truth_cells.races):
        areas = keep[:, r]
        if not areas.any():
            rows.append((race, np.nan, np.nan, FLAGS['SMALL_CELL']))
            continue
        e, t = est.probs[areas, :, r], truth_cells.probs[areas, :, r]
        rmse = float(np.sqrt(np.mean((e - t) ** 2)))
        correlations = []
        for k in range(e.shape[1]):
            if areas.sum() < 2 or np.ptp(t[:, k]) == 0 or np.ptp(e[:, k]) == 0:
                continue
            correlations.append(stats.pearsonr(e[:, k], t[:, k])[0])
        if correlations:
            rows.append((race, rmse, float(np.mean(correlations)), FLAGS['OK']))
        else:
            rows.append((race, rmse, np.nan, FLAGS['CONSTANT']))
    return pd.DataFrame(rows, columns=['race', 'rmse', 'correlation', 'flag']).set_index('race')


# ============================================
# RACE PREDICTION
# ============================================
def _true_codes(probs, true_race):
    lookup = {race: i for i, race in enumerate(probs.races)}
    codes = np.array([lookup.get(value, -1) for value in true_race], dtype=np.int64)
    if len(codes) != probs.n:
        raise ValidationError(ERROR_MESSAGES['MISALIGNED'])
    if np.any(codes < 0):
        raise ValidationError(f'{ERROR_MESSAGES["MISSING_TRUE_RACE"]} or unknown race labels')
    return codes


def log_score(probs: ProbMatrix, true_race, floor=DEFAULTS['LOG_SCORE_FLOOR']):
    """Mean log probability assigned to the true race, with zero entries floored"""
    codes = _true_codes(probs, true_race)
    picked = probs.probs[np.arange(probs.n), codes]
    return float(np.mean(np.log(np.maximum(picked, floor))))


def map_accuracy(probs: ProbMatrix, true_race):
    """Share of records whose most probable race is the true race"""
    _true_codes(probs, true_race)
    return float(np.mean(map_classify(probs) == np.asarray(true_race, dtype=object)))


def roc_auc(probs: ProbMatrix, true_race):
    """
    One-vs-rest AUC per race by the rank-sum statistic with midranks

    Returns:
        Series indexed by race; NaN where only one class is present
    """
    codes = _true_codes(probs, true_race)
    values = []
    for r in range(len(probs.races)):
        positive = codes == r
        n_pos, n_neg = int(positive.sum()), int((~positive).sum())
        if n_pos == 0 or n_neg == 0:
            values.append(np.nan)
            continue
        ranks = stats.rankdata(probs.probs[:, r])
        values.append((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
    return pd.Series(values, index=list(probs.races), name='auc')


# ============================================
# REPORTS
# ============================================
def series_report(metric, series, scope='per-race', nan_flag=FLAGS['UNDEFINED']):
    """EvalReport from a Series; NaN values carry nan_flag"""
    values = pd.DataFrame({
        'key': [str(k) for k in series.index],
        'value': series.to_numpy(dtype=float),
    })
    values['flag'] = np.where(np.isnan(values['value']), nan_flag, FLAGS['OK'])
    return EvalReport(metric=metric, scope=scope, values=values)


def scalar_report(metric, value):
    flag = FLAGS['UNDEFINED'] if np.isnan(value) else FLAGS['OK']
    return EvalReport(metric=metric, scope='overall',
                      values=pd.DataFrame({'key': ['all'], 'value': [float(value)], 'flag': [flag]}))


def reports_frame(reports):
    """Stack EvalReports into the metric,scope,key,value,flag table"""
    if not reports:
        return pd.DataFrame(columns=['metric', 'scope', 'key', 'value', 'flag'])
    return pd.concat([report.to_frame() for report in reports], ignore_index=True)

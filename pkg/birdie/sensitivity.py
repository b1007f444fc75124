"""
Sensitivity analysis for the exclusion restriction and for BISG error
Surname-group residual diagnostics, group-augmented refits and bias bounds
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from birdie.config.constants import DEFAULTS, ERROR_MESSAGES, FLAGS, OTHER_GROUP
from birdie.em import estimate_from_fit, fit_birdie
from birdie.estimators_baseline import numerical_rank
from birdie.middleware.error_handler import IdentificationError, ValidationError
from birdie.middleware.validators import validate_alignment, validate_records
from birdie.models.outcome import OutcomeFit
from birdie.utils.csv_store import read_table
from birdie.utils.helpers import spawn_seeds
from birdie.utils.parallel import parallel_map, tree_reduce

logger = logging.getLogger(__name__)

MIN_DRAWS = 10
DRAWS_PER_TASK = 25


# ============================================
# SURNAME GROUPS
# ============================================
@dataclass(frozen=True)
class SurnameGroups:
    """
    Low-dimensional surname summary f(S)

    Attributes:
        mapping: Surname key -> group label
        default: Group for unmapped surnames
    """
    mapping: Dict[str, str]
    default: str = OTHER_GROUP

    def group_of(self, surnames):
        return np.array([self.mapping.get(s, self.default) if s is not None else self.default
                         for s in surnames], dtype=object)

    def labels(self, surnames=None):
        if surnames is None:
            return tuple(sorted(set(self.mapping.values()) | {self.default}))
        return tuple(sorted(set(self.group_of(surnames))))


def load_surname_groups(path, default=OTHER_GROUP):
    """Read a surname,group CSV"""
    frame = read_table(path, required=['surname', 'group'], text_columns=['surname', 'group'])
    frame = frame.dropna()
    mapping = {str(s).strip().upper(): str(g) for s, g in zip(frame['surname'], frame['group'])}
    logger.info(f'✅ Loaded {len(mapping)} surnames in {len(set(mapping.values()))} groups')
    return SurnameGroups(mapping=mapping, default=default)


# ============================================
# RESIDUAL CORRELATION
# ============================================
def fitted_outcome_probs(fit: OutcomeFit):
    """N x outcomes sum_r updated_ir * theta(y | r, cell_i)"""
    table = fit.cell_table[:, fit.cells.codes, :]
    return np.einsum('nr,rny->ny', fit.updated_probs.probs, table)


def residual_correlation(fit: OutcomeFit, records, groups: SurnameGroups, level=DEFAULTS['CI_LEVEL']):
    """
    Correlation of fit residuals with surname-group indicators

    Residual for record i and outcome y is 1{Y_i = y} minus the fitted
    probability under the updated race probabilities. Intervals use the
    Fisher transform with a normal approximation.

    Args:
        fit: OutcomeFit on these records
        records: RecordTable the fit used
        groups: SurnameGroups
        level: Confidence level

    Returns:
        DataFrame with columns group, y, correlation, ci_lo, ci_hi, flag
    """
    validate_records(records, need_outcome=True)
    validate_alignment(fit.updated_probs, records)
    n = records.n
    onehot = np.zeros((n, len(fit.outcomes)))
    onehot[np.arange(n), records.outcome_codes()] = 1.0
    resid = onehot - fitted_outcome_probs(fit)

    member = groups.group_of(records.surname)
    labels = groups.labels(records.surname)
    indicator = np.column_stack([(member == label).astype(float) for label in labels]) if labels else np.empty((n, 0))

    resid_c = resid - resid.mean(axis=0)
    ind_c = indicator - indicator.mean(axis=0)
    cross = ind_c.T @ resid_c
    scale = np.sqrt(np.outer((ind_c ** 2).sum(axis=0), (resid_c ** 2).sum(axis=0)))
    z_crit = stats.norm.ppf(0.5 + level / 2.0)
    counts = indicator.sum(axis=0)
    resid_constant = (resid_c ** 2).sum(axis=0) <= 1e-24

    rows = []
    for g, label in enumerate(labels):
        for k, outcome in enumerate(fit.outcomes):
            if counts[g] < 2 or counts[g] == n:
                rows.append((label, outcome, np.nan, np.nan, np.nan, FLAGS['UNDEFINED']))
                continue
            if resid_constant[k]:
                rows.append((label, outcome, 0.0, 0.0, 0.0, FLAGS['CONSTANT']))
                continue
            rho = float(np.clip(cross[g, k] / scale[g, k], -1.0, 1.0))
            if n <= 3:
                rows.append((label, outcome, rho, np.nan, np.nan, FLAGS['UNDEFINED']))
                continue
            z = np.arctanh(np.clip(rho, -1 + 1e-15, 1 - 1e-15))
            half = z_crit / np.sqrt(n - 3)
            rows.append((label, outcome, rho, float(np.tanh(z - half)), float(np.tanh(z + half)), FLAGS['OK']))

    frame = pd.DataFrame(rows, columns=['group', 'y', 'correlation', 'ci_lo', 'ci_hi', 'flag'])
    flagged = frame[(frame['flag'] == FLAGS['OK']) & ((frame['ci_lo'] > 0) | (frame['ci_hi'] < 0))]
    if len(flagged):
        logger.warning(f'{len(flagged)} group-outcome residual correlations exclude zero')
    return frame


# ============================================
# GROUP-AUGMENTED REFIT
# ============================================
@dataclass(frozen=True)
class GroupRefit:
    """
    Refit with X augmented by the surname group

    Attributes:
        fit: OutcomeFit on (X, f(S)) cells
        base_fit: Fit without groups
        changes: DataFrame y, r, base, refit, change
        mean_abs_change: Mean |change| over (y, r)
        max_abs_change: Largest |change|
    """
    fit: OutcomeFit
    base_fit: OutcomeFit
    changes: pd.DataFrame
    mean_abs_change: float
    max_abs_change: float


def refit_with_groups(probs, records, groups: SurnameGroups, spec=None, base_fit: Optional[OutcomeFit] = None,
                      **fit_options):
    """
    Fit BIRDiE on cells (G, X, f(S)) and compare with the base fit

    Both fits are aggregated with their own updated-probability race mass,
    since census weights do not exist for surname-group cells.

    Args:
        probs: BISG ProbMatrix aligned with records
        records: RecordTable with outcomes
        groups: SurnameGroups
        spec: OutcomeModelSpec shared by both fits
        base_fit: Existing fit without groups (fitted here when None)
        fit_options: Passed to fit_birdie

    Returns:
        GroupRefit
    """
    validate_records(records, need_outcome=True)
    validate_alignment(probs, records)
    member = groups.group_of(records.surname)
    augmented = records.with_cov([f'{cov}|{group}' for cov, group in zip(records.cov, member)])

    base_fit = base_fit or fit_birdie(probs, records, spec, **fit_options)
    fit = fit_birdie(probs, augmented, spec or base_fit.spec, **fit_options)

    base = estimate_from_fit(base_fit, weights='sample').mu_y_given_r
    refit = estimate_from_fit(fit, weights='sample').mu_y_given_r
    change = refit - base
    outcome_idx, race_idx = np.meshgrid(np.arange(len(fit.outcomes)), np.arange(len(fit.races)), indexing='ij')
    changes = pd.DataFrame({
        'y': np.asarray(fit.outcomes, dtype=object)[outcome_idx.ravel()],
        'r': np.asarray(fit.races, dtype=object)[race_idx.ravel()],
        'base': base.ravel(),
        'refit': refit.ravel(),
        'change': change.ravel(),
    })
    abs_change = np.abs(change)
    mean_abs = float(np.nanmean(abs_change)) if np.isfinite(abs_change).any() else float('nan')
    max_abs = float(np.nanmax(abs_change)) if np.isfinite(abs_change).any() else float('nan')
    logger.info(f'✅ Surname-group refit: mean |change| {mean_abs:.4f}, max |change| {max_abs:.4f}')
    return GroupRefit(fit=fit, base_fit=base_fit, changes=changes, mean_abs_change=mean_abs,
                      max_abs_change=max_abs)


# ============================================
# BIAS BOUND
# ============================================
@dataclass(frozen=True)
class BiasBoundReport:
    """
    Worst-case first-order shift of posterior quantities under BISG error

    Attributes:
        quantities: Labels of g(theta) entries
        delta: Total error norm used
        bound: delta * ||Cov(g, weight)|| per quantity
        cov_norm: Frobenius norm of the covariance per quantity
        draws: Posterior draws used
        direction: Unit-norm worst-case perturbation per quantity (Q x N x R)
    """
    quantities: Tuple[str, ...]
    delta: float
    bound: np.ndarray
    cov_norm: np.ndarray
    draws: int
    direction: np.ndarray = field(repr=False, default=None)

    def perturbation_direction(self, quantity):
        """Unit-norm perturbation of the input probabilities that moves `quantity` the most"""
        return self.direction[self.quantities.index(quantity)]

    def to_frame(self):
        return pd.DataFrame({'quantity': list(self.quantities), 'delta': self.delta, 'bound': self.bound})


def theta_quantity(fit: OutcomeFit):
    """
    Default g(theta): Pr(Y | R) aggregated with the fit's updated-probability cell mass

    Returns:
        Tuple of (callable on races x cells x outcomes tables, labels)
    """
    updated = fit.updated_probs.probs
    mass = np.stack([np.bincount(fit.cells.codes, weights=updated[:, r], minlength=fit.cells.n_cells)
                     for r in range(updated.shape[1])], axis=1)
    share = mass / np.where(mass.sum(axis=0) > 0, mass.sum(axis=0), 1.0)
    labels = tuple(f'{y}|{r}' for r in fit.races for y in fit.outcomes)

    def quantity(table):
        return np.einsum('cr,rcy->ry', share, table).ravel()

    return quantity, labels


def _posterior_draws(fit: OutcomeFit, rng, count):
    alpha = fit.spec.alpha_vector(len(fit.outcomes))
    if fit.kind == 'complete_pooling':
        concentration = alpha + fit.suffstats.sum(axis=1)
        draws = np.stack([
            np.stack([rng.dirichlet(concentration[r]) for r in range(concentration.shape[0])])
            for _ in range(count)
        ])
        return np.broadcast_to(draws[:, :, None, :], (count,) + fit.cell_table.shape)
    concentration = alpha + fit.suffstats
    gamma = rng.standard_gamma(np.broadcast_to(concentration, (count,) + concentration.shape))
    return gamma / gamma.sum(axis=-1, keepdims=True)


def _moments(g_values, weights):
    """(count, mean_g, mean_w, co-moment) of one batch"""
    count = len(g_values)
    mean_g = g_values.mean(axis=0)
    mean_w = weights.mean(axis=0)
    centered_g = g_values - mean_g
    centered_w = weights - mean_w
    comoment = np.einsum('dq,dnr->qnr', centered_g, centered_w)
    return count, mean_g, mean_w, comoment


def _merge(a, b):
    n_a, g_a, w_a, c_a = a
    n_b, g_b, w_b, c_b = b
    n = n_a + n_b
    delta_g = g_b - g_a
    delta_w = w_b - w_a
    comoment = c_a + c_b + np.einsum('q,nr->qnr', delta_g, delta_w) * (n_a * n_b / n)
    return n, g_a + delta_g * (n_b / n), w_a + delta_w * (n_b / n), comoment


def perturbation_weights(table, probs, cell_codes, y_codes):
    """theta[r, c_i, y_i] / sum_r' theta[r', c_i, y_i] P_ir' for one draw"""
    likelihood = table[:, cell_codes, y_codes].T
    normalizer = np.sum(likelihood * probs, axis=1, keepdims=True)
    return np.divide(likelihood, normalizer, out=np.zeros_like(likelihood), where=normalizer > 0)


def bias_bound(fit: OutcomeFit, probs, records, g_fn: Callable = None, delta_norm=0.01,
               draws=DEFAULTS['BIAS_DRAWS'], seed=DEFAULTS['SEED'], quantity_labels=None,
               theta_draws=None, threads=None):
    """
    First-order bound on how far BISG error of norm delta can move g(theta)

    Posterior draws come from the conditional Dirichlet given the final
    sufficient statistics. For each draw the per-record weights
    theta[r, c_i, y_i] / (theta[., c_i, y_i] . P_i) are formed and their
    covariance with g is accumulated in parallel batches.

    Args:
        fit: Pooling or saturated OutcomeFit
        probs: Input ProbMatrix used for the fit
        records: RecordTable used for the fit
        g_fn: races x cells x outcomes table -> vector (Pr(Y | R) by default)
        delta_norm: Total error norm (>= 0)
        draws: Posterior draws (at least 10)
        seed: Root seed; batch seeds are spawned from it
        quantity_labels: Names for g entries
        theta_draws: Optional precomputed draws (D x races x cells x outcomes)
        threads: Worker cap

    Returns:
        BiasBoundReport
    """
    if fit.kind not in ('complete_pooling', 'saturated'):
        raise ValidationError(f'{ERROR_MESSAGES["UNSUPPORTED_MODEL"]}: {fit.kind}')
    if delta_norm < 0:
        raise ValidationError('delta_norm must be nonnegative')
    validate_alignment(probs, records)
    if g_fn is None:
        g_fn, default_labels = theta_quantity(fit)
        quantity_labels = quantity_labels or default_labels

    cell_codes, y_codes = fit.cells.codes, records.outcome_codes()
    if theta_draws is not None:
        theta_draws = np.asarray(theta_draws, dtype=float)
        draws = len(theta_draws)
    if draws < MIN_DRAWS:
        raise ValidationError(ERROR_MESSAGES['TOO_FEW_DRAWS'])

    def batch(task):
        start, stop, seed_seq = task
        if theta_draws is not None:
            tables = theta_draws[start:stop]
        else:
            tables = _posterior_draws(fit, np.random.default_rng(seed_seq), stop - start)
        g_values = np.stack([np.atleast_1d(g_fn(table)) for table in tables])
        weights = np.stack([perturbation_weights(table, probs.probs, cell_codes, y_codes) for table in tables])
        return _moments(g_values, weights)

    starts = list(range(0, draws, DRAWS_PER_TASK))
    seeds = spawn_seeds(seed, len(starts))
    tasks = [(start, min(start + DRAWS_PER_TASK, draws), s) for start, s in zip(starts, seeds)]
    count, _, _, comoment = tree_reduce(_merge, parallel_map(batch, tasks, threads))
    covariance = comoment / (count - 1)

    cov_norm = np.sqrt(np.sum(covariance ** 2, axis=(1, 2)))
    direction = np.divide(covariance, cov_norm[:, None, None], out=np.zeros_like(covariance),
                          where=cov_norm[:, None, None] > 0)
    labels = tuple(quantity_labels or (str(i) for i in range(len(cov_norm))))
    logger.info(f'✅ Bias bound from {count} draws, delta={delta_norm}')
    return BiasBoundReport(
        quantities=labels,
        delta=float(delta_norm),
        bound=delta_norm * cov_norm,
        cov_norm=cov_norm,
        draws=int(count),
        direction=direction,
    )


def ols_perturbation_bias(probs_cell, delta_cell, mu_true):
    """
    Bias of cell OLS when the true race probabilities are P + delta

    Args:
        probs_cell: n x |R| matrix P used by OLS
        delta_cell: n x |R| error delta
        mu_true: Length-|R| (or |R| x k) true outcome means

    Returns:
        (P'P)^-1 P' delta mu
    """
    p = np.atleast_2d(np.asarray(probs_cell, dtype=float))
    delta = np.asarray(delta_cell, dtype=float).reshape(p.shape)
    if numerical_rank(p) < p.shape[1]:
        raise IdentificationError()
    shift = delta @ np.asarray(mu_true, dtype=float)
    bias, *_ = np.linalg.lstsq(p, shift, rcond=None)
    return bias

"""
Outcome disparities conditional on an additional covariate W
"""

import logging

import numpy as np

from birdie.config.constants import DEFAULTS, ERROR_MESSAGES, FLAGS
from birdie.em import estimate_from_fit, fit_birdie
from birdie.middleware.error_handler import ValidationError
from birdie.middleware.validators import validate_alignment, validate_records
from birdie.models.estimates import ConditionalEstimate
from birdie.models.outcome import OutcomeModelSpec
from birdie.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

JOINT_SEPARATOR = '|'


def _normalize_within(joint, outcomes, extras, races):
    """Pr(Y, W | R) with axes (y, w, r) -> Pr(Y | W, R) and flags for empty (w, r)"""
    mass = joint.sum(axis=0)
    defined = mass > 0
    table = np.divide(joint, mass[None], out=np.full(joint.shape, np.nan), where=defined[None])
    flags = {(extras[j], races[k]): FLAGS['UNDEFINED']
             for j in range(len(extras)) for k in range(len(races)) if not defined[j, k]}
    return table, flags


def estimate_joint(probs, records, spec: OutcomeModelSpec = None, tables=None, joint_cap=DEFAULTS['JOINT_CAP'],
                   **fit_options):
    """
    Fit BIRDiE on the combined outcome (Y, W) and condition on W

    Args:
        probs: BISG ProbMatrix aligned with records
        records: RecordTable with outcome and extra columns
        spec: OutcomeModelSpec for the combined outcome
        tables: CensusTables for census-weighted aggregation (sample weights when None)
        joint_cap: Largest allowed |Y| * |W|
        fit_options: Passed to fit_birdie (accel, tol, max_iter, level, threads)

    Returns:
        ConditionalEstimate with approach 'joint'
    """
    validate_records(records, need_outcome=True, need_extra=True)
    validate_alignment(probs, records)
    outcomes, extras = records.outcome_levels, records.extra_levels
    if len(outcomes) * len(extras) > joint_cap:
        raise ValidationError(f'{ERROR_MESSAGES["JOINT_CAP"]} ({len(outcomes)} x {len(extras)} > {joint_cap})')

    combined_levels = [f'{y}{JOINT_SEPARATOR}{w}' for y in outcomes for w in extras]
    combined = [f'{y}{JOINT_SEPARATOR}{w}' for y, w in zip(records.outcome, records.extra)]
    fit = fit_birdie(probs, records.with_outcome(combined, combined_levels), spec, **fit_options)
    estimate = estimate_from_fit(fit, tables, weights='census' if tables is not None else 'sample')

    joint = estimate.mu_y_given_r.reshape(len(outcomes), len(extras), len(probs.races))
    table, flags = _normalize_within(np.nan_to_num(joint), outcomes, extras, probs.races)
    logger.info(f'✅ Joint conditional estimate over {len(combined_levels)} combined levels')
    return ConditionalEstimate(
        approach='joint',
        outcomes=outcomes,
        extras=extras,
        races=probs.races,
        mu_y_given_wr=table,
        flags=flags,
        intermediate={'fit': fit},
    )


def estimate_two_step(probs, records, spec_w: OutcomeModelSpec = None, spec_y: OutcomeModelSpec = None,
                      threads=None, **fit_options):
    """
    Update probabilities with W, then fit Y within each W stratum

    Step-two fits are independent of step one's cell effects; each stratum is
    aggregated with its own updated-probability race mass.

    Args:
        probs: BISG ProbMatrix aligned with records
        records: RecordTable with outcome and extra columns
        spec_w: OutcomeModelSpec for Pr(W | R, G, X)
        spec_y: OutcomeModelSpec for Pr(Y | R, G, X, W)
        threads: Worker cap across strata
        fit_options: Passed to fit_birdie (accel, tol, max_iter, level)

    Returns:
        ConditionalEstimate with approach 'two_step'
    """
    validate_records(records, need_outcome=True, need_extra=True)
    validate_alignment(probs, records)
    outcomes, extras, races = records.outcome_levels, records.extra_levels, probs.races

    fit_w = fit_birdie(probs, records.with_outcome(records.extra, extras), spec_w, threads=threads, **fit_options)
    probs_w = fit_w.updated_probs

    def fit_stratum(extra):
        mask = records.extra == extra
        if not mask.any():
            return None
        fit = fit_birdie(probs_w.take(mask), records.take(mask), spec_y, threads=1, **fit_options)
        return estimate_from_fit(fit, weights='sample')

    estimates = parallel_map(fit_stratum, extras, threads)

    table = np.full((len(outcomes), len(extras), len(races)), np.nan)
    flags = {}
    for j, (extra, estimate) in enumerate(zip(extras, estimates)):
        if estimate is None:
            logger.warning(f'W stratum {extra} has no records')
            flags.update({(extra, race): FLAGS['UNDEFINED'] for race in races})
            continue
        table[:, j, :] = estimate.mu_y_given_r
        flags.update({(extra, race): flag for race, flag in estimate.flags.items()})

    logger.info(f'✅ Two-step conditional estimate over {len(extras)} strata')
    return ConditionalEstimate(
        approach='two_step',
        outcomes=outcomes,
        extras=extras,
        races=races,
        mu_y_given_wr=table,
        flags=flags,
        intermediate={'fit_w': fit_w, 'probs_w': probs_w, 'stratum_estimates': estimates},
    )

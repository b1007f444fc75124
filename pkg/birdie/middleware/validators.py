"""
Input validation functions
"""

import numpy as np

from birdie.config.constants import ERROR_MESSAGES
from birdie.middleware.error_handler import ValidationError


def validate_columns(frame, required, source=''):
    """
    Check a DataFrame carries the required columns

    Args:
        frame: DataFrame read from a CSV
        required: Column names that must be present
        source: File name used in the message

    Returns:
        True or raises ValidationError
    """
    missing = [column for column in required if column not in frame.columns]
    if missing:
        where = f' in {source}' if source else ''
        raise ValidationError(f'{ERROR_MESSAGES["MISSING_COLUMNS"]}{where}: {", ".join(missing)}')
    return True


def validate_probability_vector(values, name='vector', tol=1e-9, normalized=True):
    """Nonnegative entries, summing to 1 within tol when normalized"""
    values = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise ValidationError(f'{name}: {ERROR_MESSAGES["NEGATIVE_PROBABILITY"]}')
    if normalized and abs(values.sum() - 1.0) > tol:
        raise ValidationError(f'{name}: {ERROR_MESSAGES["PRIOR_SUM"]}')
    return values


def validate_prob_matrix(probs, tol=1e-9):
    """Every row nonnegative and summing to 1"""
    matrix = np.asarray(probs.probs, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != len(probs.races):
        raise ValidationError(ERROR_MESSAGES['MISALIGNED'])
    if matrix.size and (np.any(~np.isfinite(matrix)) or matrix.min() < 0
                        or np.abs(matrix.sum(axis=1) - 1.0).max() > tol):
        raise ValidationError(ERROR_MESSAGES['NOT_STOCHASTIC'])
    return True


def validate_race_labels(expected, found, source=''):
    """Race columns of a file must match the declared race set"""
    if list(expected) != list(found):
        where = f' ({source})' if source else ''
        raise ValidationError(f'{ERROR_MESSAGES["RACE_MISMATCH"]}{where}: {list(found)} vs {list(expected)}')
    return True


def validate_alignment(probs, records):
    """Probability rows must line up with records by id"""
    if probs.n != records.n or not np.array_equal(
            np.asarray(probs.ids, dtype=str), np.asarray(records.ids, dtype=str)):
        raise ValidationError(ERROR_MESSAGES['MISALIGNED'])
    return True


def validate_records(records, need_outcome=False, need_true_race=False, need_extra=False):
    """
    Check record invariants

    Args:
        records: RecordTable
        need_outcome: Require the outcome column
        need_true_race: Require the true race column
        need_extra: Require the extra covariate column

    Returns:
        True or raises ValidationError
    """
    if records.n and records.geo_levels:
        coarsest = records.geo[records.geo_levels[-1]]
        if any(value is None for value in coarsest):
            raise ValidationError(ERROR_MESSAGES['MISSING_COARSE_GEO'])

    if need_outcome or records.outcome is not None:
        if records.outcome is None:
            raise ValidationError(ERROR_MESSAGES['MISSING_OUTCOME'])
        unknown = set(records.outcome) - set(records.outcome_levels)
        if unknown:
            raise ValidationError(f'{ERROR_MESSAGES["UNKNOWN_OUTCOME"]}: {sorted(unknown)}')

    if need_extra:
        if records.extra is None:
            raise ValidationError(ERROR_MESSAGES['MISSING_EXTRA'])
        unknown = set(records.extra) - set(records.extra_levels)
        if unknown:
            raise ValidationError(f'{ERROR_MESSAGES["UNKNOWN_OUTCOME"]}: {sorted(unknown)}')

    if need_true_race and (records.true_race is None or any(v is None for v in records.true_race)):
        raise ValidationError(ERROR_MESSAGES['MISSING_TRUE_RACE'])

    return True

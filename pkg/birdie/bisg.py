"""
BISG race prediction
Combines surname and geography census tables with Bayes' rule
"""

import logging

import numpy as np
import pandas as pd

from birdie.config.constants import DEFAULTS, ERROR_MESSAGES, GEO_LEVELS, RECORD_COLUMNS
from birdie.config.settings import ANALYSIS_CONFIG
from birdie.middleware.error_handler import ValidationError
from birdie.middleware.validators import validate_prob_matrix, validate_records
from birdie.models.census import CensusTables
from birdie.models.probs import ProbMatrix
from birdie.models.records import RecordTable, make_records
from birdie.utils.csv_store import read_table, write_table
from birdie.utils.helpers import chunk_bounds
from birdie.utils.parallel import parallel_map

logger = logging.getLogger(__name__)


def _fallback_levels(tables, records, level):
    if level not in tables.geo_fallbacks:
        raise ValidationError(f'{ERROR_MESSAGES["UNKNOWN_LEVEL"]}: {level}')
    start = tables.geo_fallbacks.index(level)
    return [lvl for lvl in tables.geo_fallbacks[start:] if lvl in records.geo]


def _geo_factor(tables, records, levels, start, stop):
    """q_{gx|.} per record using the first level with a matched cell"""
    n = stop - start
    cov = records.cov[start:stop]
    rows = np.empty((n, len(tables.races)))
    used = np.full(n, None, dtype=object)
    for level in levels:
        pending = used == None  # noqa: E711
        if not pending.any():
            break
        geo = records.geo[level][start:stop]
        candidate = pending & pd.notna(geo)
        if not candidate.any():
            continue
        found, matched = tables.geo_rows(level, geo[candidate], cov[candidate])
        target = np.flatnonzero(candidate)[matched]
        rows[target] = found[matched]
        used[target] = level

    missing = used == None  # noqa: E711
    if missing.any():
        coarsest = levels[-1] if levels else tables.geo_fallbacks[-1]
        rows[missing] = tables.residual('geo', coarsest)
    return rows, used


def _predict_block(tables, records, levels, bounds):
    start, stop = bounds
    surname = records.surname[start:stop]
    q_s = tables.surname_rows(surname)
    surname_matched = tables.surname_given_race.index.get_indexer(pd.Index(surname, dtype=object)) >= 0
    q_gx, used = _geo_factor(tables, records, levels, start, stop)
    numerator = q_gx * q_s * tables.prior[None, :]
    total = numerator.sum(axis=1)
    return numerator, total, used, surname_matched


def bisg_predict(tables: CensusTables, records: RecordTable, level=None, unmatched=DEFAULTS['UNMATCHED'],
                 threads=None, block_size=None):
    """
    BISG probabilities Pr(R | G, X, S) for every record

    Args:
        tables: CensusTables
        records: RecordTable
        level: Requested geo level (finest available by default)
        unmatched: 'prior' keeps zero-numerator rows as q_R, 'drop' removes them;
            records with neither a geo cell nor a listed surname are always q_R
        threads: Worker cap
        block_size: Records per work block

    Returns:
        ProbMatrix; with unmatched='drop' its ids identify the kept records
    """
    validate_records(records)
    if unmatched not in ('prior', 'drop'):
        raise ValidationError("unmatched must be 'prior' or 'drop'")
    level = level or next((lvl for lvl in tables.geo_fallbacks if lvl in records.geo), tables.geo_fallbacks[0])
    levels = _fallback_levels(tables, records, level)

    blocks = chunk_bounds(records.n, block_size or ANALYSIS_CONFIG['block_size'])
    results = parallel_map(lambda bounds: _predict_block(tables, records, levels, bounds), blocks, threads)

    n_races = len(tables.races)
    if results:
        numerator = np.concatenate([r[0] for r in results])
        total = np.concatenate([r[1] for r in results])
        used = np.concatenate([r[2] for r in results])
        surname_matched = np.concatenate([r[3] for r in results])
    else:
        numerator, total = np.empty((0, n_races)), np.empty(0)
        used, surname_matched = np.empty(0, dtype=object), np.empty(0, dtype=bool)

    # no geo cell at any level and an unlisted surname carry no information beyond q_R
    prior_only = (used == None) & ~surname_matched  # noqa: E711
    degenerate = (total <= 0) & ~prior_only
    probs = np.empty_like(numerator)
    ok = ~degenerate
    probs[ok] = numerator[ok] / np.where(total > 0, total, 1.0)[ok, None]
    probs[degenerate | prior_only] = tables.prior

    level_counts = {lvl: int(np.sum(used == lvl)) for lvl in levels}
    n_fallback = int(np.sum(used != level))
    diagnostics = {
        'level': level,
        'level_counts': level_counts,
        'fallback': n_fallback,
        'unmatched_geo': int(np.sum(used == None)),  # noqa: E711
        'unmatched_surname': int(np.sum(~surname_matched)),
        'prior_rows': int(prior_only.sum()) + (int(degenerate.sum()) if unmatched == 'prior' else 0),
        'dropped': int(degenerate.sum()) if unmatched == 'drop' else 0,
    }
    if n_fallback:
        logger.warning(f'{n_fallback} records lack a matched {level} cell; used coarser levels {level_counts}')
    if prior_only.any():
        logger.warning(f'{int(prior_only.sum())} records match neither a surname nor any geo level; set to the prior')
    if degenerate.any():
        action = 'set to the prior' if unmatched == 'prior' else 'dropped'
        logger.warning(f'{int(degenerate.sum())} records have zero BISG mass for every race; {action}')

    ids = records.ids
    if unmatched == 'drop' and degenerate.any():
        probs, ids = probs[ok], ids[ok]

    logger.info(f'✅ BISG probabilities computed for {len(ids)} records at level {level}')
    return ProbMatrix(probs=probs, races=tables.races, ids=ids, conditioning=('G', 'X', 'S'),
                      diagnostics=diagnostics)


def map_classify(probs: ProbMatrix):
    """Most probable race per row; ties go to the first race in declared order"""
    if probs.n == 0:
        return np.empty(0, dtype=object)
    return np.asarray(probs.races, dtype=object)[np.argmax(probs.probs, axis=1)]


# ============================================
# FILE I/O
# ============================================
def _levels_from_columns(columns):
    present = [column[len('geo_'):] for column in columns if column.startswith('geo_')]
    order = [level for level in ANALYSIS_CONFIG['geo_fallbacks'] if level in present]
    order += [level for level in GEO_LEVELS if level in present and level not in order]
    return order + sorted(level for level in present if level not in order)


def load_records(path, outcome_levels=None, extra_levels=None):
    """
    Read records.csv

    Args:
        path: CSV with id, surname, geo_<level> columns and optional cov,
            outcome, extra, true_race
        outcome_levels: Declared outcome set (sorted observed values by default)
        extra_levels: Declared W set

    Returns:
        RecordTable
    """
    frame = read_table(path, required=['id', 'surname'], text_columns=RECORD_COLUMNS)
    levels = _levels_from_columns(frame.columns)
    if not levels:
        raise ValidationError(f'{ERROR_MESSAGES["MISSING_COLUMNS"]}: geo_<level>')

    def optional(column):
        if column not in frame.columns or frame[column].isna().all():
            return None
        return frame[column].to_numpy(dtype=object)

    outcome = optional('outcome')
    if outcome is not None and any(v is None for v in outcome):
        raise ValidationError(f'{ERROR_MESSAGES["MISSING_OUTCOME"]}: empty outcome cells')
    records = make_records(
        surname=frame['surname'].to_numpy(dtype=object),
        geo={level: frame[f'geo_{level}'].to_numpy(dtype=object) for level in levels},
        cov=optional('cov'),
        outcome=outcome,
        outcome_levels=outcome_levels,
        extra=optional('extra'),
        extra_levels=extra_levels,
        true_race=optional('true_race'),
        ids=frame['id'].to_numpy(dtype=object),
        geo_levels=levels,
    )
    validate_records(records)
    logger.info(f'✅ Loaded {records.n} records from {path}')
    return records


def write_records(records: RecordTable, path):
    frame = pd.DataFrame({'id': records.ids, 'surname': records.surname})
    for level in records.geo_levels:
        frame[f'geo_{level}'] = records.geo[level]
    frame['cov'] = records.cov
    for column in ('outcome', 'extra', 'true_race'):
        values = getattr(records, column)
        if values is not None:
            frame[column] = values
    return write_table(frame, path)


def align_records(records: RecordTable, probs: ProbMatrix):
    """
    Records reordered and subset to the probability rows, matched by id

    Needed after bisg_predict(unmatched='drop') removed rows.
    """
    record_ids = np.asarray(records.ids, dtype=str)
    prob_ids = np.asarray(probs.ids, dtype=str)
    if len(record_ids) == len(prob_ids) and np.array_equal(record_ids, prob_ids):
        return records
    lookup = pd.Index(record_ids)
    if not lookup.is_unique:
        raise ValidationError(f'{ERROR_MESSAGES["MISALIGNED"]}: duplicate record ids')
    index = lookup.get_indexer(prob_ids)
    if np.any(index < 0):
        raise ValidationError(f'{ERROR_MESSAGES["MISALIGNED"]}: {int(np.sum(index < 0))} ids not in records')
    logger.info(f'Aligned {len(index)} of {records.n} records to the probability rows')
    return records.take(index)


def write_prob_matrix(probs: ProbMatrix, path):
    return write_table(probs.to_frame(), path)


def read_prob_matrix(path, races=None):
    """
    Read an id,<race1>,...,<raceK> CSV

    Args:
        path: File path
        races: Expected race order (file order by default)

    Returns:
        Validated ProbMatrix
    """
    frame = read_table(path, required=['id'] + list(races or []), text_columns=['id'])
    races = list(races or [column for column in frame.columns if column != 'id'])
    probs = ProbMatrix(
        probs=frame[races].to_numpy(dtype=float),
        races=tuple(races),
        ids=frame['id'].to_numpy(dtype=object),
    )
    validate_prob_matrix(probs)
    return probs

"""
Census table loading, validation and serialization
"""

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from birdie.config.constants import ERROR_MESSAGES, FILE_NAMES, OTHER_GEO, OTHER_SURNAME
from birdie.config.settings import ANALYSIS_CONFIG
from birdie.middleware.error_handler import ValidationError
from birdie.middleware.validators import validate_probability_vector, validate_race_labels
from birdie.models.census import CensusTables
from birdie.utils.csv_store import read_table, write_table

logger = logging.getLogger(__name__)

PRIOR_TOL = 1e-9
SURNAME_TOL = 1e-9
GEO_TOL = 1e-6


# ============================================
# VALIDATION
# ============================================
def _check_columns(frame, tol, name):
    values = frame.to_numpy(dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise ValidationError(f'{name}: {ERROR_MESSAGES["NEGATIVE_PROBABILITY"]}')
    sums = values.sum(axis=0)
    over = [race for race, total in zip(frame.columns, sums) if total > 1.0 + tol]
    if over:
        raise ValidationError(f'{name}: {ERROR_MESSAGES["COLUMN_MASS"]} for {", ".join(over)}')


def _with_residual(listed, other_key, name):
    """Append the residual row 1 - sum(listed rows), absorbing any supplied residual row"""
    if isinstance(listed.index, pd.MultiIndex):
        listed = listed[[key != other_key for key in listed.index]]
    else:
        listed = listed[listed.index != other_key]
    residual = np.clip(1.0 - listed.to_numpy(dtype=float).sum(axis=0), 0.0, None)
    if isinstance(listed.index, pd.MultiIndex):
        index = pd.MultiIndex.from_tuples([other_key], names=listed.index.names)
    else:
        index = pd.Index([other_key], name=listed.index.name)
    other = pd.DataFrame([residual], index=index, columns=listed.columns)
    logger.debug(f'{name}: residual mass {residual.round(6).tolist()}')
    return pd.concat([listed.astype(float), other])


def build_census_tables(races, prior, surname_given_race, geo_cov_given_race, geo_fallbacks=None):
    """
    Validate raw tables and attach residual rows

    Args:
        races: Ordered race labels
        prior: q_R aligned with races
        surname_given_race: Listed surnames x races
        geo_cov_given_race: Mapping level -> listed (geo, cov) x races
        geo_fallbacks: Level order, finest first (defaults to the configured order)

    Returns:
        CensusTables
    """
    races = tuple(races)
    prior = np.asarray(prior, dtype=float)
    if len(prior) != len(races):
        raise ValidationError(ERROR_MESSAGES['PRIOR_LENGTH'])
    validate_probability_vector(prior, name='prior', tol=PRIOR_TOL)

    warnings = []
    surnames = surname_given_race.copy()
    surnames.index = pd.Index([str(s).strip().upper() for s in surnames.index], name='surname')
    validate_race_labels(sorted(races), sorted(surnames.columns), FILE_NAMES['SURNAME'])
    surnames = surnames[list(races)]
    _check_columns(surnames, SURNAME_TOL, FILE_NAMES['SURNAME'])
    zero_mass = [s for s, row in zip(surnames.index, surnames.to_numpy()) if s != OTHER_SURNAME and not row.any()]
    if zero_mass:
        message = f'{len(zero_mass)} surnames have zero mass for every race: {", ".join(zero_mass[:5])}'
        logger.warning(message)
        warnings.append(message)
    surnames = _with_residual(surnames, OTHER_SURNAME, FILE_NAMES['SURNAME'])

    order = list(geo_fallbacks or ANALYSIS_CONFIG['geo_fallbacks'])
    levels = [level for level in order if level in geo_cov_given_race]
    levels += sorted(level for level in geo_cov_given_race if level not in levels)
    geo_tables = {}
    for level in levels:
        table = geo_cov_given_race[level].copy()
        name = FILE_NAMES['GEO'].format(level=level)
        validate_race_labels(sorted(races), sorted(table.columns), name)
        table = table[list(races)]
        _check_columns(table, GEO_TOL, name)
        geo_tables[level] = _with_residual(table, OTHER_GEO, name)

    return CensusTables(
        races=races,
        prior=prior,
        surname_given_race=surnames,
        geo_cov_given_race=geo_tables,
        geo_fallbacks=tuple(levels),
        warnings=tuple(warnings),
    )


# ============================================
# LOADING
# ============================================
def _read_prior(path, race_labels):
    frame = read_table(path, required=['race', 'prob'], text_columns=['race'])
    found = [str(r) for r in frame['race']]
    races = list(race_labels) if race_labels else found
    validate_race_labels(sorted(races), sorted(found), FILE_NAMES['PRIOR'])
    lookup = dict(zip(found, frame['prob'].astype(float)))
    return races, np.array([lookup[race] for race in races], dtype=float)


def _read_surnames(path):
    frame = read_table(path, required=['surname'], text_columns=['surname'])
    frame = frame[frame['surname'].notna()]
    return frame.set_index('surname').astype(float)


def _read_geo(path):
    frame = read_table(path, required=['geo', 'cov'], text_columns=['geo', 'cov'])
    frame['cov'] = frame['cov'].fillna('')
    frame = frame[frame['geo'].notna()]
    return frame.set_index(['geo', 'cov']).astype(float)


def load_census_tables(paths, race_labels=None, geo_fallbacks=None):
    """
    Load and validate census tables from explicit paths

    Args:
        paths: Dict with 'prior', 'surname' and 'geo' (level -> path)
        race_labels: Declared race order (defaults to the prior file order)
        geo_fallbacks: Level order, finest first

    Returns:
        CensusTables
    """
    races, prior = _read_prior(paths['prior'], race_labels)
    surnames = _read_surnames(paths['surname'])
    geo = {level: _read_geo(path) for level, path in paths['geo'].items()}
    tables = build_census_tables(races, prior, surnames, geo, geo_fallbacks)
    logger.info(f'✅ Census tables loaded: {len(races)} races, '
                f'{len(tables.surname_given_race) - 1} surnames, levels {list(tables.geo_fallbacks)}')
    return tables


def load_census_dir(census_dir, race_labels=None, levels=None, geo_fallbacks=None):
    """
    Discover prior.csv, surname_race.csv and geo_race_<level>.csv in a directory

    Args:
        census_dir: Directory holding the census CSVs
        race_labels: Declared race order
        levels: Restrict to these levels (all found by default)
        geo_fallbacks: Level order, finest first

    Returns:
        CensusTables
    """
    census_dir = Path(census_dir)
    prefix, suffix = FILE_NAMES['GEO'].split('{level}')
    found = {}
    for path in sorted(census_dir.glob(f'{prefix}*{suffix}')):
        level = path.name[len(prefix):-len(suffix)]
        if levels is None or level in levels:
            found[level] = path
    if not found:
        raise FileNotFoundError(2, 'No geo tables', str(census_dir / FILE_NAMES['GEO'].format(level='*')))
    return load_census_tables({
        'prior': census_dir / FILE_NAMES['PRIOR'],
        'surname': census_dir / FILE_NAMES['SURNAME'],
        'geo': found,
    }, race_labels=race_labels, geo_fallbacks=geo_fallbacks)


def set_population_prior(tables: CensusTables, prior):
    """
    Replace q_R with the study population's racial distribution

    Args:
        tables: CensusTables
        prior: Nonnegative weights, normalized here

    Returns:
        CensusTables with the new prior; conditional tables unchanged
    """
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (len(tables.races),):
        raise ValidationError(ERROR_MESSAGES['PRIOR_LENGTH'])
    validate_probability_vector(prior, name='prior', normalized=False)
    total = prior.sum()
    if total <= 0:
        raise ValidationError(ERROR_MESSAGES['PRIOR_ZERO'])
    return replace(tables, prior=prior / total)


# ============================================
# SERIALIZATION
# ============================================
def write_census_tables(tables: CensusTables, out_dir):
    """
    Write listed rows of every table; residual rows are recomputed on load

    Returns:
        List of written paths
    """
    out_dir = Path(out_dir)
    races = list(tables.races)
    paths = [write_table(pd.DataFrame({'race': races, 'prob': tables.prior}), out_dir / FILE_NAMES['PRIOR'])]

    surnames = tables.surname_given_race.drop(index=OTHER_SURNAME)
    surnames = surnames.reset_index().rename(columns={surnames.index.name or 'index': 'surname'})
    paths.append(write_table(surnames[['surname'] + races], out_dir / FILE_NAMES['SURNAME']))

    for level, table in tables.geo_cov_given_race.items():
        listed = table[[key != OTHER_GEO for key in table.index]]
        frame = pd.DataFrame({
            'geo': listed.index.get_level_values(0),
            'cov': listed.index.get_level_values(1),
        })
        for race in races:
            frame[race] = listed[race].to_numpy()
        paths.append(write_table(frame, out_dir / FILE_NAMES['GEO'].format(level=level)))
    return paths

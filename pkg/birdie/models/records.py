"""
Per-individual observations
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class CellIndex:
    """
    Mapping of records onto (geo, cov) cells

    Attributes:
        codes: Per-record cell code
        keys: Sorted cell keys, each (level, geo, cov)
    """
    codes: np.ndarray
    keys: Tuple[Tuple[str, str, str], ...]

    @property
    def n_cells(self):
        return len(self.keys)

    def geo_codes(self):
        """Per-cell geo code (cells sharing (level, geo) share a code) and the geo keys"""
        geo_keys = sorted({(level, geo) for level, geo, _ in self.keys})
        lookup = {key: i for i, key in enumerate(geo_keys)}
        return np.array([lookup[(level, geo)] for level, geo, _ in self.keys], dtype=np.int64), geo_keys

    def cov_codes(self):
        """Per-cell covariate code and the covariate labels"""
        covs = sorted({cov for _, _, cov in self.keys})
        lookup = {cov: i for i, cov in enumerate(covs)}
        return np.array([lookup[cov] for _, _, cov in self.keys], dtype=np.int64), covs


@dataclass(frozen=True)
class RecordTable:
    """
    Observed records; race is unobserved except for validation data

    Attributes:
        ids: Record identifiers
        surname: Surname keys
        geo: Geo keys by level (None where missing)
        geo_levels: Levels present, finest first
        cov: Covariate cell key ('' when no X)
        outcome: Outcome labels (optional)
        outcome_levels: Declared outcome set
        extra: Additional covariate W (optional)
        extra_levels: Declared W set
        true_race: Self-reported race (optional)
    """
    ids: np.ndarray
    surname: np.ndarray
    geo: Dict[str, np.ndarray]
    geo_levels: Tuple[str, ...]
    cov: np.ndarray
    outcome: Optional[np.ndarray] = None
    outcome_levels: Tuple[str, ...] = ()
    extra: Optional[np.ndarray] = None
    extra_levels: Tuple[str, ...] = ()
    true_race: Optional[np.ndarray] = None

    @property
    def n(self):
        return len(self.ids)

    def outcome_codes(self):
        lookup = {level: i for i, level in enumerate(self.outcome_levels)}
        return np.array([lookup[value] for value in self.outcome], dtype=np.int64)

    def extra_codes(self):
        lookup = {level: i for i, level in enumerate(self.extra_levels)}
        return np.array([lookup[value] for value in self.extra], dtype=np.int64)

    def race_codes(self, races: Sequence[str]):
        """Codes of true race in the given race order (-1 for unknown labels)"""
        lookup = {race: i for i, race in enumerate(races)}
        return np.array([lookup.get(value, -1) for value in self.true_race], dtype=np.int64)

    def with_outcome(self, outcome, outcome_levels):
        return replace(self, outcome=np.asarray(outcome, dtype=object), outcome_levels=tuple(outcome_levels))

    def with_cov(self, cov):
        return replace(self, cov=np.asarray(cov, dtype=object))

    def take(self, index):
        """Subset records by integer index or boolean mask"""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)

        def pick(values):
            return None if values is None else values[index]

        return replace(
            self,
            ids=self.ids[index],
            surname=self.surname[index],
            geo={level: values[index] for level, values in self.geo.items()},
            cov=self.cov[index],
            outcome=pick(self.outcome),
            extra=pick(self.extra),
            true_race=pick(self.true_race),
        )

    def geo_at(self, level: str, fallbacks: Optional[Sequence[str]] = None):
        """
        Geo key per record at a level, falling back to coarser levels

        Args:
            level: Requested level
            fallbacks: Ordered levels, finest first (defaults to the record levels)

        Returns:
            Tuple of (level used per record, geo key per record)
        """
        order = list(fallbacks or self.geo_levels)
        start = order.index(level) if level in order else 0
        used = np.full(self.n, None, dtype=object)
        keys = np.full(self.n, None, dtype=object)
        for candidate in order[start:]:
            values = self.geo.get(candidate)
            if values is None:
                continue
            fill = (used == None) & pd.notna(values)  # noqa: E711
            used[fill] = candidate
            keys[fill] = values[fill]
        return used, keys

    def cell_index(self, level: Optional[str] = None, fallbacks: Optional[Sequence[str]] = None):
        """
        Index records by (geo, cov) cell at the requested geo level

        Records missing the level use the next coarser one; keys are sorted so
        codes do not depend on record order.
        """
        level = level or self.geo_levels[0]
        used, keys = self.geo_at(level, fallbacks)
        frame = pd.DataFrame({'level': used, 'geo': keys, 'cov': self.cov}).fillna('').astype(str)
        codes = frame.groupby(['level', 'geo', 'cov'], sort=True).ngroup().to_numpy(dtype=np.int64)
        uniques = frame.drop_duplicates().sort_values(['level', 'geo', 'cov'])
        return CellIndex(codes=codes, keys=tuple(uniques.itertuples(index=False, name=None)))


def _clean(values):
    series = pd.Series(values, dtype=object)
    return series.where(series.notna() & (series.astype(str) != ''), None).to_numpy(dtype=object)


def make_records(
    surname,
    geo: Dict[str, Sequence],
    cov=None,
    outcome=None,
    outcome_levels: Optional[List[str]] = None,
    extra=None,
    extra_levels: Optional[List[str]] = None,
    true_race=None,
    ids=None,
    geo_levels: Optional[List[str]] = None,
):
    """
    Build a RecordTable from plain sequences

    Args:
        surname: Surname keys
        geo: Mapping of level to geo keys
        cov: Covariate keys (defaults to '' for every record)
        outcome: Outcome labels
        outcome_levels: Declared outcome set (sorted unique values by default)
        extra: W labels
        extra_levels: Declared W set
        true_race: True race labels
        ids: Identifiers (defaults to 0..n-1)
        geo_levels: Level order, finest first (defaults to mapping order)

    Returns:
        RecordTable
    """
    surname = np.array([str(s).strip().upper() if s is not None else None for s in surname], dtype=object)
    n = len(surname)
    ids = np.array([str(i) for i in range(n)], dtype=object) if ids is None else np.asarray(ids, dtype=object)
    cov = np.full(n, '', dtype=object) if cov is None else np.array(
        ['' if c is None or pd.isna(c) else str(c) for c in cov], dtype=object)
    geo_levels = tuple(geo_levels or geo.keys())
    geo_arrays = {level: _clean(geo[level]) for level in geo_levels}

    if outcome is not None:
        outcome = np.array([str(v) for v in outcome], dtype=object)
        outcome_levels = tuple(outcome_levels or sorted(set(outcome)))
    if extra is not None:
        extra = np.array([str(v) for v in extra], dtype=object)
        extra_levels = tuple(extra_levels or sorted(set(extra)))
    if true_race is not None:
        true_race = np.array([None if v is None else str(v) for v in true_race], dtype=object)

    return RecordTable(
        ids=ids,
        surname=surname,
        geo=geo_arrays,
        geo_levels=geo_levels,
        cov=cov,
        outcome=outcome,
        outcome_levels=tuple(outcome_levels or ()),
        extra=extra,
        extra_levels=tuple(extra_levels or ()),
        true_race=true_race,
    )

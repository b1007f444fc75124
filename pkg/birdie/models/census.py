"""
Census-derived probability tables
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from birdie.config.constants import OTHER_GEO, OTHER_SURNAME


@dataclass(frozen=True)
class CensusTables:
    """
    The three tables parameterizing BISG

    Attributes:
        races: Ordered race labels
        prior: q_R over races
        surname_given_race: q_{S|R}; rows are surnames, columns races; the
            last row is the OTHER residual
        geo_cov_given_race: q_{GX|R} per geo level; rows are (geo, cov) with
            the OTHER residual row last
        geo_fallbacks: Levels in fallback order, finest first
        warnings: Validation warnings raised at load time
    """
    races: Tuple[str, ...]
    prior: np.ndarray
    surname_given_race: pd.DataFrame
    geo_cov_given_race: Dict[str, pd.DataFrame]
    geo_fallbacks: Tuple[str, ...]
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    def surname_rows(self, keys):
        """q_{s|.} rows for surname keys; unlisted names take the OTHER residual row"""
        table = self.surname_given_race
        index = table.index.get_indexer(pd.Index(keys, dtype=object))
        index[index < 0] = table.index.get_loc(OTHER_SURNAME)
        return table.to_numpy()[index]

    def geo_rows(self, level, geo, cov):
        """
        q_{gx|.} rows at one level

        Returns:
            Tuple of (rows, matched mask); unmatched rows hold the residual entry
        """
        table = self.geo_cov_given_race[level]
        wanted = pd.MultiIndex.from_arrays([
            pd.Index(geo, dtype=object).fillna(''),
            pd.Index(cov, dtype=object).fillna(''),
        ])
        index = table.index.get_indexer(wanted)
        matched = index >= 0
        index[~matched] = table.index.get_loc(OTHER_GEO)
        return table.to_numpy()[index], matched

    def residual(self, table='surname', level=None):
        """Residual mass per race for the surname table or a geo level"""
        if table == 'surname':
            return self.surname_given_race.loc[OTHER_SURNAME].to_numpy()
        return self.geo_cov_given_race[level].loc[OTHER_GEO].to_numpy()

    def q_weights(self, level, cells):
        """
        q_{gx|r} for (geo, cov) cells at a level

        Returns:
            Tuple of (cells x races array, found mask)
        """
        rows, found = self.geo_rows(level, [g for g, _ in cells], [c for _, c in cells])
        rows = np.where(found[:, None], rows, np.nan)
        return rows, found

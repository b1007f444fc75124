"""
Estimated outcome-by-race tables and evaluation reports
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from birdie.config.constants import FLAGS


@dataclass(frozen=True)
class DisparityEstimate:
    """
    Estimated Pr(Y | R), optionally per (geo, cov) cell

    Attributes:
        method: Estimator that produced the table
        outcomes: Outcome labels (rows)
        races: Race labels (columns)
        mu_y_given_r: |Y| x |R| table; undefined columns are NaN
        flags: Race -> flag for undefined columns
        weights_r: Marginal Pr(R = r) used for aggregation
        cell_keys: Cell keys for the per-cell tables
        mu_y_given_rgx: cells x |Y| x |R| tables (optional)
        cell_flags: Cell key -> flag for unidentified or empty cells
    """
    method: str
    outcomes: Tuple[str, ...]
    races: Tuple[str, ...]
    mu_y_given_r: np.ndarray
    flags: Dict[str, str] = field(default_factory=dict)
    weights_r: Optional[np.ndarray] = None
    cell_keys: Optional[Tuple[Any, ...]] = None
    mu_y_given_rgx: Optional[np.ndarray] = None
    cell_flags: Dict[Any, str] = field(default_factory=dict)

    def frame(self):
        """Wide |Y| x |R| DataFrame"""
        return pd.DataFrame(self.mu_y_given_r, index=list(self.outcomes), columns=list(self.races))

    def to_frame(self):
        """Long format: method, y, r, estimate, flag"""
        rows = []
        for j, race in enumerate(self.races):
            flag = self.flags.get(race, FLAGS['OK'])
            for i, outcome in enumerate(self.outcomes):
                rows.append((self.method, outcome, race, self.mu_y_given_r[i, j], flag))
        return pd.DataFrame(rows, columns=['method', 'y', 'r', 'estimate', 'flag'])


@dataclass(frozen=True)
class ConditionalEstimate:
    """
    Estimated Pr(Y | W, R)

    Attributes:
        approach: 'joint' or 'two_step'
        outcomes: Y labels
        extras: W labels
        races: Race labels
        mu_y_given_wr: |Y| x |W| x |R| table, NaN where undefined
        flags: (w, r) -> flag
        intermediate: Step-one artifacts (W fit and W-updated probabilities)
    """
    approach: str
    outcomes: Tuple[str, ...]
    extras: Tuple[str, ...]
    races: Tuple[str, ...]
    mu_y_given_wr: np.ndarray
    flags: Dict[Tuple[str, str], str] = field(default_factory=dict)
    intermediate: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self):
        """Long format: approach, y, w, r, estimate, flag"""
        rows = []
        for k, race in enumerate(self.races):
            for j, extra in enumerate(self.extras):
                flag = self.flags.get((extra, race), FLAGS['OK'])
                for i, outcome in enumerate(self.outcomes):
                    rows.append((self.approach, outcome, extra, race, self.mu_y_given_wr[i, j, k], flag))
        return pd.DataFrame(rows, columns=['approach', 'y', 'w', 'r', 'estimate', 'flag'])


@dataclass(frozen=True)
class EvalReport:
    """
    One metric over a scope

    Attributes:
        metric: Metric name
        scope: 'overall', 'per-race' or 'per-area'
        values: DataFrame with columns key, value, flag
    """
    metric: str
    scope: str
    values: pd.DataFrame

    def to_frame(self):
        frame = self.values.copy()
        frame.insert(0, 'scope', self.scope)
        frame.insert(0, 'metric', self.metric)
        return frame[['metric', 'scope', 'key', 'value', 'flag']]

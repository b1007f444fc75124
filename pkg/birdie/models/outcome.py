"""
Outcome model specification and fitted result
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from birdie.config.constants import DEFAULTS, MODEL_KINDS
from birdie.models.probs import ProbMatrix
from birdie.models.records import CellIndex


class OutcomeModelSpec(BaseModel):
    """Prior and structure of a BIRDiE outcome model"""

    model_config = ConfigDict(frozen=True)

    kind: str = 'saturated'
    alpha: Union[float, List[float]] = DEFAULTS['ALPHA']
    fixed_effect_sd: float = Field(default=DEFAULTS['FIXED_EFFECT_SD'], gt=0)
    intercept_scale_shape: float = Field(default=DEFAULTS['INTERCEPT_SCALE_SHAPE'], gt=0)
    intercept_scale_rate: float = Field(default=DEFAULTS['INTERCEPT_SCALE_RATE'], gt=0)
    intercept_scale: Optional[float] = Field(default=None, ge=0)
    group_covariates: Dict[str, List[float]] = Field(default_factory=dict)
    effect_level: Optional[str] = None

    @field_validator('kind')
    @classmethod
    def _known_kind(cls, value):
        aliases = {'pooling': 'complete_pooling', 'mixed': 'mixed_effects'}
        value = aliases.get(value, value)
        if value not in MODEL_KINDS:
            raise ValueError(f'kind must be one of {MODEL_KINDS}')
        return value

    @field_validator('alpha')
    @classmethod
    def _positive_alpha(cls, value):
        values = value if isinstance(value, list) else [value]
        if not values or min(values) <= 0:
            raise ValueError('alpha entries must be positive')
        return value

    def alpha_vector(self, n_outcomes):
        """Dirichlet concentration over the outcome levels"""
        if isinstance(self.alpha, list):
            if len(self.alpha) != n_outcomes:
                raise ValueError(f'alpha has {len(self.alpha)} entries for {n_outcomes} outcomes')
            return np.asarray(self.alpha, dtype=float)
        return np.full(n_outcomes, float(self.alpha))


@dataclass(frozen=True)
class OutcomeFit:
    """
    A fitted BIRDiE outcome model

    Attributes:
        spec: Model specification
        theta: Model parameters (pooling: races x outcomes; saturated:
            races x cells x outcomes; mixed: races x packed coefficients)
        cell_table: Implied Pr(Y | R, cell) as races x cells x outcomes
        cells: Records-to-cells index the model was fit on
        races: Race labels
        outcomes: Outcome labels
        updated_probs: Pr(R | G, X, S, Y) at the final theta
        suffstats: races x cells x outcomes posterior weight totals
        trace: Marginal log-posterior per iteration
        iterations: Completed iterations
        map_evaluations: EM map evaluations (one E-step plus M-step each)
        converged: Whether the tolerance was met before max_iter
        runtime: Wall time in seconds
        accel: Acceleration method used
        flags: Degenerate cells and other notes
        diagnostics: Zero-normalizer tallies and similar counts
        model: Outcome model object used for the fit
    """
    spec: OutcomeModelSpec
    theta: np.ndarray
    cell_table: np.ndarray
    cells: CellIndex
    races: Tuple[str, ...]
    outcomes: Tuple[str, ...]
    updated_probs: ProbMatrix
    suffstats: np.ndarray
    trace: np.ndarray
    iterations: int
    map_evaluations: int
    converged: bool
    runtime: float
    accel: str
    flags: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    model: Any = None

    @property
    def kind(self):
        return self.spec.kind

    def theta_frame(self):
        """Long table r, level, geo, cov, y, prob of the implied cell probabilities"""
        table = self.cell_table
        keys = self.cells.keys
        if self.kind == 'complete_pooling':
            table = table[:, :1, :]
            keys = (('', '', ''),)
        n_races, n_cells, n_outcomes = table.shape
        race_idx, cell_idx, y_idx = np.meshgrid(
            np.arange(n_races), np.arange(n_cells), np.arange(n_outcomes), indexing='ij')
        race_idx, cell_idx, y_idx = race_idx.ravel(), cell_idx.ravel(), y_idx.ravel()
        return pd.DataFrame({
            'r': np.asarray(self.races, dtype=object)[race_idx],
            'level': [keys[c][0] for c in cell_idx],
            'geo': [keys[c][1] for c in cell_idx],
            'cov': [keys[c][2] for c in cell_idx],
            'y': np.asarray(self.outcomes, dtype=object)[y_idx],
            'prob': table.ravel(),
        })

    def trace_frame(self):
        return pd.DataFrame({'iter': np.arange(len(self.trace)), 'log_post': self.trace})

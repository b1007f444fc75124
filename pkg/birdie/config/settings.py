"""
Analysis configuration
Environment defaults plus the KEY=VALUE run config file
"""

import os
import logging
from typing import List, Optional

from dotenv import load_dotenv, dotenv_values
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, field_validator

from birdie.config.constants import ACCEL_METHODS, DEFAULTS, GEO_LEVELS, MODEL_KINDS
from birdie.middleware.error_handler import ValidationError

logger = logging.getLogger(__name__)

load_dotenv()


def _env_levels():
    raw = os.getenv('BIRDIE_GEO_FALLBACKS')
    if not raw:
        return list(GEO_LEVELS)
    return [level.strip() for level in raw.split(',') if level.strip()]


ANALYSIS_CONFIG = {
    'threads': int(os.getenv('BIRDIE_THREADS', os.cpu_count() or 1)),
    'tol': float(os.getenv('BIRDIE_TOL', DEFAULTS['TOL'])),
    'max_iter': int(os.getenv('BIRDIE_MAX_ITER', DEFAULTS['MAX_ITER'])),
    'seed': int(os.getenv('BIRDIE_SEED', DEFAULTS['SEED'])),
    'log_level': os.getenv('BIRDIE_LOG_LEVEL', 'INFO'),
    'geo_fallbacks': _env_levels(),
    'block_size': int(os.getenv('BIRDIE_BLOCK_SIZE', DEFAULTS['BLOCK_SIZE']))
}


class RunConfig(BaseModel):
    """Validated contents of a ``--config`` file."""

    model: str = 'saturated'
    alpha: float = DEFAULTS['ALPHA']
    fixed_effect_sd: float = DEFAULTS['FIXED_EFFECT_SD']
    intercept_scale_shape: float = DEFAULTS['INTERCEPT_SCALE_SHAPE']
    intercept_scale_rate: float = DEFAULTS['INTERCEPT_SCALE_RATE']
    intercept_scale: Optional[float] = None
    tol: float = Field(default_factory=lambda: ANALYSIS_CONFIG['tol'], gt=0)
    max_iter: int = Field(default_factory=lambda: ANALYSIS_CONFIG['max_iter'], gt=0)
    accel: str = DEFAULTS['ACCEL']
    seed: int = Field(default_factory=lambda: ANALYSIS_CONFIG['seed'])
    geo_level: Optional[str] = None
    effect_level: Optional[str] = None
    threads: int = Field(default_factory=lambda: ANALYSIS_CONFIG['threads'], gt=0)
    unmatched: str = DEFAULTS['UNMATCHED']
    joint_cap: int = DEFAULTS['JOINT_CAP']
    min_cell: int = DEFAULTS['MIN_CELL']
    geo_fallbacks: List[str] = Field(default_factory=lambda: list(ANALYSIS_CONFIG['geo_fallbacks']))

    @field_validator('model')
    @classmethod
    def _known_model(cls, value):
        aliases = {'pooling': 'complete_pooling', 'mixed': 'mixed_effects'}
        value = aliases.get(value, value)
        if value not in MODEL_KINDS:
            raise ValueError(f'model must be one of {MODEL_KINDS}')
        return value

    @field_validator('accel')
    @classmethod
    def _known_accel(cls, value):
        if value not in ACCEL_METHODS:
            raise ValueError(f'accel must be one of {ACCEL_METHODS}')
        return value

    @field_validator('unmatched')
    @classmethod
    def _known_unmatched(cls, value):
        if value not in ('prior', 'drop'):
            raise ValueError("unmatched must be 'prior' or 'drop'")
        return value

    @field_validator('alpha')
    @classmethod
    def _positive_alpha(cls, value):
        if value <= 0:
            raise ValueError('alpha must be positive')
        return value

    def outcome_spec(self, **overrides):
        """OutcomeModelSpec from the model keys, with overrides (None values ignored)"""
        from birdie.models.outcome import OutcomeModelSpec

        values = {
            'kind': self.model,
            'alpha': self.alpha,
            'fixed_effect_sd': self.fixed_effect_sd,
            'intercept_scale_shape': self.intercept_scale_shape,
            'intercept_scale_rate': self.intercept_scale_rate,
            'intercept_scale': self.intercept_scale,
            'effect_level': self.effect_level,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        try:
            return OutcomeModelSpec(**values)
        except PydanticValidationError as e:
            raise ValidationError(f'Invalid outcome model: {e}')

    def fit_options(self, accel=None, level=None):
        """fit_birdie keyword arguments; command-line values win"""
        return {
            'accel': accel or self.accel,
            'tol': self.tol,
            'max_iter': self.max_iter,
            'level': level or self.effect_level,
        }


def load_run_config(path=None, **overrides):
    """
    Load a KEY=VALUE run config file and apply overrides

    Args:
        path: Config file path (optional)
        overrides: Values taking precedence over the file (None values ignored)

    Returns:
        RunConfig
    """
    values = {}
    if path:
        raw = dotenv_values(path)
        values = {key.strip().lower(): value for key, value in raw.items() if value not in (None, '')}
        if 'geo_fallbacks' in values:
            values['geo_fallbacks'] = [v.strip() for v in values['geo_fallbacks'].split(',') if v.strip()]
        logger.info(f'Loaded run config from {path}')
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return RunConfig(**values)
    except PydanticValidationError as e:
        raise ValidationError(f'Invalid run config: {e}')


def config_text(config: RunConfig):
    """Canonical KEY=VALUE rendering used for hashing and manifests"""
    lines = []
    for key, value in sorted(config.model_dump().items()):
        if isinstance(value, list):
            value = ','.join(value)
        lines.append(f'{key.upper()}={value}')
    return '\n'.join(lines) + '\n'

"""
Synthetic populations with known disparities
Samples records from a configurable causal graph and solves cells exactly
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, field_validator

from birdie.census_tables import build_census_tables
from birdie.config.constants import FLAGS, OTHER_GEO, OTHER_SURNAME
from birdie.estimators_baseline import IdentificationResult, check_identification, weighted_table
from birdie.middleware.error_handler import ValidationError
from birdie.models.census import CensusTables
from birdie.models.estimates import ConditionalEstimate, DisparityEstimate
from birdie.models.records import RecordTable, make_records
from birdie.sensitivity import SurnameGroups
from birdie.utils.helpers import chunk_bounds, derive_seed, spawn_seeds
from birdie.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
SAMPLE_BLOCK = 100_000


# ============================================
# CONFIGURATION
# ============================================
@dataclass(frozen=True)
class DagConfig:
    """
    Sampling law of a synthetic population

    R ~ prior_r, S | R ~ s_given_r, (G, X) | R ~ gx_given_r, then W | R, G, X
    when extras are configured and Y from the active outcome law.

    Attributes:
        races, surnames, geos, covs, outcomes: Label sets
        prior_r: Pr(R)
        s_given_r: races x surnames Pr(S | R)
        gx_given_r: races x geos x covs Pr(G, X | R)
        y_given_rgx: races x geos x covs x outcomes Pr(Y | R, G, X)
        y_given_gxs: geos x covs x surnames x outcomes Pr(Y | G, X, S); when
            set it replaces y_given_rgx and Y no longer depends on R
        surname_group: Group code per surname (optional)
        group_shift: groups x outcomes additive logit shift on Y
        extras: W labels
        w_given_rgx: races x geos x covs x extras Pr(W | R, G, X)
        y_given_rgxw: races x geos x covs x extras x outcomes Pr(Y | R, G, X, W)
        seed: Root seed
        level: Geo level name the geos live at
    """
    races: Tuple[str, ...]
    surnames: Tuple[str, ...]
    geos: Tuple[str, ...]
    covs: Tuple[str, ...]
    outcomes: Tuple[str, ...]
    prior_r: np.ndarray
    s_given_r: np.ndarray
    gx_given_r: np.ndarray
    y_given_rgx: Optional[np.ndarray] = None
    y_given_gxs: Optional[np.ndarray] = None
    surname_group: Optional[np.ndarray] = None
    group_shift: Optional[np.ndarray] = None
    extras: Tuple[str, ...] = ()
    w_given_rgx: Optional[np.ndarray] = None
    y_given_rgxw: Optional[np.ndarray] = None
    seed: int = 0
    level: str = 'tract'

    @property
    def shape(self):
        return len(self.races), len(self.geos), len(self.covs), len(self.surnames), len(self.outcomes)

    @property
    def n_extras(self):
        return max(len(self.extras), 1)

    def groups(self):
        """SurnameGroups for the configured surname summary"""
        if self.surname_group is None:
            return SurnameGroups(mapping={})
        return SurnameGroups(mapping={s: f'G{int(g)}' for s, g in zip(self.surnames, self.surname_group)})


def _check_stochastic(values, name, axes):
    values = np.asarray(values, dtype=float)
    if np.any(values < 0) or not np.allclose(values.sum(axis=axes), 1.0, atol=STOCHASTIC_TOL, rtol=0):
        raise ValidationError(f'{name} must be nonnegative and sum to 1')


def validate_config(config: DagConfig):
    """
    Check shapes and that every conditional table is row-stochastic

    Returns:
        The config or raises ValidationError
    """
    n_races, n_geos, n_covs, n_surnames, n_outcomes = config.shape
    expected = {
        'prior_r': (n_races,),
        's_given_r': (n_races, n_surnames),
        'gx_given_r': (n_races, n_geos, n_covs),
    }
    for name, shape in expected.items():
        if np.shape(getattr(config, name)) != shape:
            raise ValidationError(f'{name} has shape {np.shape(getattr(config, name))}, expected {shape}')
    _check_stochastic(config.prior_r, 'prior_r', None)
    _check_stochastic(config.s_given_r, 's_given_r', 1)
    _check_stochastic(config.gx_given_r, 'gx_given_r', (1, 2))

    active = [name for name in ('y_given_rgx', 'y_given_gxs', 'y_given_rgxw') if getattr(config, name) is not None]
    if len(active) != 1:
        raise ValidationError(f'exactly one outcome law must be set, found {active or "none"}')
    if config.y_given_rgx is not None:
        if np.shape(config.y_given_rgx) != (n_races, n_geos, n_covs, n_outcomes):
            raise ValidationError('y_given_rgx shape does not match the label sets')
        _check_stochastic(config.y_given_rgx, 'y_given_rgx', 3)
    if config.y_given_gxs is not None:
        if np.shape(config.y_given_gxs) != (n_geos, n_covs, n_surnames, n_outcomes):
            raise ValidationError('y_given_gxs shape does not match the label sets')
        _check_stochastic(config.y_given_gxs, 'y_given_gxs', 3)

    if config.extras:
        n_extras = len(config.extras)
        if np.shape(config.w_given_rgx) != (n_races, n_geos, n_covs, n_extras):
            raise ValidationError('w_given_rgx shape does not match the label sets')
        _check_stochastic(config.w_given_rgx, 'w_given_rgx', 3)
        if config.y_given_rgxw is not None:
            if np.shape(config.y_given_rgxw) != (n_races, n_geos, n_covs, n_extras, n_outcomes):
                raise ValidationError('y_given_rgxw shape does not match the label sets')
            _check_stochastic(config.y_given_rgxw, 'y_given_rgxw', 4)
    elif config.y_given_rgxw is not None:
        raise ValidationError('y_given_rgxw needs extras and w_given_rgx')

    if config.group_shift is not None:
        if config.surname_group is None or np.shape(config.surname_group) != (n_surnames,):
            raise ValidationError('group_shift needs one surname_group code per surname')
        if np.shape(config.group_shift) != (int(np.max(config.surname_group)) + 1, n_outcomes):
            raise ValidationError('group_shift must be groups x outcomes')
    return config


def _softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=axis, keepdims=True)


def default_config(seed=0, n_races=4, n_surnames=200, n_geos=30, n_covs=2, n_outcomes=4, n_extras=0,
                   dag='b', exclusivity=0.8, segregation=1.0, outcome_strength=0.7, geo_noise=0.3,
                   n_groups=0, group_effect=0.0, level='tract'):
    """
    Random desk-scale configuration

    Each race has its own surname pool holding `exclusivity` of its surname
    mass; the rest falls on a shared pool. Geography is segregated by a
    Dirichlet with concentration `segregation`. Under dag 'b' race r favours
    outcome r mod |Y| with probability `outcome_strength`, perturbed by
    Gaussian logit noise per cell; under dag 'a' Y depends on (G, X, S) only.

    Args:
        seed: Root seed
        n_races, n_surnames, n_geos, n_covs, n_outcomes: Label set sizes
        n_extras: Levels of an additional covariate W (0 for none)
        dag: 'a' or 'b'
        exclusivity: Share of a race's surname mass on its own pool
        segregation: Dirichlet concentration of Pr(G | R)
        outcome_strength: Pr(Y = favoured outcome | R) before noise
        geo_noise: Logit noise scale across cells
        n_groups: Number of surname groups (0 for none)
        group_effect: Logit shift scale of the surname-group effect on Y
        level: Geo level name

    Returns:
        DagConfig
    """
    if dag not in ('a', 'b'):
        raise ValidationError("dag must be 'a' or 'b'")
    if n_surnames < n_races + 1:
        raise ValidationError('need more surnames than races')
    rng = np.random.default_rng(derive_seed(seed, 'synth.config'))

    prior = 0.5 * rng.dirichlet(np.full(n_races, 4.0)) + 0.5 / n_races

    n_shared = max(1, n_surnames // 5)
    pools = np.array_split(np.arange(n_shared, n_surnames), n_races)
    s_given_r = np.zeros((n_races, n_surnames))
    for r, pool in enumerate(pools):
        s_given_r[r, pool] = exclusivity * rng.dirichlet(np.full(len(pool), 2.0))
        s_given_r[r, :n_shared] = (1.0 - exclusivity) * rng.dirichlet(np.full(n_shared, 2.0))

    geo_given_r = rng.dirichlet(np.full(n_geos, segregation), size=n_races)
    cov_given_rg = rng.dirichlet(np.full(n_covs, 3.0), size=(n_races, n_geos))
    gx_given_r = geo_given_r[:, :, None] * cov_given_rg

    base = np.full((n_races, n_outcomes), (1.0 - outcome_strength) / max(n_outcomes - 1, 1))
    base[np.arange(n_races), np.arange(n_races) % n_outcomes] = outcome_strength
    if n_outcomes == 1:
        base[:] = 1.0

    extras = tuple(f'W{j}' for j in range(n_extras))
    w_given_rgx = y_given_rgx = y_given_gxs = y_given_rgxw = None
    if n_extras:
        w_given_rgx = rng.dirichlet(np.full(n_extras, 2.0), size=(n_races, n_geos, n_covs))
    if dag == 'a':
        y_given_gxs = rng.dirichlet(np.full(n_outcomes, 1.0), size=(n_geos, n_covs, n_surnames))
    elif n_extras:
        w_shift = rng.normal(0.0, 1.0, size=(n_extras, n_outcomes))
        noise = rng.normal(0.0, geo_noise, size=(n_races, n_geos, n_covs, 1, n_outcomes))
        y_given_rgxw = _softmax(np.log(base)[:, None, None, None, :] + w_shift[None, None, None] + noise)
    else:
        noise = rng.normal(0.0, geo_noise, size=(n_races, n_geos, n_covs, n_outcomes))
        y_given_rgx = _softmax(np.log(base)[:, None, None, :] + noise)

    surname_group = group_shift = None
    if n_groups:
        surname_group = rng.integers(0, n_groups, size=n_surnames)
        surname_group[:n_groups] = np.arange(n_groups)
        group_shift = group_effect * rng.normal(0.0, 1.0, size=(n_groups, n_outcomes))

    config = DagConfig(
        races=tuple(f'R{r}' for r in range(n_races)),
        surnames=tuple(f'S{s:04d}' for s in range(n_surnames)),
        geos=tuple(f'G{g:03d}' for g in range(n_geos)),
        covs=tuple(f'X{x}' for x in range(n_covs)),
        outcomes=tuple(f'Y{k}' for k in range(n_outcomes)),
        prior_r=prior,
        s_given_r=s_given_r,
        gx_given_r=gx_given_r,
        y_given_rgx=y_given_rgx,
        y_given_gxs=y_given_gxs,
        surname_group=surname_group,
        group_shift=group_shift,
        extras=extras,
        w_given_rgx=w_given_rgx,
        y_given_rgxw=y_given_rgxw,
        seed=int(seed),
        level=level,
    )
    return validate_config(config)


class SynthSettings(BaseModel):
    """Keys accepted in a synthetic population file"""

    seed: int = 0
    n: int = Field(default=10_000, ge=0)
    n_races: int = Field(default=4, ge=1)
    n_surnames: int = Field(default=200, ge=2)
    n_geos: int = Field(default=30, ge=1)
    n_covs: int = Field(default=2, ge=1)
    n_outcomes: int = Field(default=4, ge=1)
    n_extras: int = Field(default=0, ge=0)
    dag: str = 'b'
    exclusivity: float = Field(default=0.8, ge=0, le=1)
    segregation: float = Field(default=1.0, gt=0)
    outcome_strength: float = Field(default=0.7, gt=0, lt=1)
    geo_noise: float = Field(default=0.3, ge=0)
    n_groups: int = Field(default=0, ge=0)
    group_effect: float = 0.0
    level: str = 'tract'
    delta_norm: float = Field(default=0.0, ge=0)

    @field_validator('dag')
    @classmethod
    def _known_dag(cls, value):
        if value not in ('a', 'b'):
            raise ValueError("dag must be 'a' or 'b'")
        return value


def load_synth_settings(path=None, **overrides):
    """
    Read a KEY=VALUE synthetic population file

    Args:
        path: File path (optional); keys are case-insensitive
        overrides: Values taking precedence (None values ignored)

    Returns:
        SynthSettings
    """
    values = {}
    if path:
        values = {key.strip().lower(): value for key, value in dotenv_values(path).items()
                  if value not in (None, '')}
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return SynthSettings(**values)
    except PydanticValidationError as e:
        raise ValidationError(f'Invalid synthetic config: {e}')


def config_from_settings(settings: SynthSettings):
    keys = set(SynthSettings.model_fields) - {'n', 'delta_norm'}
    return default_config(**{key: getattr(settings, key) for key in keys})


def config_from_file(path, **overrides):
    """DagConfig from a KEY=VALUE file of default_config arguments"""
    return config_from_settings(load_synth_settings(path, **overrides))


# ============================================
# POPULATION LAW
# ============================================
def outcome_law(config: DagConfig):
    """
    Pr(Y | R, G, X, W, S) as races x geos x covs x extras x surnames x outcomes

    The extras axis has length one when no W is configured.
    """
    n_races, n_geos, n_covs, n_surnames, n_outcomes = config.shape
    n_extras = config.n_extras
    full = (n_races, n_geos, n_covs, n_extras, n_surnames, n_outcomes)
    if config.y_given_gxs is not None:
        law = np.broadcast_to(config.y_given_gxs[None, :, :, None, :, :], full)
    elif config.y_given_rgxw is not None:
        law = np.broadcast_to(config.y_given_rgxw[:, :, :, :, None, :], full)
    else:
        law = np.broadcast_to(config.y_given_rgx[:, :, :, None, None, :], full)
    if config.group_shift is not None:
        shift = config.group_shift[config.surname_group]
        law = law * np.exp(shift)[None, None, None, None]
        law = law / law.sum(axis=-1, keepdims=True)
    return np.asarray(law)


def _w_law(config):
    if config.extras:
        return config.w_given_rgx
    n_races, n_geos, n_covs, _, _ = config.shape
    return np.ones((n_races, n_geos, n_covs, 1))


def population_truth(config: DagConfig):
    """
    Exact disparity tables implied by the sampling law

    Returns:
        Tuple of (outcomes x races Pr(Y | R), races x geos x covs x outcomes
        Pr(Y | R, G, X), outcomes x extras x races Pr(Y | W, R) or None)
    """
    law = outcome_law(config)
    w_law = _w_law(config)
    # Pr(Y, W | R, G, X) after averaging out S | R
    joint_w = np.einsum('rs,rgxwsk,rgxw->rgxwk', config.s_given_r, law, w_law)
    cell_truth = joint_w.sum(axis=3)
    marginal = np.einsum('rgx,rgxk->kr', config.gx_given_r, cell_truth)

    conditional = None
    if config.extras:
        y_and_w = np.einsum('rgx,rgxwk->kwr', config.gx_given_r, joint_w)
        w_mass = y_and_w.sum(axis=0)
        conditional = np.divide(y_and_w, w_mass[None], out=np.full(y_and_w.shape, np.nan), where=w_mass[None] > 0)
    return marginal, cell_truth, conditional


def exact_census_tables(config: DagConfig):
    """CensusTables computed from the sampling law, with zero residual mass"""
    surnames = pd.DataFrame(config.s_given_r.T, index=pd.Index(config.surnames, name='surname'),
                            columns=list(config.races))
    n_races, n_geos, n_covs, _, _ = config.shape
    index = pd.MultiIndex.from_product([config.geos, config.covs], names=['geo', 'cov'])
    geo = pd.DataFrame(config.gx_given_r.reshape(n_races, n_geos * n_covs).T, index=index,
                       columns=list(config.races))
    return build_census_tables(config.races, config.prior_r, surnames, {config.level: geo},
                               geo_fallbacks=[config.level])


def perturb_tables(tables: CensusTables, delta_norm, seed=0):
    """
    Census tables with a random error of Frobenius norm delta_norm on q_{S|R}

    The perturbation has zero column sums before clipping at zero; columns are
    then rescaled to their original listed mass so the residual row is kept.

    Args:
        tables: CensusTables
        delta_norm: Size of the perturbation
        seed: Seed or SeedSequence

    Returns:
        CensusTables
    """
    if delta_norm < 0:
        raise ValidationError('delta_norm must be nonnegative')
    if delta_norm == 0:
        return tables
    rng = np.random.default_rng(seed)
    listed = tables.surname_given_race.drop(index=OTHER_SURNAME)
    values = listed.to_numpy(dtype=float)
    noise = rng.normal(size=values.shape)
    noise -= noise.mean(axis=0, keepdims=True)
    noise *= delta_norm / np.linalg.norm(noise)
    perturbed = np.clip(values + noise, 0.0, None)
    mass, new_mass = values.sum(axis=0), perturbed.sum(axis=0)
    perturbed = perturbed * np.divide(mass, new_mass, out=np.zeros_like(mass), where=new_mass > 0)
    surnames = pd.DataFrame(perturbed, index=listed.index, columns=listed.columns)
    geo = {level: table[[key != OTHER_GEO for key in table.index]]
           for level, table in tables.geo_cov_given_race.items()}
    logger.info(f'Perturbed surname table by {delta_norm:g} in Frobenius norm')
    return build_census_tables(tables.races, tables.prior, surnames, geo, tables.geo_fallbacks)


# ============================================
# SAMPLING
# ============================================
def _inverse_cdf(rng, probs):
    """One categorical draw per row of probs"""
    if probs.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def _by_race(rng, race, table):
    """Draw a column of table[r] for every record of race r"""
    draws = np.zeros(len(race), dtype=np.int64)
    cdf = np.cumsum(table, axis=1)
    for r in range(table.shape[0]):
        members = np.flatnonzero(race == r)
        if len(members):
            u = rng.random(len(members)) * cdf[r, -1]
            draws[members] = np.minimum(np.searchsorted(cdf[r], u, side='right'), table.shape[1] - 1)
    return draws


def _sample_block(config, law, seed_seq, size):
    rng = np.random.default_rng(seed_seq)
    n_races, n_geos, n_covs, n_surnames, _ = config.shape
    race = rng.choice(n_races, size=size, p=config.prior_r)
    surname = _by_race(rng, race, config.s_given_r)
    cell = _by_race(rng, race, config.gx_given_r.reshape(n_races, n_geos * n_covs))
    geo, cov = np.divmod(cell, n_covs)
    extra = _inverse_cdf(rng, _w_law(config)[race, geo, cov])
    outcome = _inverse_cdf(rng, law[race, geo, cov, extra, surname])
    return race, surname, geo, cov, extra, outcome


@dataclass(frozen=True)
class SyntheticSample:
    """
    Sampled records with their ground truth

    Attributes:
        config: Sampling law
        records: RecordTable including true_race
        tables: CensusTables (exact, or perturbed when delta_norm > 0)
        truth_estimate: Population Pr(Y | R) with per-cell Pr(Y | R, G, X)
        sample_truth: Pr(Y | R) tabulated on the sampled true races
        conditional_truth: Population Pr(Y | W, R) when W is configured
    """
    config: DagConfig
    records: RecordTable
    tables: CensusTables
    truth_estimate: DisparityEstimate
    sample_truth: DisparityEstimate
    conditional_truth: Optional[ConditionalEstimate] = None
    notes: Dict[str, float] = field(default_factory=dict)


def sample_truth(records: RecordTable, races):
    """Pr(Y | R) tabulated with indicator weights of the true race"""
    codes = records.race_codes(races)
    weights = np.zeros((records.n, len(races)))
    known = codes >= 0
    weights[np.flatnonzero(known), codes[known]] = 1.0
    onehot = np.zeros((records.n, len(records.outcome_levels)))
    onehot[np.arange(records.n), records.outcome_codes()] = 1.0
    table, defined = weighted_table(weights, onehot)
    return DisparityEstimate(
        method='truth',
        outcomes=records.outcome_levels,
        races=tuple(races),
        mu_y_given_r=table,
        flags={race: FLAGS['UNDEFINED'] for race, ok in zip(races, defined) if not ok},
        weights_r=weights.mean(axis=0) if records.n else np.full(len(races), np.nan),
    )


def generate(config: DagConfig, n, delta_norm=0.0, threads=None):
    """
    Sample n records and the matching census tables

    Args:
        config: DagConfig
        n: Number of records
        delta_norm: Census table perturbation size (0 keeps the tables exact)
        threads: Worker cap across sampling blocks

    Returns:
        SyntheticSample
    """
    validate_config(config)
    law = outcome_law(config)
    blocks = chunk_bounds(n, SAMPLE_BLOCK)
    seeds = spawn_seeds(derive_seed(config.seed, 'synth.sample'), len(blocks))
    parts = parallel_map(lambda task: _sample_block(config, law, task[0], task[1][1] - task[1][0]),
                         list(zip(seeds, blocks)), threads)
    if parts:
        race, surname, geo, cov, extra, outcome = (np.concatenate(column) for column in zip(*parts))
    else:
        race = surname = geo = cov = extra = outcome = np.empty(0, dtype=np.int64)

    labels = {name: np.asarray(getattr(config, name), dtype=object)
              for name in ('races', 'surnames', 'geos', 'covs', 'outcomes')}
    records = make_records(
        surname=labels['surnames'][surname],
        geo={config.level: labels['geos'][geo]},
        cov=labels['covs'][cov],
        outcome=labels['outcomes'][outcome],
        outcome_levels=list(config.outcomes),
        extra=np.asarray(config.extras, dtype=object)[extra] if config.extras else None,
        extra_levels=list(config.extras) or None,
        true_race=labels['races'][race],
        geo_levels=[config.level],
    )

    tables = exact_census_tables(config)
    if delta_norm:
        tables = perturb_tables(tables, delta_norm, derive_seed(config.seed, 'synth.perturb'))

    marginal, cell_truth, conditional = population_truth(config)
    n_races, n_geos, n_covs, _, n_outcomes = config.shape
    cell_keys = tuple((config.level, g, x) for g in config.geos for x in config.covs)
    truth = DisparityEstimate(
        method='truth',
        outcomes=config.outcomes,
        races=config.races,
        mu_y_given_r=marginal,
        weights_r=np.asarray(config.prior_r, dtype=float),
        cell_keys=cell_keys,
        mu_y_given_rgx=cell_truth.reshape(n_races, n_geos * n_covs, n_outcomes).transpose(1, 2, 0),
    )
    conditional_truth = None
    if conditional is not None:
        conditional_truth = ConditionalEstimate(
            approach='truth', outcomes=config.outcomes, extras=config.extras, races=config.races,
            mu_y_given_wr=conditional)

    logger.info(f'✅ Sampled {n} synthetic records ({n_races} races, {len(config.surnames)} surnames, '
                f'{n_geos} geos, {n_covs} covs)')
    return SyntheticSample(
        config=config,
        records=records,
        tables=tables,
        truth_estimate=truth,
        sample_truth=sample_truth(records, config.races),
        conditional_truth=conditional_truth,
        notes={'delta_norm': float(delta_norm)},
    )


def truth_frame(sample: SyntheticSample):
    """Population and sampled truth in the estimate CSV layout"""
    population = sample.truth_estimate.to_frame()
    sampled = replace(sample.sample_truth, method='sample_truth').to_frame()
    return pd.concat([population, sampled], ignore_index=True)


# ============================================
# EXACT CELL SOLUTION
# ============================================
@dataclass(frozen=True)
class OracleSolution:
    """
    Exact solution of one cell's linear system

    Attributes:
        cell: (geo, cov)
        status: 'identified', 'unidentified' or 'inconsistent'
        mu: outcomes x races Pr(Y | R, g, x), None when unidentified
        identification: Rank check of the system
    """
    cell: Tuple[str, str]
    status: str
    mu: Optional[np.ndarray]
    identification: IdentificationResult


def cell_system(config: DagConfig, cell):
    """
    P with entries Pr(R | g, x, s) and B with entries Pr(Y | g, x, s)

    Rows cover surnames with positive probability in the cell.

    Returns:
        Tuple of (surnames x races P, surnames x outcomes B)
    """
    g, x = config.geos.index(cell[0]), config.covs.index(cell[1])
    joint = config.prior_r[:, None] * config.gx_given_r[:, g, x][:, None] * config.s_given_r
    mass = joint.sum(axis=0)
    present = mass > 0
    p = (joint[:, present] / mass[present]).T
    # Pr(Y | r, g, x, s) with W averaged out
    law = np.einsum('rwsk,rw->rsk', outcome_law(config)[:, g, x], _w_law(config)[:, g, x])
    b = np.einsum('sr,rsk->sk', p, law[:, present])
    return p, b


def oracle_solve(config: DagConfig, cell):
    """
    Solve P mu = B for one (geo, cov) cell from the sampling law

    Args:
        config: DagConfig
        cell: (geo, cov) labels

    Returns:
        OracleSolution; mu is None when P lacks full column rank
    """
    p, b = cell_system(config, cell)
    identification = check_identification(p, b)
    if identification.status == 'rank_deficient':
        return OracleSolution(cell=tuple(cell), status='unidentified', mu=None, identification=identification)
    solution, *_ = np.linalg.lstsq(p, b, rcond=None)
    return OracleSolution(cell=tuple(cell), status=identification.status, mu=solution.T,
                          identification=identification)

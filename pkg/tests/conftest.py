"""
Shared fixtures: small hand-built census tables and synthetic populations
"""

import numpy as np
import pandas as pd
import pytest

from birdie.bisg import bisg_predict
from birdie.census_tables import build_census_tables
from birdie.em import fit_birdie
from birdie.models.outcome import OutcomeModelSpec
from birdie.synth import default_config, generate


@pytest.fixture
def two_race_tables():
    """Two races, two listed surnames, tract level with a single-county backstop"""
    surnames = pd.DataFrame({'A': [0.5, 0.1], 'B': [0.1, 0.6]}, index=['SMITH', 'GARCIA'])
    tract = pd.DataFrame(
        {'A': [0.7, 0.3], 'B': [0.2, 0.8]},
        index=pd.MultiIndex.from_tuples([('T1', ''), ('T2', '')], names=['geo', 'cov']),
    )
    county = pd.DataFrame(
        {'A': [1.0], 'B': [1.0]},
        index=pd.MultiIndex.from_tuples([('C1', '')], names=['geo', 'cov']),
    )
    return build_census_tables(['A', 'B'], [0.6, 0.4], surnames, {'tract': tract, 'county': county},
                               geo_fallbacks=['tract', 'county'])


@pytest.fixture(scope='session')
def small_config():
    return default_config(seed=11, n_races=3, n_surnames=60, n_geos=6, n_covs=2, n_outcomes=3)


@pytest.fixture(scope='session')
def small_sample(small_config):
    return generate(small_config, 20_000)


@pytest.fixture(scope='session')
def small_probs(small_sample):
    return bisg_predict(small_sample.tables, small_sample.records)


@pytest.fixture(scope='session')
def pooled_sample():
    """Single covariate level and no geo noise, so a pooled model is well specified"""
    config = default_config(seed=5, n_races=2, n_surnames=40, n_geos=4, n_covs=1, n_outcomes=2, geo_noise=0.0)
    return generate(config, 4_000)


@pytest.fixture(scope='session')
def pooled_probs(pooled_sample):
    return bisg_predict(pooled_sample.tables, pooled_sample.records)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope='session')
def saturated_fit(small_sample, small_probs):
    return fit_birdie(small_probs, small_sample.records, OutcomeModelSpec(kind='saturated'))

from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from birdie.bisg import bisg_predict
from birdie.estimators_baseline import weighting_estimate
from birdie.metrics import tv_distance
from birdie.middleware.error_handler import ValidationError
from birdie.synth import (
    cell_system,
    config_from_file,
    default_config,
    exact_census_tables,
    generate,
    load_synth_settings,
    oracle_solve,
    outcome_law,
    perturb_tables,
    population_truth,
    truth_frame,
    validate_config,
)


# ============================================
# CONFIGURATION
# ============================================
def test_default_config_labels(small_config):
    assert small_config.races == ('R0', 'R1', 'R2')
    assert small_config.surnames[0] == 'S0000'
    assert small_config.geos[-1] == 'G005'
    assert small_config.covs == ('X0', 'X1')
    assert small_config.outcomes == ('Y0', 'Y1', 'Y2')
    assert small_config.y_given_rgx is not None and small_config.y_given_gxs is None


def test_invalid_configs_are_rejected(small_config):
    with pytest.raises(ValidationError, match='prior_r'):
        validate_config(replace(small_config, prior_r=np.array([0.5, 0.3, 0.3])))
    with pytest.raises(ValidationError, match='s_given_r'):
        validate_config(replace(small_config, s_given_r=small_config.s_given_r[:, :10]))
    with pytest.raises(ValidationError, match='exactly one outcome law'):
        validate_config(replace(small_config, y_given_gxs=np.full((6, 2, 60, 3), 1 / 3)))
    with pytest.raises(ValidationError, match='exactly one outcome law'):
        validate_config(replace(small_config, y_given_rgx=None))
    with pytest.raises(ValidationError):
        default_config(dag='c')
    with pytest.raises(ValidationError, match='surnames'):
        default_config(n_races=4, n_surnames=4)


def test_surname_groups_cover_every_surname():
    config = default_config(seed=1, n_races=2, n_surnames=30, n_geos=3, n_groups=3, group_effect=1.0)
    groups = config.groups()
    assert groups.labels(config.surnames) == ('G0', 'G1', 'G2')
    np.testing.assert_allclose(outcome_law(config).sum(axis=-1), 1.0)


def test_settings_file_drives_the_config(tmp_path):
    path = tmp_path / 'synth.env'
    path.write_text('SEED=3\nN_RACES=2\nN_SURNAMES=30\nN_GEOS=4\nDAG=a\nN=500\n')

    config = config_from_file(path)
    assert config.seed == 3
    assert config.races == ('R0', 'R1')
    assert config.y_given_gxs is not None
    assert load_synth_settings(path, n=20).n == 20

    path.write_text('DAG=c\n')
    with pytest.raises(ValidationError, match='synthetic config'):
        config_from_file(path)


# ============================================
# SAMPLING
# ============================================
def test_sampling_is_reproducible_from_the_seed(small_config):
    first = generate(small_config, 3_000)
    second = generate(small_config, 3_000)
    np.testing.assert_array_equal(first.records.surname, second.records.surname)
    np.testing.assert_array_equal(first.records.outcome, second.records.outcome)
    np.testing.assert_array_equal(first.records.true_race, second.records.true_race)


def test_empty_sample(small_config):
    sample = generate(small_config, 0)
    assert sample.records.n == 0
    np.testing.assert_allclose(sample.truth_estimate.mu_y_given_r.sum(axis=0), 1.0)


def test_race_and_surname_frequencies_follow_the_law(small_config, small_sample):
    records = small_sample.records
    race = records.race_codes(small_config.races)
    surname = np.array([small_config.surnames.index(s) for s in records.surname])
    observed = np.zeros_like(small_config.s_given_r)
    np.add.at(observed, (race, surname), 1)

    expected = small_config.prior_r[:, None] * small_config.s_given_r
    positive = expected > 0
    assert observed[~positive].sum() == 0
    f_exp = expected[positive] / expected[positive].sum() * records.n
    assert stats.chisquare(observed[positive], f_exp).pvalue > 0.001


def test_truth_tables_are_distributions(small_sample):
    truth = small_sample.truth_estimate
    np.testing.assert_allclose(truth.mu_y_given_r.sum(axis=0), 1.0)
    np.testing.assert_allclose(truth.mu_y_given_rgx.sum(axis=1), 1.0)
    np.testing.assert_allclose(truth.weights_r, small_sample.config.prior_r)
    np.testing.assert_allclose(small_sample.sample_truth.mu_y_given_r.sum(axis=0), 1.0)

    frame = truth_frame(small_sample)
    assert set(frame['method']) == {'truth', 'sample_truth'}
    assert len(frame) == 2 * 3 * 3


def test_conditional_truth_with_extras():
    config = default_config(seed=4, n_races=2, n_surnames=20, n_geos=3, n_covs=1, n_outcomes=2, n_extras=3)
    marginal, _, conditional = population_truth(config)
    assert conditional.shape == (2, 3, 2)
    np.testing.assert_allclose(conditional.sum(axis=0), 1.0)
    np.testing.assert_allclose(marginal.sum(axis=0), 1.0)


@pytest.mark.slow
def test_weighting_is_consistent_when_outcomes_ignore_race():
    config = default_config(seed=2, n_races=3, n_surnames=60, n_geos=6, n_covs=2, n_outcomes=3, dag='a')
    sample = generate(config, 60_000)
    probs = bisg_predict(sample.tables, sample.records)
    assert tv_distance(weighting_estimate(probs, sample.records), sample.truth_estimate) < 0.02


# ============================================
# CENSUS TABLES
# ============================================
def test_exact_tables_have_no_residual_mass(small_config):
    tables = exact_census_tables(small_config)
    np.testing.assert_allclose(tables.residual('surname'), 0.0, atol=1e-12)
    np.testing.assert_allclose(tables.residual('geo', 'tract'), 0.0, atol=1e-12)
    assert tables.geo_fallbacks == ('tract',)


def test_zero_perturbation_returns_the_same_tables(small_sample):
    assert perturb_tables(small_sample.tables, 0.0) is small_sample.tables
    with pytest.raises(ValidationError):
        perturb_tables(small_sample.tables, -1.0)


def test_perturbation_keeps_listed_mass(small_sample):
    tables = small_sample.tables
    perturbed = perturb_tables(tables, 0.01, seed=9)

    before = tables.surname_given_race.to_numpy()
    after = perturbed.surname_given_race.reindex(tables.surname_given_race.index).to_numpy()
    assert after.min() >= 0.0
    np.testing.assert_allclose(after.sum(axis=0), before.sum(axis=0), atol=1e-12)
    assert 0.0 < np.linalg.norm(after - before) < 0.05
    np.testing.assert_array_equal(perturbed.prior, tables.prior)


# ============================================
# EXACT CELL SOLUTION
# ============================================
def test_exclusive_surnames_give_the_law_exactly():
    config = default_config(seed=6, n_races=3, n_surnames=30, n_geos=2, n_covs=1, n_outcomes=2, exclusivity=1.0)
    solution = oracle_solve(config, ('G001', 'X0'))

    p, _ = cell_system(config, ('G001', 'X0'))
    assert set(np.unique(p)) <= {0.0, 1.0}
    assert solution.status == 'identified'
    np.testing.assert_allclose(solution.mu, config.y_given_rgx[:, 1, 0, :].T, atol=1e-10)


def test_random_identified_system_is_solved(small_config):
    solution = oracle_solve(small_config, ('G002', 'X1'))
    p, b = cell_system(small_config, ('G002', 'X1'))

    assert solution.identification.identified
    assert solution.identification.rank_p == 3
    np.testing.assert_allclose(p @ solution.mu.T, b, atol=1e-10)
    np.testing.assert_allclose(solution.mu, small_config.y_given_rgx[:, 2, 1, :].T, atol=1e-10)


def test_surnames_without_race_information_are_unidentified(small_config):
    flat = replace(small_config, s_given_r=np.tile(small_config.s_given_r[0], (3, 1)))
    solution = oracle_solve(flat, ('G000', 'X0'))
    assert solution.status == 'unidentified'
    assert solution.mu is None
    assert solution.identification.rank_p == 1


def test_surname_dependent_outcomes_are_inconsistent():
    config = default_config(seed=8, n_races=2, n_surnames=30, n_geos=2, n_covs=1, n_outcomes=3, dag='a')
    assert oracle_solve(config, ('G000', 'X0')).status == 'inconsistent'

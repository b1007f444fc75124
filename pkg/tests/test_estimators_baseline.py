from dataclasses import replace

import numpy as np
import pytest

from birdie.bisg import bisg_predict
from birdie.estimators_baseline import (
    check_identification,
    ols_estimate,
    ols_poststratify,
    thresholding_estimate,
    weighting_bias_formula,
    weighting_estimate,
    wtd_ols_equality_check,
)
from birdie.middleware.error_handler import ValidationError
from birdie.models.probs import ProbMatrix
from birdie.models.records import make_records
from birdie.synth import default_config, generate


def _probs(rows, races=('A', 'B')):
    rows = np.asarray(rows, dtype=float)
    return ProbMatrix(probs=rows, races=races, ids=np.array([str(i) for i in range(len(rows))], dtype=object))


def _two_cell_data():
    rows = [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.7, 0.3], [0.1, 0.9], [0.5, 0.5]]
    records = make_records(
        surname=['S'] * 6,
        geo={'tract': ['T1', 'T1', 'T1', 'T2', 'T2', 'T2']},
        outcome=['yes', 'no', 'yes', 'no', 'yes', 'yes'],
    )
    return _probs(rows), records


# ============================================
# WEIGHTING AND THRESHOLDING
# ============================================
def test_indicator_probabilities_reproduce_the_empirical_table():
    records = make_records(surname=['S'] * 5, geo={'tract': ['T1'] * 5},
                           outcome=['yes', 'yes', 'no', 'no', 'no'], true_race=['A', 'A', 'A', 'B', 'B'])
    probs = _probs([[1, 0], [1, 0], [1, 0], [0, 1], [0, 1]])

    for estimate in (weighting_estimate(probs, records), thresholding_estimate(probs, records)):
        np.testing.assert_allclose(estimate.mu_y_given_r, [[1 / 3, 1.0], [2 / 3, 0.0]])
        assert estimate.flags == {}


def test_weighting_averages_outcomes_by_probability_mass():
    records = make_records(surname=['S'] * 2, geo={'tract': ['T1'] * 2}, outcome=['yes', 'no'])
    estimate = weighting_estimate(_probs([[0.75, 0.25], [0.25, 0.75]]), records)
    np.testing.assert_allclose(estimate.mu_y_given_r, [[0.25, 0.75], [0.75, 0.25]])
    np.testing.assert_allclose(estimate.weights_r, [0.5, 0.5])


def test_races_without_mass_are_undefined():
    records = make_records(surname=['S'] * 2, geo={'tract': ['T1'] * 2}, outcome=['yes', 'no'])
    estimate = weighting_estimate(_probs([[1, 0], [1, 0]]), records)
    assert np.isnan(estimate.mu_y_given_r[:, 1]).all()
    assert estimate.flags == {'B': 'undefined'}


def test_thresholding_assigns_ties_to_the_first_race():
    records = make_records(surname=['S'] * 2, geo={'tract': ['T1'] * 2}, outcome=['yes', 'no'])
    estimate = thresholding_estimate(_probs([[0.5, 0.5], [0.5, 0.5]]), records)
    np.testing.assert_allclose(estimate.mu_y_given_r[:, 0], [0.5, 0.5])
    assert estimate.flags == {'B': 'undefined'}


def test_weighting_rejects_misaligned_probabilities():
    records = make_records(surname=['S'] * 2, geo={'tract': ['T1'] * 2}, outcome=['yes', 'no'])
    with pytest.raises(ValidationError):
        weighting_estimate(_probs([[1.0, 0.0]]), records)


def test_bias_formula_matches_the_weighting_error_in_one_cell():
    records = make_records(surname=['S'] * 4, geo={'tract': ['T1'] * 4},
                           outcome=['yes', 'yes', 'no', 'no'], true_race=['A', 'A', 'B', 'B'])
    probs = _probs([[0.5, 0.5]] * 4)

    bias = weighting_bias_formula(records, probs, 'yes', 'A')
    estimate = weighting_estimate(probs, records)
    assert bias == pytest.approx(-0.5)
    assert estimate.mu_y_given_r[1, 0] - 1.0 == pytest.approx(bias)


def test_bias_formula_is_zero_when_race_is_constant_within_cells():
    records = make_records(surname=['S', 'S', 'T', 'T'], geo={'tract': ['T1'] * 4},
                           outcome=['yes', 'no', 'yes', 'yes'], true_race=['A', 'A', 'B', 'B'])
    assert weighting_bias_formula(records, _probs([[0.5, 0.5]] * 4), 'yes', 'A') == pytest.approx(0.0)


def test_bias_formula_needs_binary_race():
    records = make_records(surname=['S'], geo={'tract': ['T1']}, outcome=['yes'], true_race=['A'])
    probs = _probs([[0.2, 0.3, 0.5]], races=('A', 'B', 'C'))
    with pytest.raises(ValidationError, match='two races'):
        weighting_bias_formula(records, probs, 'yes', 'A')


@pytest.mark.slow
def test_bias_formula_matches_the_weighting_error_on_a_population():
    config = default_config(seed=12, n_races=2, n_surnames=20, n_geos=5, n_covs=1, n_outcomes=2,
                            exclusivity=0.5)
    sample = generate(config, 200_000)
    probs = bisg_predict(sample.tables, sample.records)

    bias = weighting_bias_formula(sample.records, probs, 'Y0', 'R0')
    error = weighting_estimate(probs, sample.records).mu_y_given_r[0, 0] - sample.sample_truth.mu_y_given_r[0, 0]
    assert bias < -0.01
    assert abs(bias - error) < 0.01


# ============================================
# IDENTIFICATION AND OLS
# ============================================
def test_identification_statuses():
    p = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    assert check_identification(p, p @ np.array([0.2, 0.6])).status == 'identified'
    assert check_identification(p, np.array([1.0, 0.0, 1.0])).status == 'inconsistent'
    flat = np.array([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]])
    result = check_identification(flat, np.array([1.0, 0.0, 1.0]))
    assert result.status == 'rank_deficient'
    assert result.rank_p == 1
    assert not result.identified


def test_ols_solves_each_cell_by_least_squares():
    probs, records = _two_cell_data()
    estimate = ols_estimate(probs, records)

    assert estimate.cell_keys == (('tract', 'T1', ''), ('tract', 'T2', ''))
    onehot = np.array([[0, 1], [1, 0], [0, 1], [1, 0], [0, 1], [0, 1]], dtype=float)
    for c, rows in enumerate((slice(0, 3), slice(3, 6))):
        beta, *_ = np.linalg.lstsq(probs.probs[rows], onehot[rows], rcond=None)
        np.testing.assert_allclose(estimate.mu_y_given_rgx[c], beta.T, atol=1e-12)

    mass = np.array([probs.probs[:3].sum(axis=0), probs.probs[3:].sum(axis=0)])
    expected = np.einsum('cyr,cr->yr', estimate.mu_y_given_rgx, mass / mass.sum(axis=0))
    np.testing.assert_allclose(estimate.mu_y_given_r, expected)


def test_ols_flags_rank_deficient_cells():
    records = make_records(surname=['S'] * 4, geo={'tract': ['T1', 'T1', 'T2', 'T2']},
                           outcome=['yes', 'no', 'yes', 'no'])
    probs = _probs([[0.5, 0.5], [0.5, 0.5], [0.9, 0.1], [0.1, 0.9]])
    estimate = ols_estimate(probs, records)

    assert estimate.cell_flags == {('tract', 'T1', ''): 'unidentified'}
    assert np.isnan(estimate.mu_y_given_rgx[0]).all()
    np.testing.assert_allclose(estimate.mu_y_given_r, estimate.mu_y_given_rgx[1], atol=1e-12)


def test_post_stratification_uses_census_weights(two_race_tables):
    probs, records = _two_cell_data()
    cells = ols_estimate(probs, records)
    estimate = ols_poststratify(cells, two_race_tables)

    q = np.array([[0.7, 0.2], [0.3, 0.8]])
    expected = np.einsum('cyr,cr->yr', cells.mu_y_given_rgx, q / q.sum(axis=0))
    np.testing.assert_allclose(estimate.mu_y_given_r, expected)
    assert estimate.method == 'ols_poststrat'


def test_post_stratification_requires_weights_for_observed_cells(two_race_tables):
    probs, records = _two_cell_data()
    records = make_records(surname=records.surname, geo={'tract': ['T1'] * 3 + ['T9'] * 3},
                           outcome=records.outcome)
    with pytest.raises(ValidationError, match='census weights'):
        ols_poststratify(ols_estimate(probs, records), two_race_tables)


# ============================================
# WEIGHTING VERSUS OLS
# ============================================
def test_constant_outcomes_make_the_estimators_agree(rng):
    p = rng.dirichlet(np.ones(3), size=20)
    report = wtd_ols_equality_check(p, np.ones(20))
    assert report.equal
    assert report.condition_holds


def test_disjoint_supports_make_the_estimators_agree(rng):
    p = np.eye(3)[rng.integers(0, 3, size=30)]
    p[:3] = np.eye(3)
    b = rng.integers(0, 2, size=30).astype(float)
    report = wtd_ols_equality_check(p, b)
    assert report.equal
    assert all(pair['orthogonal'] for pair in report.pairs.values())


def test_generic_cells_violate_the_pairwise_condition(rng):
    p = rng.dirichlet(np.ones(3), size=40)
    b = (rng.random(40) < p[:, 0]).astype(float)
    b[:2] = [1.0, 0.0]
    report = wtd_ols_equality_check(p, b)
    assert report.verdict == 'unequal'
    assert not report.condition_holds


def test_verdict_agrees_with_the_pairwise_condition(rng):
    cases = []
    for _ in range(20):
        p = rng.dirichlet(np.ones(2), size=15)
        cases.append((p, np.ones(15)))
        cases.append((p, (rng.random(15) < 0.5).astype(float)))
        support = np.eye(2)[np.r_[0, 1, rng.integers(0, 2, size=13)]]
        cases.append((support, (rng.random(15) < 0.5).astype(float)))
    for p, b in cases:
        report = wtd_ols_equality_check(p, b)
        assert report.equal == report.condition_holds


@pytest.mark.slow
def test_post_stratified_ols_is_unbiased_across_replicates():
    config = default_config(seed=13, n_races=2, n_surnames=10, n_geos=2, n_covs=1, n_outcomes=2)
    truth = None
    errors = []
    for replicate in range(500):
        sample = generate(replace(config, seed=replicate), 5_000)
        probs = bisg_predict(sample.tables, sample.records)
        estimate = ols_poststratify(ols_estimate(probs, sample.records), sample.tables)
        truth = sample.truth_estimate.mu_y_given_r
        errors.append(estimate.mu_y_given_r - truth)

    errors = np.array(errors)
    standard_error = errors.std(axis=0, ddof=1) / np.sqrt(len(errors))
    assert np.all(np.abs(errors.mean(axis=0)) <= 3 * standard_error + 1e-12)

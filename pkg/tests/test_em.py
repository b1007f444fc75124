import numpy as np
import pytest

from birdie.bisg import bisg_predict
from birdie.em import (
    bootstrap_pooling,
    cell_tables_by_area,
    e_step,
    estimate_from_fit,
    fit_birdie,
    marginal_log_posterior,
)
from birdie.estimators_baseline import weighting_estimate
from birdie.metrics import log_score, map_accuracy, tv_distance
from birdie.middleware.error_handler import ValidationError
from birdie.models.outcome import OutcomeModelSpec
from birdie.models.probs import ProbMatrix
from birdie.models.records import make_records
from birdie.synth import default_config, exact_census_tables, generate

POOLING = OutcomeModelSpec(kind='complete_pooling')
SATURATED = OutcomeModelSpec(kind='saturated')


def _probs(rows, races=('A', 'B')):
    rows = np.asarray(rows, dtype=float)
    return ProbMatrix(probs=rows, races=races, ids=np.array([str(i) for i in range(len(rows))], dtype=object))


def _tiny():
    rows = [[0.9, 0.1], [0.8, 0.2], [0.9, 0.1], [0.2, 0.8], [0.1, 0.9], [0.1, 0.9], [0.7, 0.3], [0.3, 0.7]]
    records = make_records(surname=['S'] * 8, geo={'tract': ['T1'] * 8},
                           outcome=['no', 'no', 'yes', 'yes', 'yes', 'no', 'no', 'yes'])
    return _probs(rows), records


# ============================================
# E-STEP
# ============================================
def test_e_step_applies_bayes_rule():
    records = make_records(surname=['S'], geo={'tract': ['T1']}, outcome=['Y0'], outcome_levels=['Y0', 'Y1'])
    updated, suffstats, diagnostics = e_step(np.array([[0.8, 0.2], [0.2, 0.8]]), _probs([[0.5, 0.5]]), records)

    np.testing.assert_allclose(updated.probs, [[0.8, 0.2]])
    np.testing.assert_allclose(suffstats[:, 0, :], [[0.8, 0.0], [0.2, 0.0]])
    assert diagnostics['loglik'] == pytest.approx(np.log(0.5))
    assert updated.conditioning[-1] == 'Y'


def test_zero_likelihood_rows_keep_their_input_probabilities():
    records = make_records(surname=['S'], geo={'tract': ['T1']}, outcome=['Y1'], outcome_levels=['Y0', 'Y1'])
    updated, _, diagnostics = e_step(np.array([[1.0, 0.0], [1.0, 0.0]]), _probs([[0.3, 0.7]]), records)

    np.testing.assert_allclose(updated.probs, [[0.3, 0.7]])
    assert diagnostics['zero_normalizer'] == 1


def test_e_step_is_independent_of_threads(small_sample, small_probs):
    records = small_sample.records
    theta = np.full((3, 3), 1.0 / 3.0)
    theta[:, 0] = [0.6, 0.2, 0.2]
    theta /= theta.sum(axis=1, keepdims=True)
    one = e_step(theta, small_probs, records, threads=1)
    four = e_step(theta, small_probs, records, threads=4)
    np.testing.assert_array_equal(one[0].probs, four[0].probs)
    np.testing.assert_array_equal(one[1], four[1])


# ============================================
# FIT
# ============================================
def test_pooling_fit_reaches_the_grid_maximum():
    probs, records = _tiny()
    fit = fit_birdie(probs, records, POOLING, accel='squarem', tol=1e-12, max_iter=20_000)

    grid = np.linspace(0.001, 0.999, 999)
    a, b = np.meshgrid(grid, grid, indexing='ij')
    is_no = np.array([1, 1, 0, 0, 0, 1, 1, 0], dtype=bool)
    loglik = np.zeros_like(a)
    for (p_a, p_b), no in zip(probs.probs, is_no):
        loglik += np.log(p_a * (a if no else 1 - a) + p_b * (b if no else 1 - b))
    best = np.unravel_index(np.argmax(loglik), loglik.shape)

    assert fit.converged
    assert fit.theta[0, 0] == pytest.approx(grid[best[0]], abs=0.01)
    assert fit.theta[1, 0] == pytest.approx(grid[best[1]], abs=0.01)
    assert marginal_log_posterior(fit.theta, probs, records, POOLING) >= loglik.max() - 1e-9


@pytest.mark.parametrize('accel', ['none', 'squarem', 'anderson'])
@pytest.mark.parametrize('spec', [POOLING, SATURATED], ids=['pooling', 'saturated'])
def test_trace_never_decreases(small_sample, small_probs, spec, accel):
    fit = fit_birdie(small_probs, small_sample.records, spec, accel=accel, tol=1e-8, max_iter=2000)
    assert np.all(np.diff(fit.trace) >= -1e-8)
    assert len(fit.trace) == fit.iterations + 1


def test_trace_ends_at_the_log_posterior_of_theta(pooled_sample, pooled_probs):
    records = pooled_sample.records
    fit = fit_birdie(pooled_probs, records, SATURATED, tol=1e-8)
    expected = marginal_log_posterior(fit.theta, pooled_probs, records, SATURATED)
    assert fit.trace[-1] == pytest.approx(expected, rel=1e-10)


def test_accelerators_agree_with_plain_em(small_sample, small_probs):
    records = small_sample.records
    plain = fit_birdie(small_probs, records, POOLING, accel='none', tol=1e-10, max_iter=20_000)
    squarem = fit_birdie(small_probs, records, POOLING, accel='squarem', tol=1e-10, max_iter=20_000)
    anderson = fit_birdie(small_probs, records, POOLING, accel='anderson', tol=1e-10, max_iter=20_000)

    np.testing.assert_allclose(squarem.theta, plain.theta, atol=1e-5)
    np.testing.assert_allclose(anderson.theta, plain.theta, atol=1e-5)
    assert squarem.map_evaluations < plain.map_evaluations


@pytest.mark.slow
def test_accelerated_saturated_fits_reach_the_same_log_posterior(small_sample, small_probs):
    records = small_sample.records
    values = [fit_birdie(small_probs, records, SATURATED, accel=accel, tol=1e-10, max_iter=20_000).trace[-1]
              for accel in ('none', 'squarem', 'anderson')]
    np.testing.assert_allclose(values, values[0], atol=1e-6, rtol=0)


def test_pooling_fixed_point_matches_weighting_on_updated_probabilities(pooled_sample, pooled_probs):
    records = pooled_sample.records
    fit = fit_birdie(pooled_probs, records, POOLING, accel='squarem', tol=1e-11, max_iter=20_000)
    reweighted = weighting_estimate(fit.updated_probs, records)
    np.testing.assert_allclose(reweighted.mu_y_given_r, fit.theta.T, atol=1e-6)


def test_iteration_cap_reports_non_convergence(small_sample, small_probs):
    fit = fit_birdie(small_probs, small_sample.records, SATURATED, accel='none', max_iter=1)
    assert not fit.converged
    assert fit.iterations == 1
    assert len(fit.trace) == 2


def test_fit_needs_outcomes(small_sample, small_probs):
    records = small_sample.records
    unlabeled = make_records(surname=records.surname, geo=records.geo, cov=records.cov, ids=records.ids)
    with pytest.raises(ValidationError, match='outcome'):
        fit_birdie(small_probs, unlabeled)


def test_updated_probabilities_are_stochastic(saturated_fit):
    np.testing.assert_allclose(saturated_fit.updated_probs.probs.sum(axis=1), 1.0)
    assert saturated_fit.updated_probs.probs.min() >= 0.0
    assert saturated_fit.updated_probs.conditioning == ('G', 'X', 'S', 'Y')


def test_updated_probabilities_predict_race_better_than_bisg(small_sample, small_probs, saturated_fit):
    true_race = small_sample.records.true_race
    updated = saturated_fit.updated_probs
    assert map_accuracy(updated, true_race) >= map_accuracy(small_probs, true_race) + 0.01
    assert log_score(updated, true_race) > log_score(small_probs, true_race)


# ============================================
# AGGREGATION
# ============================================
def test_pooling_estimate_is_theta(small_sample, small_probs):
    fit = fit_birdie(small_probs, small_sample.records, POOLING)
    estimate = estimate_from_fit(fit)
    np.testing.assert_array_equal(estimate.mu_y_given_r, fit.theta.T)
    assert estimate.method == 'birdie'


def test_races_without_probability_mass_are_degenerate():
    _, records = _tiny()
    probs = _probs([[1.0, 0.0]] * records.n)
    estimate = estimate_from_fit(fit_birdie(probs, records, POOLING))
    assert estimate.flags == {'B': 'degenerate'}
    np.testing.assert_allclose(estimate.mu_y_given_r[:, 1], [0.5, 0.5])


def test_saturated_fit_beats_weighting_on_correct_model(small_sample, small_probs, saturated_fit):
    truth = small_sample.truth_estimate
    birdie = estimate_from_fit(saturated_fit, small_sample.tables, weights='census')
    weighting = weighting_estimate(small_probs, small_sample.records)

    birdie_tv = tv_distance(birdie, truth)
    assert birdie_tv < tv_distance(weighting, truth)
    assert birdie_tv < 0.05
    np.testing.assert_allclose(birdie.mu_y_given_r.sum(axis=0), 1.0)


def test_sample_weights_do_not_need_census_tables(saturated_fit):
    estimate = estimate_from_fit(saturated_fit, weights='sample')
    np.testing.assert_allclose(estimate.mu_y_given_r.sum(axis=0), 1.0)
    with pytest.raises(ValidationError):
        estimate_from_fit(saturated_fit, weights='census')


def test_census_weights_must_cover_every_cell(saturated_fit):
    fewer_geos = default_config(seed=11, n_races=3, n_surnames=60, n_geos=2, n_covs=2, n_outcomes=3)
    with pytest.raises(ValidationError, match='census weights'):
        estimate_from_fit(saturated_fit, exact_census_tables(fewer_geos))


def test_area_tables_pool_cells_within_each_geo(small_sample, saturated_fit):
    areas, probs, mass = cell_tables_by_area(saturated_fit)
    assert areas == sorted(set(small_sample.records.geo['tract']))
    assert probs.shape == (len(areas), 3, 3)
    defined = mass > 0
    np.testing.assert_allclose(probs.sum(axis=1)[defined], 1.0)


# ============================================
# BOOTSTRAP
# ============================================
def test_bootstrap_covariance_is_symmetric_and_reproducible(pooled_sample, pooled_probs):
    records = pooled_sample.records
    serial = bootstrap_pooling(pooled_probs, records, replicates=8, seed=3, threads=1)
    threaded = bootstrap_pooling(pooled_probs, records, replicates=8, seed=3, threads=4)

    assert serial.shape == (4, 4)
    assert list(serial.index.names) == ['race', 'y']
    np.testing.assert_allclose(serial.to_numpy(), serial.to_numpy().T)
    assert np.all(np.diag(serial.to_numpy()) >= 0)
    np.testing.assert_array_equal(serial.to_numpy(), threaded.to_numpy())


def test_bootstrap_rejects_bad_options(pooled_sample, pooled_probs):
    records = pooled_sample.records
    with pytest.raises(ValidationError):
        bootstrap_pooling(pooled_probs, records, replicates=1)
    with pytest.raises(ValidationError):
        bootstrap_pooling(pooled_probs, records, spec=SATURATED, replicates=5)


@pytest.mark.slow
def test_bootstrap_variance_shrinks_with_sample_size():
    config = default_config(seed=5, n_races=2, n_surnames=40, n_geos=4, n_covs=1, n_outcomes=2, geo_noise=0.0)
    sample = generate(config, 10_000)
    probs = bisg_predict(sample.tables, sample.records)
    first = np.arange(1_000)

    large = bootstrap_pooling(probs, sample.records, replicates=1_000, seed=1)
    small = bootstrap_pooling(probs.take(first), sample.records.take(first), replicates=1_000, seed=1)

    ratio = np.trace(small.to_numpy()) / np.trace(large.to_numpy())
    assert 8.0 <= ratio <= 12.0

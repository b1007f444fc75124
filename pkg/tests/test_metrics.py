import numpy as np
import pytest

from birdie.metrics import (
    AreaTables,
    align_estimate,
    area_tables_from_fit,
    area_tables_from_weights,
    log_score,
    map_accuracy,
    reports_frame,
    rmse_and_correlation,
    roc_auc,
    scalar_report,
    series_report,
    small_area_mean_tv,
    true_race_weights,
    tv_distance,
    tv_within_race,
)
from birdie.middleware.error_handler import ValidationError
from birdie.models.estimates import DisparityEstimate
from birdie.models.probs import ProbMatrix
from birdie.models.records import make_records


def _estimate(table, races=('A', 'B'), outcomes=('no', 'yes'), weights=(0.5, 0.5)):
    return DisparityEstimate(method='test', outcomes=outcomes, races=races,
                             mu_y_given_r=np.asarray(table, dtype=float), weights_r=np.asarray(weights))


def _probs(rows, races=('A', 'B')):
    rows = np.asarray(rows, dtype=float)
    return ProbMatrix(probs=rows, races=races, ids=np.array([str(i) for i in range(len(rows))], dtype=object))


def _areas(probs, counts):
    probs = np.asarray(probs, dtype=float)
    return AreaTables(tuple(f'T{i}' for i in range(len(probs))), ('no', 'yes'), ('A', 'B'), probs,
                      np.asarray(counts, dtype=float))


# ============================================
# DISPARITY TABLES
# ============================================
def test_identical_tables_are_at_distance_zero():
    table = _estimate([[0.3, 0.6], [0.7, 0.4]])
    assert tv_distance(table, table) == 0.0
    assert tv_within_race(table, table).tolist() == [0.0, 0.0]


def test_tv_on_hand_tables():
    truth = _estimate([[0.3, 0.6], [0.7, 0.4]])
    estimate = _estimate([[0.5, 0.6], [0.5, 0.4]])
    assert tv_distance(estimate, truth) == pytest.approx(0.5 * (0.2 + 0.2) * 0.5)
    assert tv_distance(estimate, truth, [1.0, 0.0]) == pytest.approx(0.2)
    np.testing.assert_allclose(tv_within_race(estimate, truth), [0.2, 0.0])


def test_disjoint_supports_are_at_distance_one():
    truth = _estimate([[1.0, 1.0], [0.0, 0.0]])
    estimate = _estimate([[0.0, 0.0], [1.0, 1.0]])
    assert tv_distance(estimate, truth) == pytest.approx(1.0)


def test_undefined_columns_make_the_distance_undefined():
    truth = _estimate([[0.3, 0.6], [0.7, 0.4]])
    estimate = _estimate([[0.3, np.nan], [0.7, np.nan]])
    assert np.isnan(tv_distance(estimate, truth))
    assert tv_distance(estimate, truth, [1.0, 0.0]) == 0.0
    assert np.isnan(tv_within_race(estimate, truth)['B'])


def test_support_mismatch_is_rejected():
    truth = _estimate([[0.3, 0.6], [0.7, 0.4]])
    estimate = _estimate([[0.3, 0.6], [0.7, 0.4]], races=('A', 'C'))
    with pytest.raises(ValidationError, match='supports differ'):
        tv_distance(estimate, truth)


def test_estimates_are_aligned_to_truth_labels():
    truth = _estimate([[0.3, 0.6], [0.7, 0.4]])
    swapped = _estimate([[0.4, 0.7], [0.6, 0.3]], races=('B', 'A'), outcomes=('yes', 'no'))
    assert tv_distance(align_estimate(swapped, truth), truth) == pytest.approx(0.0)


# ============================================
# SMALL AREAS
# ============================================
def test_small_area_tv_averages_over_qualifying_areas():
    truth = _areas([[[0.5, 0.5], [0.5, 0.5]], [[0.2, 0.9], [0.8, 0.1]]], [[10, 10], [10, 3]])
    estimate = _areas([[[0.6, 0.5], [0.4, 0.5]], [[0.2, 0.5], [0.8, 0.5]]], [[10, 10], [10, 3]])

    mean_tv = small_area_mean_tv(estimate, truth, min_cell=5)
    np.testing.assert_allclose(mean_tv, [0.05, 0.0])


def test_no_qualifying_areas_is_an_error():
    truth = _areas([[[0.5, 0.5], [0.5, 0.5]]], [[1, 1]])
    with pytest.raises(ValidationError, match='minimum size'):
        small_area_mean_tv(truth, truth, min_cell=5)


def test_constant_offset_gives_rmse_and_perfect_correlation():
    truth_probs = np.array([[[0.2, 0.3], [0.8, 0.7]], [[0.4, 0.5], [0.6, 0.5]], [[0.6, 0.1], [0.4, 0.9]]])
    offset = truth_probs + np.array([[0.1, 0.1], [-0.1, -0.1]])
    counts = np.full((3, 2), 50)
    frame = rmse_and_correlation(_areas(offset, counts), _areas(truth_probs, counts))

    np.testing.assert_allclose(frame['rmse'], [0.1, 0.1])
    np.testing.assert_allclose(frame['correlation'], [1.0, 1.0])
    assert (frame['flag'] == '').all()


def test_constant_truth_across_areas_is_flagged():
    truth_probs = np.array([[[0.5, 0.2], [0.5, 0.8]], [[0.5, 0.4], [0.5, 0.6]]])
    estimate_probs = np.array([[[0.4, 0.2], [0.6, 0.8]], [[0.6, 0.4], [0.4, 0.6]]])
    counts = np.full((2, 2), 50)
    frame = rmse_and_correlation(_areas(estimate_probs, counts), _areas(truth_probs, counts))
    assert frame.loc['A', 'flag'] == 'constant'
    assert np.isnan(frame.loc['A', 'correlation'])
    assert frame.loc['B', 'correlation'] == pytest.approx(1.0)


def test_races_below_the_minimum_cell_size_are_flagged():
    truth = _areas([[[0.5, 0.5], [0.5, 0.5]], [[0.2, 0.9], [0.8, 0.1]]], [[10, 3], [10, 3]])
    frame = rmse_and_correlation(truth, truth, min_cell=5)
    assert frame.loc['B', 'flag'] == 'small_cell'
    assert np.isnan(frame.loc['B', 'rmse'])
    assert frame.loc['A', 'rmse'] == 0.0


def test_true_race_weights_give_the_ground_truth_tables():
    records = make_records(surname=['S'] * 4, geo={'tract': ['T1', 'T1', 'T2', 'T2']},
                           outcome=['yes', 'no', 'yes', 'yes'], true_race=['A', 'A', 'B', 'A'])
    tables = area_tables_from_weights(records, true_race_weights(records, ('A', 'B')), ('A', 'B'))

    assert tables.areas == ('T1', 'T2')
    np.testing.assert_allclose(tables.probs[0, :, 0], [0.5, 0.5])
    assert np.isnan(tables.probs[0, :, 1]).all()
    np.testing.assert_allclose(tables.counts, [[2, 0], [1, 1]])


def test_area_tables_from_a_fit_cover_every_geo(small_sample, saturated_fit):
    tables = area_tables_from_fit(saturated_fit)
    assert set(tables.areas) == set(small_sample.records.geo['tract'])
    assert tables.probs.shape[1:] == (3, 3)


# ============================================
# RACE PREDICTION
# ============================================
def test_log_score_is_zero_for_perfect_predictions():
    probs = _probs([[1.0, 0.0], [0.0, 1.0]])
    assert log_score(probs, ['A', 'B']) == 0.0
    assert map_accuracy(probs, ['A', 'B']) == 1.0


def test_log_score_floors_zero_probabilities():
    probs = _probs([[1.0, 0.0], [0.5, 0.5]])
    assert log_score(probs, ['B', 'A']) == pytest.approx(0.5 * (np.log(1e-12) + np.log(0.5)))


def test_uniform_predictions_score_log_one_half():
    probs = _probs([[0.5, 0.5]] * 4)
    assert log_score(probs, ['A', 'B', 'A', 'B']) == pytest.approx(np.log(0.5))
    assert map_accuracy(probs, ['A', 'B', 'A', 'B']) == 0.5


def test_auc_extremes_and_ties():
    probs = _probs([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]])
    np.testing.assert_allclose(roc_auc(probs, ['A', 'A', 'B', 'B']), [1.0, 1.0])
    np.testing.assert_allclose(roc_auc(probs, ['B', 'B', 'A', 'A']), [0.0, 0.0])
    tied = _probs([[0.5, 0.5]] * 4)
    np.testing.assert_allclose(roc_auc(tied, ['A', 'B', 'A', 'B']), [0.5, 0.5])


def test_auc_is_undefined_for_absent_races():
    probs = _probs([[0.9, 0.1], [0.8, 0.2]])
    assert np.isnan(roc_auc(probs, ['A', 'A'])).all()


def test_unknown_true_races_are_rejected():
    with pytest.raises(ValidationError):
        log_score(_probs([[0.5, 0.5]]), ['Z'])


# ============================================
# REPORTS
# ============================================
def test_reports_stack_into_one_table():
    truth = _estimate([[0.3, 0.6], [0.7, 0.4]])
    estimate = _estimate([[0.3, np.nan], [0.7, np.nan]])
    frame = reports_frame([
        scalar_report('weighting.tv', tv_distance(estimate, truth)),
        series_report('weighting.tv_within_race', tv_within_race(estimate, truth)),
    ])

    assert list(frame.columns) == ['metric', 'scope', 'key', 'value', 'flag']
    assert frame['key'].tolist() == ['all', 'A', 'B']
    assert frame['flag'].tolist() == ['undefined', '', 'undefined']
    assert frame['scope'].tolist() == ['overall', 'per-race', 'per-race']

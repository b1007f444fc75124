import numpy as np
import pydantic
import pytest
from scipy import optimize, stats

from birdie.middleware.error_handler import ValidationError
from birdie.models.outcome import OutcomeModelSpec
from birdie.models.records import CellIndex
from birdie.outcome_models import (
    build_outcome_model,
    dirichlet_log_density,
    dirichlet_map,
    m_step_mixed,
    m_step_pooling,
    m_step_saturated,
)


def _cells():
    keys = (('tract', 'G1', 'X0'), ('tract', 'G1', 'X1'), ('tract', 'G2', 'X0'), ('tract', 'G2', 'X1'))
    return CellIndex(codes=np.arange(4), keys=keys)


# ============================================
# DIRICHLET
# ============================================
def test_flat_prior_map_is_the_normalized_counts():
    theta, degenerate = dirichlet_map([[2.0, 6.0], [1.0, 3.0]], [1.0, 1.0])
    np.testing.assert_allclose(theta, [[0.25, 0.75], [0.25, 0.75]])
    assert not degenerate.any()


def test_concentration_below_one_clips_at_zero():
    theta, _ = dirichlet_map([0.0, 2.0, 2.0], [0.5, 0.5, 0.5])
    np.testing.assert_allclose(theta, [0.0, 0.5, 0.5])


def test_vectors_without_weight_take_the_prior_mode():
    theta, degenerate = dirichlet_map([[0.0, 0.0, 0.0]], [3.0, 1.0, 1.0])
    np.testing.assert_allclose(theta, [[1.0, 0.0, 0.0]])
    assert degenerate.tolist() == [True]

    theta, _ = dirichlet_map([[0.0, 0.0]], [1.0, 1.0])
    np.testing.assert_allclose(theta, [[0.5, 0.5]])


def test_log_density_matches_scipy():
    theta = np.array([0.2, 0.3, 0.5])
    alpha = np.array([2.0, 1.5, 3.0])
    assert dirichlet_log_density(theta, alpha) == pytest.approx(stats.dirichlet.logpdf(theta, alpha))


def test_pooling_sums_over_cells_and_saturated_does_not():
    spec = OutcomeModelSpec(kind='complete_pooling')
    suffstats = np.array([[[1.0, 3.0], [3.0, 1.0]]])

    pooled, _ = m_step_pooling(suffstats, spec)
    saturated, _ = m_step_saturated(suffstats, spec.model_copy(update={'kind': 'saturated'}))
    np.testing.assert_allclose(pooled, [[0.5, 0.5]])
    np.testing.assert_allclose(saturated, [[[0.25, 0.75], [0.75, 0.25]]])


# ============================================
# SPECIFICATION
# ============================================
def test_spec_accepts_short_kind_names():
    assert OutcomeModelSpec(kind='pooling').kind == 'complete_pooling'
    assert OutcomeModelSpec(kind='mixed').kind == 'mixed_effects'


@pytest.mark.parametrize('fields', [{'kind': 'hierarchical'}, {'alpha': 0.0}, {'alpha': [1.0, -1.0]},
                                    {'fixed_effect_sd': 0.0}, {'intercept_scale': -1.0}])
def test_spec_rejects_invalid_priors(fields):
    with pytest.raises(pydantic.ValidationError):
        OutcomeModelSpec(**fields)


def test_alpha_vector_length_must_match_outcomes():
    spec = OutcomeModelSpec(alpha=[1.0, 2.0])
    np.testing.assert_allclose(spec.alpha_vector(2), [1.0, 2.0])
    with pytest.raises(ValidationError):
        build_outcome_model(spec, _cells(), 2, 3)


# ============================================
# MIXED EFFECTS
# ============================================
@pytest.mark.parametrize('intercept_scale', [None, 0.5, 0.0])
def test_mixed_gradient_matches_finite_differences(rng, intercept_scale):
    spec = OutcomeModelSpec(kind='mixed_effects', intercept_scale=intercept_scale)
    model = build_outcome_model(spec, _cells(), 2, 3)
    counts = rng.uniform(0.5, 20.0, size=(4, 3))
    params = rng.normal(scale=0.3, size=model.n_params)

    def value(p):
        return model.objective(p, counts)[0]

    def gradient(p):
        return model.objective(p, counts)[1]

    error = optimize.check_grad(value, gradient, params, epsilon=1e-7)
    assert error < 1e-4 * (1.0 + np.linalg.norm(gradient(params)))


def test_mixed_parameter_count_follows_the_intercept_scale():
    cells = _cells()
    estimated = build_outcome_model(OutcomeModelSpec(kind='mixed'), cells, 2, 3)
    fixed = build_outcome_model(OutcomeModelSpec(kind='mixed', intercept_scale=0.5), cells, 2, 3)
    none = build_outcome_model(OutcomeModelSpec(kind='mixed', intercept_scale=0.0), cells, 2, 3)

    # intercept + one covariate dummy, two geos, two free outcomes
    assert none.n_params == 2 * 2
    assert fixed.n_params == 2 * 2 + 2 * 2
    assert estimated.n_params == 2 * 2 + 2 * 2 + 2


def test_mixed_with_vague_priors_and_no_intercepts_matches_cell_frequencies():
    spec = OutcomeModelSpec(kind='mixed', intercept_scale=0.0, fixed_effect_sd=1e3)
    suffstats = np.array([
        [[300.0, 100.0, 100.0], [50.0, 150.0, 300.0], [600.0, 200.0, 200.0], [100.0, 300.0, 600.0]],
        [[100.0, 100.0, 300.0], [200.0, 200.0, 100.0], [200.0, 200.0, 600.0], [400.0, 400.0, 200.0]],
    ])
    _, table = m_step_mixed(suffstats, spec, _cells())

    by_cov = suffstats[:, [0, 2], :].sum(axis=1), suffstats[:, [1, 3], :].sum(axis=1)
    for cells, totals in zip(([0, 2], [1, 3]), by_cov):
        expected = totals / totals.sum(axis=1, keepdims=True)
        for c in cells:
            np.testing.assert_allclose(table[:, c, :], expected, atol=1e-4)


def test_model_m_step_runs_the_mixed_m_step():
    spec = OutcomeModelSpec(kind='mixed', intercept_scale=0.0)
    suffstats = np.array([
        [[30.0, 10.0, 10.0], [5.0, 15.0, 30.0], [60.0, 20.0, 20.0], [10.0, 30.0, 60.0]],
        [[10.0, 10.0, 30.0], [20.0, 20.0, 10.0], [20.0, 20.0, 60.0], [40.0, 40.0, 20.0]],
    ])
    model = build_outcome_model(spec, _cells(), 2, 3)
    theta, table = m_step_mixed(suffstats, spec, _cells())

    np.testing.assert_allclose(model.m_step(suffstats), theta)
    np.testing.assert_allclose(model.cell_table(theta), table)


def test_group_covariates_must_cover_every_geo():
    spec = OutcomeModelSpec(kind='mixed', group_covariates={'G1': [0.5]})
    with pytest.raises(ValidationError, match='group covariates'):
        build_outcome_model(spec, _cells(), 2, 3)


def test_group_covariates_extend_the_design():
    spec = OutcomeModelSpec(kind='mixed', intercept_scale=0.0, group_covariates={'G1': [0.5], 'G2': [-0.5]})
    model = build_outcome_model(spec, _cells(), 2, 3)
    np.testing.assert_allclose(model.design[:, -1], [0.5, 0.5, -0.5, -0.5])
    assert model.n_fixed == 3


def test_mixed_tables_are_distributions(rng):
    model = build_outcome_model(OutcomeModelSpec(kind='mixed'), _cells(), 2, 3)
    theta = rng.normal(size=(2, model.n_params))
    table = model.cell_table(theta)
    assert table.shape == (2, 4, 3)
    np.testing.assert_allclose(table.sum(axis=2), 1.0)
    assert np.isfinite(model.log_prior(theta))

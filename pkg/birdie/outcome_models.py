"""
BIRDiE outcome models
Complete pooling, saturated and mixed-effects M-steps on sufficient statistics
"""

import logging

import numpy as np
from scipy import optimize, special, stats

from birdie.config.constants import DEFAULTS, ERROR_MESSAGES
from birdie.middleware.error_handler import ConvergenceError, ValidationError
from birdie.models.outcome import OutcomeModelSpec
from birdie.models.records import CellIndex
from birdie.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

# Extrapolated simplex points below this are rejected, not clipped
NEGATIVE_TOL = 1e-12


# ============================================
# DIRICHLET MAP
# ============================================
def dirichlet_map(counts, alpha):
    """
    Posterior mode of Dirichlet(alpha) given weighted counts along the last axis

    Args:
        counts: (..., K) weighted counts
        alpha: Length-K concentration

    Returns:
        Tuple of (theta with the shape of counts, degenerate mask over the
        leading axes); degenerate vectors (no weight) take the prior mode, or
        the uniform vector when the prior has no mode
    """
    counts = np.asarray(counts, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    n_outcomes = counts.shape[-1]
    degenerate = counts.sum(axis=-1) <= 0

    numerator = np.clip(alpha - 1.0 + counts, 0.0, None)
    total = numerator.sum(axis=-1, keepdims=True)
    theta = np.divide(numerator, total, out=np.full(counts.shape, 1.0 / n_outcomes), where=total > 0)

    prior_mode = np.clip(alpha - 1.0, 0.0, None)
    if prior_mode.sum() > 0:
        theta[degenerate] = prior_mode / prior_mode.sum()
    else:
        theta[degenerate] = 1.0 / n_outcomes
    return theta, degenerate


def dirichlet_log_density(theta, alpha):
    """Sum of Dirichlet(alpha) log densities over the leading axes of theta"""
    theta = np.asarray(theta, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), theta.shape)
    log_norm = special.gammaln(alpha.sum(axis=-1)) - special.gammaln(alpha).sum(axis=-1)
    return float(np.sum(log_norm + special.xlogy(alpha - 1.0, theta).sum(axis=-1)))


def m_step_pooling(suffstats, spec: OutcomeModelSpec):
    """
    Complete-pooling M-step: one outcome distribution per race

    Args:
        suffstats: races x cells x outcomes weight totals
        spec: OutcomeModelSpec

    Returns:
        Tuple of (races x outcomes theta, degenerate mask per race)
    """
    suffstats = np.asarray(suffstats, dtype=float)
    return dirichlet_map(suffstats.sum(axis=1), spec.alpha_vector(suffstats.shape[-1]))


def m_step_saturated(suffstats, spec: OutcomeModelSpec):
    """
    Saturated M-step: one outcome distribution per race and cell

    Returns:
        Tuple of (races x cells x outcomes theta, races x cells degenerate mask)
    """
    suffstats = np.asarray(suffstats, dtype=float)
    return dirichlet_map(suffstats, spec.alpha_vector(suffstats.shape[-1]))


def _simplex_from_vector(vector, shape):
    values = np.asarray(vector, dtype=float).reshape(shape)
    if not np.all(np.isfinite(values)) or values.min(initial=0.0) < -NEGATIVE_TOL:
        return None
    values = np.clip(values, 0.0, None)
    total = values.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        return None
    return values / total


# ============================================
# MODEL OBJECTS
# ============================================
class OutcomeModel:
    """
    Interface the EM driver and accelerators work against

    Subclasses expose theta as a flat vector so extrapolation can act on it.
    """
    kind = ''

    def __init__(self, spec: OutcomeModelSpec, cells: CellIndex, n_races, n_outcomes, threads=None):
        self.spec = spec
        self.cells = cells
        self.n_races = n_races
        self.n_outcomes = n_outcomes
        self.n_cells = cells.n_cells
        self.threads = threads
        self.alpha = spec.alpha_vector(n_outcomes)
        self.flags = {}

    def init_theta(self):
        raise NotImplementedError

    def cell_table(self, theta):
        """races x cells x outcomes Pr(Y | R, cell)"""
        raise NotImplementedError

    def m_step(self, suffstats, warm=None):
        raise NotImplementedError

    def log_prior(self, theta):
        raise NotImplementedError

    def to_vector(self, theta):
        return np.asarray(theta, dtype=float).ravel().copy()

    def from_vector(self, vector):
        """Theta from a flat vector, or None when the vector is not a valid parameter"""
        raise NotImplementedError


class CompletePoolingModel(OutcomeModel):
    """Pr(Y | R) shared by every cell"""
    kind = 'complete_pooling'

    def init_theta(self):
        return np.full((self.n_races, self.n_outcomes), 1.0 / self.n_outcomes)

    def cell_table(self, theta):
        return np.broadcast_to(theta[:, None, :], (self.n_races, self.n_cells, self.n_outcomes))

    def m_step(self, suffstats, warm=None):
        theta, degenerate = m_step_pooling(suffstats, self.spec)
        self.flags = {'degenerate_races': np.flatnonzero(degenerate).tolist()}
        return theta

    def log_prior(self, theta):
        return dirichlet_log_density(theta, self.alpha)

    def from_vector(self, vector):
        return _simplex_from_vector(vector, (self.n_races, self.n_outcomes))


class SaturatedModel(OutcomeModel):
    """Separate Pr(Y | R, G, X) per cell"""
    kind = 'saturated'

    def init_theta(self):
        return np.full((self.n_races, self.n_cells, self.n_outcomes), 1.0 / self.n_outcomes)

    def cell_table(self, theta):
        return theta

    def m_step(self, suffstats, warm=None):
        theta, degenerate = m_step_saturated(suffstats, self.spec)
        self.flags = {'empty_cells': int(degenerate.sum())}
        return theta

    def log_prior(self, theta):
        return dirichlet_log_density(theta, self.alpha)

    def from_vector(self, vector):
        return _simplex_from_vector(vector, (self.n_races, self.n_cells, self.n_outcomes))


class MixedEffectsModel(OutcomeModel):
    """
    Multinomial logit with geo random intercepts

    For race r, cell c and non-reference outcome y:
        eta[c, y] = W[c] . beta[:, y] + phi[y] * z[geo(c), y]
    with the first outcome level as reference (eta = 0), beta ~ N(0, sd^2),
    z ~ N(0, 1) and phi ~ Gamma(shape, rate). Parameters per race are packed
    as [beta, z, log phi]; z and log phi are absent when the intercept scale
    is fixed at 0, log phi is absent when the scale is fixed.
    """
    kind = 'mixed_effects'

    def __init__(self, spec, cells, n_races, n_outcomes, threads=None):
        super().__init__(spec, cells, n_races, n_outcomes, threads)
        self.geo_codes, self.geo_keys = cells.geo_codes()
        cov_codes, self.cov_levels = cells.cov_codes()
        self.n_geo = len(self.geo_keys)
        self.n_free = n_outcomes - 1

        columns = [np.ones(self.n_cells)]
        for level in range(1, len(self.cov_levels)):
            columns.append((cov_codes == level).astype(float))
        if spec.group_covariates:
            lookup = spec.group_covariates
            missing = [geo for _, geo in self.geo_keys if geo not in lookup]
            if missing:
                raise ValidationError(f'group covariates missing for geo cells: {missing[:5]}')
            group = np.array([lookup[self.geo_keys[g][1]] for g in self.geo_codes], dtype=float)
            columns.extend(group.reshape(self.n_cells, -1).T)
        self.design = np.column_stack(columns)
        self.n_fixed = self.design.shape[1]

        self.random = spec.intercept_scale is None or spec.intercept_scale > 0
        self.estimate_scale = spec.intercept_scale is None
        self.n_params = self.n_fixed * self.n_free
        if self.random:
            self.n_params += self.n_geo * self.n_free
        if self.estimate_scale:
            self.n_params += self.n_free

    # ----- packing -----
    def unpack(self, params):
        k = self.n_free
        beta = params[:self.n_fixed * k].reshape(self.n_fixed, k)
        offset = self.n_fixed * k
        if not self.random:
            return beta, None, None
        z = params[offset:offset + self.n_geo * k].reshape(self.n_geo, k)
        offset += self.n_geo * k
        if self.estimate_scale:
            phi = np.exp(params[offset:offset + k])
        else:
            phi = np.full(k, float(self.spec.intercept_scale))
        return beta, z, phi

    def _eta(self, params):
        beta, z, phi = self.unpack(params)
        eta = self.design @ beta
        if self.random:
            eta = eta + z[self.geo_codes] * phi
        return np.column_stack([np.zeros(self.n_cells), eta])

    def init_theta(self):
        theta = np.zeros((self.n_races, self.n_params))
        if self.estimate_scale:
            shape, rate = self.spec.intercept_scale_shape, self.spec.intercept_scale_rate
            mode = (shape - 1.0) / rate if shape > 1 else 1.0 / rate
            theta[:, -self.n_free:] = np.log(mode)
        return theta

    def cell_table(self, theta):
        if self.n_free == 0:
            return np.ones((self.n_races, self.n_cells, 1))
        return np.stack([special.softmax(self._eta(theta[r]), axis=1) for r in range(self.n_races)])

    def from_vector(self, vector):
        theta = np.asarray(vector, dtype=float).reshape(self.n_races, self.n_params)
        return theta if np.all(np.isfinite(theta)) else None

    # ----- objective -----
    def _race_log_prior(self, params):
        beta, z, phi = self.unpack(params)
        value = stats.norm.logpdf(beta, scale=self.spec.fixed_effect_sd).sum()
        if self.random:
            value += stats.norm.logpdf(z).sum()
            if self.estimate_scale:
                value += stats.gamma.logpdf(phi, a=self.spec.intercept_scale_shape,
                                            scale=1.0 / self.spec.intercept_scale_rate).sum()
        return value

    def log_prior(self, theta):
        if self.n_free == 0:
            return 0.0
        return float(sum(self._race_log_prior(theta[r]) for r in range(self.n_races)))

    def objective(self, params, counts):
        """
        Negative penalized log-likelihood and its gradient for one race

        Args:
            params: Packed parameters
            counts: cells x outcomes posterior weights

        Returns:
            Tuple of (value, gradient)
        """
        beta, z, phi = self.unpack(params)
        eta = self._eta(params)
        log_p = special.log_softmax(eta, axis=1)
        resid = counts[:, 1:] - counts.sum(axis=1, keepdims=True) * np.exp(log_p[:, 1:])

        sd2 = self.spec.fixed_effect_sd ** 2
        value = np.sum(counts * log_p) - 0.5 * np.sum(beta ** 2) / sd2
        grads = [(self.design.T @ resid - beta / sd2).ravel()]
        if self.random:
            grad_z = np.zeros_like(z)
            np.add.at(grad_z, self.geo_codes, resid * phi)
            grads.append((grad_z - z).ravel())
            value -= 0.5 * np.sum(z ** 2)
            if self.estimate_scale:
                shape, rate = self.spec.intercept_scale_shape, self.spec.intercept_scale_rate
                d_phi = np.sum(resid * z[self.geo_codes], axis=0)
                grads.append(phi * d_phi + (shape - 1.0) - rate * phi)
                value += np.sum((shape - 1.0) * np.log(phi) - rate * phi)
        return -value, -np.concatenate(grads)

    def _fit_race(self, counts, start):
        result = optimize.minimize(
            self.objective, start, args=(counts,), jac=True, method='L-BFGS-B',
            options={'maxiter': DEFAULTS['MIXED_MAX_INNER'], 'ftol': 1e-13, 'gtol': 1e-8},
        )
        if result.status == 1:
            raise ConvergenceError(ERROR_MESSAGES['MIXED_NOT_CONVERGED'], last_iterate=result.x)
        if result.status != 0:
            logger.debug(f'Mixed M-step stopped early: {result.message}')
        return result.x

    def m_step(self, suffstats, warm=None):
        theta, _ = m_step_mixed(suffstats, self.spec, self.cells, warm, self.threads, model=self)
        return theta


MODELS = {
    'complete_pooling': CompletePoolingModel,
    'saturated': SaturatedModel,
    'mixed_effects': MixedEffectsModel,
}


def build_outcome_model(spec: OutcomeModelSpec, cells: CellIndex, n_races, n_outcomes, threads=None):
    try:
        return MODELS[spec.kind](spec, cells, n_races, n_outcomes, threads)
    except ValueError as e:
        raise ValidationError(str(e))


def m_step_mixed(suffstats, spec: OutcomeModelSpec, cells: CellIndex, warm=None, threads=None,
                 model: MixedEffectsModel = None):
    """
    Mixed-effects M-step by MAP over fixed effects, random intercepts and scale

    Args:
        suffstats: races x cells x outcomes weight totals
        spec: OutcomeModelSpec (group covariates keyed by geo)
        cells: CellIndex the suffstats are laid out on
        warm: Starting parameters (races x packed)
        threads: Worker cap across races
        model: Existing MixedEffectsModel for these cells (built from spec otherwise)

    Returns:
        Tuple of (packed parameters, races x cells x outcomes probabilities)
    """
    suffstats = np.asarray(suffstats, dtype=float)
    if model is None:
        model = MixedEffectsModel(spec, cells, suffstats.shape[0], suffstats.shape[2], threads)
    if model.n_free == 0:
        theta = model.init_theta()
    else:
        warm = model.init_theta() if warm is None else warm
        theta = np.stack(parallel_map(lambda r: model._fit_race(suffstats[r], warm[r]), range(model.n_races),
                                      model.threads))
    return theta, model.cell_table(theta)

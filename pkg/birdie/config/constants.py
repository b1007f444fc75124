"""
Constants and enumerations for the disparity toolkit
"""

# Process exit codes
EXIT_CODES = {
    'INPUT_ERROR': 2,
    'NOT_CONVERGED': 3,
    'INTERNAL_ERROR': 1
}

# Error Messages
ERROR_MESSAGES = {
    # General
    'INTERNAL_ERROR': 'Internal error',
    'MISSING_COLUMNS': 'Missing required columns',
    'MISSING_FILE': 'Input file does not exist',

    # Census tables
    'NEGATIVE_PROBABILITY': 'negative probability',
    'COLUMN_MASS': 'column mass exceeds 1',
    'PRIOR_SUM': 'prior must sum to 1',
    'PRIOR_LENGTH': 'prior length does not match the race set',
    'PRIOR_ZERO': 'prior has no positive mass',
    'RACE_MISMATCH': 'race label set inconsistent across files',
    'UNKNOWN_LEVEL': 'geo level not available in census tables',

    # Records / probabilities
    'NOT_STOCHASTIC': 'probability rows must be nonnegative and sum to 1',
    'MISALIGNED': 'probability rows do not align with records',
    'MISSING_OUTCOME': 'records have no outcome column',
    'UNKNOWN_OUTCOME': 'outcome level not in the declared outcome set',
    'MISSING_COARSE_GEO': 'every record needs the coarsest geo level',
    'MISSING_TRUE_RACE': 'records have no true race column',
    'MISSING_EXTRA': 'records have no extra covariate column',

    # Estimation
    'BINARY_RACE_ONLY': 'bias formula is defined for two races only',
    'NO_IDENTIFIED_CELLS': 'no identified cells for race',
    'MISSING_Q_WEIGHTS': 'missing census weights for observed cell',
    'RANK_DEFICIENT': 'probability matrix is rank deficient',
    'JOINT_CAP': 'combined outcome has too many levels for joint estimation; use two_step',
    'TOO_FEW_DRAWS': 'need at least 10 posterior draws',
    'BOOTSTRAP_REPLICATES': 'bootstrap needs at least 2 replicates',
    'MIXED_NOT_CONVERGED': 'mixed-model M-step did not converge',
    'UNSUPPORTED_MODEL': 'operation not available for this outcome model',

    # Metrics
    'SUPPORT_MISMATCH': 'estimate and truth supports differ',
    'NO_AREAS': 'no area-race cells meet the minimum size'
}

# Estimators
METHODS = ['weighting', 'thresholding', 'ols', 'ols_poststrat', 'birdie']

MODEL_KINDS = ['complete_pooling', 'saturated', 'mixed_effects']

ACCEL_METHODS = ['none', 'squarem', 'anderson']

# Finest to coarsest
GEO_LEVELS = ['block', 'tract', 'zcta', 'county']

# Default values
DEFAULTS = {
    'TOL': 1e-8,
    'MAX_ITER': 1000,
    'ACCEL': 'squarem',
    'SEED': 20240601,
    'JOINT_CAP': 64,
    'MIN_CELL': 5,
    'LOG_SCORE_FLOOR': 1e-12,
    'CI_LEVEL': 0.90,
    'BOOTSTRAP_REPLICATES': 200,
    'BIAS_DRAWS': 200,
    'ALPHA': 1.0,
    'FIXED_EFFECT_SD': 1.0,
    'INTERCEPT_SCALE_SHAPE': 2.0,
    'INTERCEPT_SCALE_RATE': 10.0,
    'MIXED_MAX_INNER': 500,
    'ANDERSON_MEMORY': 5,
    'BLOCK_SIZE': 250_000,
    'UNMATCHED': 'prior'
}

# Reserved keys for residual mass rows
OTHER_SURNAME = 'OTHER'
OTHER_GEO = ('OTHER', '')
OTHER_GROUP = 'Other'

# Flags carried next to undefined values
FLAGS = {
    'OK': '',
    'UNDEFINED': 'undefined',
    'UNIDENTIFIED': 'unidentified',
    'DEGENERATE': 'degenerate',
    'CONSTANT': 'constant',
    'SMALL_CELL': 'small_cell'
}

# File names inside a run directory
FILE_NAMES = {
    'PRIOR': 'prior.csv',
    'SURNAME': 'surname_race.csv',
    'GEO': 'geo_race_{level}.csv',
    'RECORDS': 'records.csv',
    'PROBS': 'probs.csv',
    'UPDATED_PROBS': 'probs_updated.csv',
    'ESTIMATE': 'estimate.csv',
    'TRACE': 'trace.csv',
    'THETA': 'theta.csv',
    'TRUTH': 'truth.csv',
    'CONDITIONAL': 'conditional.csv',
    'CONDITIONAL_TRUTH': 'conditional_truth.csv',
    'BOOTSTRAP': 'bootstrap_cov.csv',
    'GROUPS': 'surname_groups.csv',
    'CORRELATION': 'residual_correlation.csv',
    'BOUND': 'bias_bound.csv',
    'CHANGES': 'group_refit_changes.csv',
    'EVAL': 'evaluation.csv',
    'MANIFEST': 'manifest.json'
}

RECORD_COLUMNS = ['id', 'surname', 'geo_block', 'geo_tract', 'geo_zcta', 'geo_county',
                  'cov', 'outcome', 'extra', 'true_race']

"""
Fixed-point acceleration for EM
Plain iteration, SQUAREM and Anderson mixing with a monotone safeguard
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from birdie.config.constants import ACCEL_METHODS, DEFAULTS
from birdie.middleware.error_handler import ValidationError

logger = logging.getLogger(__name__)

# update(x) returns (F(x), objective at x); project(x) returns a valid x or None
UpdateFn = Callable[[np.ndarray], Tuple[np.ndarray, float]]
ProjectFn = Callable[[np.ndarray], Optional[np.ndarray]]


@dataclass
class FixedPointResult:
    """
    Attributes:
        x: Last accepted iterate
        trace: Objective at every accepted iterate, starting with x0
        iterations: Accepted steps taken
        map_evaluations: Calls to the fixed-point map
        converged: Objective change fell below tol
        rejected: Extrapolations discarded by the safeguard
    """
    x: np.ndarray
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    map_evaluations: int = 0
    converged: bool = False
    rejected: int = 0


class _Counted:
    def __init__(self, update):
        self.update = update
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.update(x)


def _better(candidate, reference):
    return np.isfinite(candidate) and candidate >= reference


def plain_iteration(update: UpdateFn, project: ProjectFn, x0, tol, max_iter):
    """Unaccelerated EM: x <- F(x)"""
    update = _Counted(update)
    result = FixedPointResult(x=x0)
    x = x0
    fx, value = update(x)
    result.trace.append(value)
    for _ in range(max_iter):
        x = fx
        fx, new_value = update(x)
        result.trace.append(new_value)
        result.iterations += 1
        if abs(new_value - value) < tol:
            result.converged = True
            break
        value = new_value
    result.x, result.map_evaluations = x, update.calls
    return result


def squarem(update: UpdateFn, project: ProjectFn, x0, tol, max_iter):
    """
    Squared extrapolation with steplength -|r| / |v|, clamped at -1

    The extrapolated point is stabilized by one map evaluation and kept only
    when its objective is at least that of F(x); otherwise the plain two-step
    iterate F(F(x)) is taken. The objective at accepted iterates never falls.
    """
    update = _Counted(update)
    result = FixedPointResult(x=x0)
    x = x0
    x1, value = update(x)
    result.trace.append(value)
    for _ in range(max_iter):
        x2, value1 = update(x1)
        r = x1 - x
        v = x2 - x1 - r
        candidate = x2
        norm_v = np.linalg.norm(v)
        if norm_v > 0:
            step = min(-np.linalg.norm(r) / norm_v, -1.0)
            if step < -1.0:
                projected = project(x - 2.0 * step * r + step ** 2 * v)
                if projected is not None:
                    stabilized, value_p = update(projected)
                    if _better(value_p, value1) and project(stabilized) is not None:
                        candidate = stabilized
                    else:
                        result.rejected += 1
                else:
                    result.rejected += 1

        x = candidate
        x1, new_value = update(x)
        result.trace.append(new_value)
        result.iterations += 1
        if abs(new_value - value) < tol:
            result.converged = True
            break
        value = new_value
    result.x, result.map_evaluations = x, update.calls
    return result


def anderson(update: UpdateFn, project: ProjectFn, x0, tol, max_iter, memory=DEFAULTS['ANDERSON_MEMORY']):
    """
    Anderson mixing over the last `memory` residual differences

    A mixed point is kept only when its objective is at least that of the
    current iterate; otherwise a plain step is taken and the history reset.
    """
    update = _Counted(update)
    result = FixedPointResult(x=x0)
    x = x0
    fx, value = update(x)
    result.trace.append(value)
    dx_hist, df_hist = [], []
    previous = None
    for _ in range(max_iter):
        f = fx - x
        if previous is not None:
            dx_hist.append(x - previous[0])
            df_hist.append(f - previous[1])
            dx_hist, df_hist = dx_hist[-memory:], df_hist[-memory:]
        previous = (x, f)

        accepted = False
        if df_hist:
            d_f = np.column_stack(df_hist)
            d_x = np.column_stack(dx_hist)
            gamma, *_ = np.linalg.lstsq(d_f, f, rcond=None)
            mixed = project(fx - (d_x + d_f) @ gamma)
            if mixed is not None:
                f_mixed, value_mixed = update(mixed)
                if _better(value_mixed, value):
                    x_new, fx_new, new_value = mixed, f_mixed, value_mixed
                    accepted = True
            if not accepted:
                result.rejected += 1
                dx_hist, df_hist, previous = [], [], None
        if not accepted:
            x_new = fx
            fx_new, new_value = update(x_new)

        x, fx = x_new, fx_new
        result.trace.append(new_value)
        result.iterations += 1
        if abs(new_value - value) < tol:
            result.converged = True
            break
        value = new_value
    result.x, result.map_evaluations = x, update.calls
    return result


def run_fixed_point(update: UpdateFn, project: ProjectFn, x0, method=DEFAULTS['ACCEL'],
                    tol=DEFAULTS['TOL'], max_iter=DEFAULTS['MAX_ITER']):
    """
    Iterate a monotone fixed-point map to convergence

    Args:
        update: x -> (F(x), objective at x)
        project: x -> valid x or None
        x0: Starting vector
        method: 'none', 'squarem' or 'anderson'
        tol: Absolute objective change for convergence
        max_iter: Iteration cap

    Returns:
        FixedPointResult
    """
    if method not in ACCEL_METHODS:
        raise ValidationError(f'accel must be one of {ACCEL_METHODS}')
    if tol <= 0:
        raise ValidationError('tol must be positive')
    runner = {'none': plain_iteration, 'squarem': squarem, 'anderson': anderson}[method]
    result = runner(update, project, np.asarray(x0, dtype=float), tol, max_iter)
    if result.rejected:
        logger.debug(f'{method}: {result.rejected} extrapolations rejected')
    return result

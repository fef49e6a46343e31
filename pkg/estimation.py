"""
Fitting primitives: exponential envelopes for ringdowns and a single-scale
orthogonal distance regression for the measured-vs-simulated force comparison.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
import statsmodels.api as sm
from scipy import optimize
from sklearn.metrics import mean_squared_error

from errors import ConvergenceError, DomainError
from settings import thread_count

logger = logging.getLogger(__name__)

T = TypeVar("T")

FIT_TOLERANCE = 1e-12
MAX_FIT_EVALUATIONS = 100
NON_DECAYING_THRESHOLD = 1e-9
SINGULAR_CONDITION = 1e14


@dataclass(frozen=True)
class ExpFit:
    amplitude: float
    decay_time: float
    amplitude_stderr: float
    decay_time_stderr: float
    residual_rms: float
    decaying: bool = True
    stderr_available: bool = True

    @property
    def decay_rate(self) -> float:
        return 0.0 if math.isinf(self.decay_time) else 1.0 / self.decay_time


@dataclass(frozen=True)
class ScaleFit:
    scale: float
    scale_stderr: float
    residuals: np.ndarray

    @property
    def chi_squared(self) -> float:
        return float(np.sum(self.residuals ** 2))


def _as_float_array(name: str, values) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} contains non-finite values")
    return array


def _log_linear_guess(span_times: np.ndarray, envelope: np.ndarray,
                      weights: np.ndarray) -> np.ndarray:
    """(A, λ·span) from weighted least squares on log(envelope) of the positive points."""
    positive = envelope > 0
    if positive.sum() < 2:
        return np.array([float(np.mean(envelope)), 0.0])
    y = np.log(envelope[positive])
    design = sm.add_constant(span_times[positive], has_constant="add")
    # var(log y) ~ σ²/y²
    result = sm.WLS(y, design, weights=weights[positive] * envelope[positive] ** 2).fit()
    intercept, slope = result.params
    return np.array([math.exp(intercept), -slope])


def fit_exponential(times: Sequence[float], envelope: Sequence[float],
                    weights: Optional[Sequence[float]] = None) -> ExpFit:
    """
    Least-squares fit of A·e^(−t/τ).

    The log-envelope regression only seeds the fit; the refinement minimises the
    (weighted) residuals of the envelope itself. Times are shifted to start at
    zero and the rate is scaled by the record span internally, then mapped back.
    """
    t = _as_float_array("times", times)
    y = _as_float_array("envelope", envelope)
    if len(t) != len(y):
        raise DomainError("times and envelope differ in length")
    if len(t) < 3:
        raise DomainError("fit_exponential needs at least 3 points")
    if np.any(np.diff(t) <= 0):
        raise DomainError("times must be strictly increasing")
    w = np.ones_like(y) if weights is None else _as_float_array("weights", weights)
    if len(w) != len(y) or np.any(w <= 0):
        raise DomainError("weights must be positive and match the envelope length")

    t0 = t[0]
    span = t[-1] - t0
    u = (t - t0) / span
    root_w = np.sqrt(w)

    def residuals(params):
        return root_w * (params[0] * np.exp(-params[1] * u) - y)

    guess = _log_linear_guess(u, y, w)
    result = optimize.least_squares(residuals, guess, method="lm", x_scale="jac",
                                    ftol=FIT_TOLERANCE, xtol=FIT_TOLERANCE,
                                    gtol=FIT_TOLERANCE, max_nfev=MAX_FIT_EVALUATIONS * 3)
    if not result.success:
        raise ConvergenceError(f"Exponential fit did not converge: {result.message}")
    a_shifted, rate_span = result.x
    rate = rate_span / span

    dof = len(y) - 2
    # equilibrate columns so the conditioning test ignores the envelope units
    norms = np.linalg.norm(result.jac, axis=0)
    norms[norms == 0] = 1.0
    scaled = result.jac / norms
    jtj = scaled.T @ scaled
    stderr_available = True
    cov = np.full((2, 2), np.nan)
    if np.linalg.cond(jtj) > SINGULAR_CONDITION:
        stderr_available = False
        logger.warning("Exponential fit curvature is singular; standard errors unavailable")
    else:
        cov = np.linalg.inv(jtj) / np.outer(norms, norms) * (np.sum(result.fun ** 2) / dof)

    amplitude = a_shifted * math.exp(rate * t0)
    # gradient of amplitude wrt (A_shifted, λ·span)
    grad = np.array([math.exp(rate * t0), amplitude * t0 / span])
    amplitude_stderr = math.sqrt(max(grad @ cov @ grad, 0.0)) if stderr_available else math.nan

    decaying = bool(rate_span > NON_DECAYING_THRESHOLD)
    if rate == 0:
        decay_time, decay_time_stderr = math.inf, math.nan
    else:
        decay_time = 1.0 / rate
        decay_time_stderr = (abs(decay_time) * math.sqrt(max(cov[1, 1], 0.0)) / abs(rate_span)
                             if stderr_available else math.nan)
    if not decaying:
        logger.warning(f"Envelope is not decaying (rate*span={rate_span:.3e}); "
                       f"decay_time={decay_time:.4e} s")

    model = amplitude * np.exp(-rate * t)
    residual_rms = math.sqrt(mean_squared_error(y, model))
    logger.debug(f"Exponential fit A={amplitude:.6e}, tau={decay_time:.6e} s, "
                 f"rms={residual_rms:.3e}")
    return ExpFit(amplitude=amplitude, decay_time=decay_time,
                  amplitude_stderr=amplitude_stderr, decay_time_stderr=decay_time_stderr,
                  residual_rms=residual_rms, decaying=decaying,
                  stderr_available=stderr_available)


def _profile_terms(scale: float, x, y, sx2, sy2):
    r = y - scale * x
    d = sy2 + scale ** 2 * sx2
    return r, d


def _profile_chi2(scale: float, x, y, sx2, sy2) -> float:
    r, d = _profile_terms(scale, x, y, sx2, sy2)
    return float(np.sum(r ** 2 / d))


def _profile_gradient(scale: float, x, y, sx2, sy2) -> float:
    r, d = _profile_terms(scale, x, y, sx2, sy2)
    return float(np.sum(-2 * x * r / d - 2 * scale * sx2 * r ** 2 / d ** 2))


def _profile_curvature(scale: float, x, y, sx2, sy2) -> float:
    step = 1e-6 * max(abs(scale), 1e-12)
    return (_profile_gradient(scale + step, x, y, sx2, sy2)
            - _profile_gradient(scale - step, x, y, sx2, sy2)) / (2 * step)


def fit_scale_odr(x: Sequence[float], y: Sequence[float], sigma_x: Sequence[float],
                  sigma_y: Sequence[float]) -> ScaleFit:
    """
    Orthogonal distance regression of y = s·x with errors in both variables.

    For fixed s the optimal point corrections are closed form, which leaves the
    profile χ²(s) = Σ(y − s·x)²/(σy² + s²·σx²) to minimise in one dimension.
    The standard error is sqrt(2/χ''·χ²_min/(n − 1)); with a single point the
    unscaled sqrt(2/χ'') is reported.
    """
    x = _as_float_array("x", x)
    y = _as_float_array("y", y)
    sx = _as_float_array("sigma_x", sigma_x)
    sy = _as_float_array("sigma_y", sigma_y)
    if not len(x) == len(y) == len(sx) == len(sy) or len(x) < 1:
        raise DomainError("x, y, sigma_x and sigma_y must have the same non-zero length")
    if np.any(sx <= 0) or np.any(sy <= 0):
        raise DomainError("sigmas must be > 0")
    if np.all(x == 0):
        raise DomainError("All x are zero; the scale is undefined")

    sx2, sy2 = sx ** 2, sy ** 2
    guess = float(np.sum(x * y / sy2) / np.sum(x ** 2 / sy2))
    width = 0.1 * abs(guess) + 1e-12
    result = optimize.minimize_scalar(
        _profile_chi2, bracket=(guess, guess + width), args=(x, y, sx2, sy2),
        method="brent", options={"xtol": FIT_TOLERANCE, "maxiter": 500})
    if not result.success:
        raise ConvergenceError(f"ODR scale fit did not converge: {result.message}")
    scale = float(result.x)

    # Newton polish past Brent's absolute bracket floor
    for _ in range(2):
        curvature = _profile_curvature(scale, x, y, sx2, sy2)
        if curvature <= 0:
            raise ConvergenceError("ODR profile has no positive curvature at the optimum")
        scale -= _profile_gradient(scale, x, y, sx2, sy2) / curvature
    curvature = _profile_curvature(scale, x, y, sx2, sy2)
    chi2_min = _profile_chi2(scale, x, y, sx2, sy2)
    dof = len(x) - 1
    if dof == 0:
        logger.warning("Single-point ODR: stderr from the stated sigmas only")
        stderr = math.sqrt(2 / curvature)
    else:
        stderr = math.sqrt(2 / curvature * chi2_min / dof)

    r, d = _profile_terms(scale, x, y, sx2, sy2)
    logger.info(f"ODR scale={scale:.4f} +/- {stderr:.4f} over {len(x)} points")
    return ScaleFit(scale=scale, scale_stderr=stderr, residuals=r / np.sqrt(d))


def monte_carlo(fn: Callable[[int], T], seeds: Iterable[int],
                threads: Optional[int] = None) -> List[T]:
    """Map a seeded function over seeds in a thread pool; results follow seed order."""
    workers = threads if threads is not None else thread_count()
    seeds = list(seeds)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(fn, seeds))
    logger.info(f"Monte Carlo: {len(seeds)} runs on {workers} workers")
    return results

"""Differentially private lift estimate and confidence interval.

Clear-text side of the release: sensitivities, zCDP Gaussian calibration,
the critical value, the CI width, the cut-and-choose noise vectors and
their distribution check, and an exact plaintext oracle of the whole
estimator for testing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from privlift.errors import PreflightError
from privlift.group import normalize_identifier
from privlift.rand import Prg

log = logging.getLogger(__name__)

FRAC_BITS = 16
GRID = 2.0**-FRAC_BITS
KS_SIGNIFICANCE = 0.001
BOUND_SIGMAS = 8.0
MIN_KS_SIGMA = 2.0**-8  # below this the 2^-16 grid distorts the KS statistic
DEFAULT_K = 64


@dataclass(frozen=True)
class DPParams:
    r_bound: int
    rho1: float
    rho2: float
    alpha: float = 0.05

    def __post_init__(self):
        if self.r_bound < 1:
            raise ValueError("R must be >= 1")
        if not (self.rho1 > 0 and self.rho2 > 0):
            raise ValueError("zCDP budgets must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class LiftEstimate:
    n_t: int
    n_c: int
    lift: float | None
    se: float | None
    delta_lift: float
    delta_se: float
    n_star: int
    z1: float | None
    z2: float | None
    dp_lift: float
    dp_se: float
    z_crit: float
    w: float
    ci_lower: float
    ci_upper: float
    aggregates: tuple[int, ...] | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _check_counts(n_t: int, n_c: int) -> None:
    if n_t < 2 or n_c < 2:
        raise PreflightError(f"each arm needs at least 2 users (n_t={n_t}, n_c={n_c})")


def sensitivity_lift(r_bound: float, n_t: int, n_c: int) -> float:
    _check_counts(n_t, n_c)
    return r_bound / n_t + r_bound / n_c


def sensitivity_se(r_bound: float, n_t: int, n_c: int) -> float:
    _check_counts(n_t, n_c)
    n = min(n_t, n_c)
    return math.sqrt((n - 1) / n**3) * r_bound


def gaussian_zcdp_sigma(delta: float, rho: float) -> float:
    if rho <= 0:
        raise ValueError("rho must be positive")
    if delta < 0:
        raise ValueError("sensitivity must be nonnegative")
    return delta / math.sqrt(2.0 * rho)


# Wichura, AS241 (PPND16)
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3, 1.3731693765509461125e4,
      4.5921953931549871457e4, 6.7265770927008700853e4, 3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4, 5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0, 3.64784832476320460504e0,
      1.27045825245236838258e0, 2.41780725177450611770e-1, 2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4, 1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0, 2.96560571828504891230e-1,
      2.65321895265761230930e-2, 1.24266094738807843860e-3, 2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7, 2.04426310338993978564e-15)


def _poly(coef: Sequence[float], x: float) -> float:
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF (AS241, about 1e-16 relative error)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = math.sqrt(-math.log(p if q < 0 else 1.0 - p))
    if r <= 5.0:
        r -= 1.6
        z = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        z = _poly(_E, r) / _poly(_F, r)
    return -z if q < 0 else z


def ci_width(dp_se: float, delta_lift: float, rho1: float, alpha: float) -> float:
    return math.sqrt(dp_se * dp_se + delta_lift * delta_lift / (2.0 * rho1)) * normal_quantile(1.0 - alpha / 2.0)


def noise_scales(params: DPParams, n_t: int, n_c: int) -> tuple[float, float]:
    """(sigma_1, sigma_2) for the lift and se noise."""
    s1 = gaussian_zcdp_sigma(sensitivity_lift(params.r_bound, n_t, n_c), params.rho1)
    s2 = gaussian_zcdp_sigma(sensitivity_se(params.r_bound, n_t, n_c), params.rho2)
    return s1, s2


# -- cut-and-choose noise ------------------------------------------------------


def quantize(x) -> np.ndarray:
    """Nearest point of the 2^-16 grid, as raw signed integers."""
    return np.rint(np.asarray(x, dtype=np.float64) * (1 << FRAC_BITS)).astype(np.int64)


def sample_noise_vector(k: int, sigma: float, rng: Prg) -> np.ndarray:
    """``k`` i.i.d. N(0, sigma^2) draws on the fixed-point grid (raw ints)."""
    if k < 2:
        raise ValueError("noise vectors need k >= 2")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return np.zeros(k, dtype=np.int64)
    return quantize(rng.normal(k) * sigma)


def check_noise_distribution(samples: Iterable[float], sigma: float, significance: float = KS_SIGNIFICANCE) -> bool:
    """Accept iff the revealed elements look like N(0, sigma^2) draws.

    Two conditions: every |e| <= 8 sigma (plus half a grid step) and a
    one-sample Kolmogorov-Smirnov test at ``significance``.
    """
    x = np.asarray(list(samples), dtype=np.float64)
    if sigma == 0:
        return bool(np.all(x == 0))
    if x.size == 0:
        return False
    if np.any(np.abs(x) > BOUND_SIGMAS * sigma + GRID / 2):
        return False
    if sigma < MIN_KS_SIGMA:
        log.warning("sigma %.3g is too close to the fixed-point grid for a KS test; bound check only", sigma)
        return True
    return bool(stats.kstest(x, "norm", args=(0.0, sigma)).pvalue >= significance)


# -- plaintext estimator --------------------------------------------------------


def group_stats(values: Sequence[int]) -> tuple[int, Fraction, Fraction]:
    """(n, mean, unbiased variance) in exact rationals."""
    n = len(values)
    s = sum(values)
    q = sum(v * v for v in values)
    mean = Fraction(s, n)
    var = (Fraction(q) - Fraction(s * s, n)) / (n - 1)
    return n, mean, var


def release(
    lift: float, se: float, n_t: int, n_c: int, params: DPParams, z1: float, z2: float
) -> LiftEstimate:
    """Noise addition and CI for given pre-noise statistics."""
    d_lift = sensitivity_lift(params.r_bound, n_t, n_c)
    d_se = sensitivity_se(params.r_bound, n_t, n_c)
    dp_lift = lift + z1
    dp_se = se + z2
    w = ci_width(dp_se, d_lift, params.rho1, params.alpha)
    return LiftEstimate(
        n_t=n_t,
        n_c=n_c,
        lift=lift,
        se=se,
        delta_lift=d_lift,
        delta_se=d_se,
        n_star=min(n_t, n_c),
        z1=z1,
        z2=z2,
        dp_lift=dp_lift,
        dp_se=dp_se,
        z_crit=normal_quantile(1 - params.alpha / 2),
        w=w,
        ci_lower=dp_lift - w,
        ci_upper=dp_lift + w,
    )


def release_noisy(dp_lift: float, dp_se: float, n_t: int, n_c: int, params: DPParams) -> LiftEstimate:
    """CI from already-noised outputs; the pre-noise values stay unknown."""
    est = release(dp_lift, dp_se, n_t, n_c, params, 0.0, 0.0)
    est.lift = est.se = est.z1 = est.z2 = None
    return est


def clamp_outcomes(x: Iterable[int], r_bound: int) -> list[int]:
    y = [min(int(v), r_bound) for v in x]
    assert all(0 <= v <= r_bound for v in y)
    return y


def estimate_from_outcomes(
    test: Sequence[int], control: Sequence[int], params: DPParams, noise: tuple[float, float] | None = None,
    rng: Prg | None = None,
) -> LiftEstimate:
    """Full estimator on raw per-user outcomes.

    ``noise=(z1, z2)`` fixes the noise; otherwise it is drawn from ``rng``.
    """
    y_t = clamp_outcomes(test, params.r_bound)
    y_c = clamp_outcomes(control, params.r_bound)
    _check_counts(len(y_t), len(y_c))
    n_t, m_t, v_t = group_stats(y_t)
    n_c, m_c, v_c = group_stats(y_c)
    lift = m_t - m_c
    se = math.sqrt(v_t / n_t + v_c / n_c)
    if noise is None:
        s1, s2 = noise_scales(params, n_t, n_c)
        draws = (rng or Prg()).normal(2)
        noise = (float(draws[0]) * s1, float(draws[1]) * s2)
    est = release(float(lift), se, n_t, n_c, params, *noise)
    est.aggregates = (n_t, sum(y_t), sum(v * v for v in y_t), n_c, sum(y_c), sum(v * v for v in y_c))
    return est


def attributed_outcomes(publisher_rows, advertiser_rows) -> tuple[list[int], list[int]]:
    """Per publisher user, the summed value of conversions strictly after the opportunity.

    Rows are ``(id, opportunity_ts, test_flag)`` and ``(id, conv_ts, conv_value)``.
    Returns ``(test_outcomes, control_outcomes)``.
    """
    convs: dict[bytes, list[tuple[int, int]]] = {}
    for uid, ts, value in advertiser_rows:
        convs.setdefault(normalize_identifier(uid), []).append((int(ts), int(value)))
    test, control = [], []
    for uid, opp_ts, flag in publisher_rows:
        v = sum(val for ts, val in convs.get(normalize_identifier(uid), ()) if ts > int(opp_ts))
        (test if int(flag) else control).append(v)
    return test, control


def compute_lift_oracle(
    publisher_rows, advertiser_rows, params: DPParams, noise: tuple[float, float] | None = None,
    rng: Prg | None = None,
) -> LiftEstimate:
    """Plaintext run of the whole estimator on joined data (test and oracle use only)."""
    test, control = attributed_outcomes(publisher_rows, advertiser_rows)
    return estimate_from_outcomes(test, control, params, noise, rng)

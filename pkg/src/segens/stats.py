"""Binomial confidence intervals and p-values recovered from intervals.

Two interval constructions are provided and every result carries a
method tag, because published tables sometimes label symmetric
normal-approximation intervals as exact ones:

* ``wald_ci``: p_hat +/- z * sqrt(p_hat (1 - p_hat) / n), clamped to
  [0, 1], with z the standard-normal quantile for the level
  (1.959964 at 95%).
* ``clopper_pearson_ci``: the exact interval from beta-distribution
  quantiles, lower = BetaInv(alpha/2; k, n-k+1) and
  upper = BetaInv(1-alpha/2; k+1, n-k), with lower = 0 at k = 0 and
  upper = 1 at k = n. Fractional success counts are accepted so that
  proportion-like scores (a Dice score times n) can be fed directly.

The beta quantile is found by bisection on the regularized incomplete
beta function, which is evaluated with the standard continued-fraction
expansion.

``p_from_ci`` recovers a two-sided p-value from a 95% interval via
SE = (upper - lower) / (2 * 1.96), z = |estimate| / SE, and the
approximation p = exp(-0.717 z - 0.416 z^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

Z_95 = NormalDist().inv_cdf(0.975)


@dataclass(frozen=True)
class Interval:
    estimate: float
    lower: float
    upper: float
    level: float
    n: float
    method: str

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.estimate <= self.upper <= 1.0:
            raise ValueError(
                f"interval out of order: lower={self.lower}, "
                f"estimate={self.estimate}, upper={self.upper}")

    def to_dict(self):
        return {"estimate": self.estimate, "lower": self.lower,
                "upper": self.upper, "level": self.level, "n": self.n,
                "method": self.method}


def _check_level(level):
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")


def wald_ci(p_hat, n, level=0.95):
    _check_level(level)
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError(f"proportion must be in [0, 1], got {p_hat}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / n)
    return Interval(estimate=p_hat, lower=max(0.0, p_hat - half),
                    upper=min(1.0, p_hat + half), level=level, n=n,
                    method="wald")


# ---------------------------------------------------------------------------
# Regularized incomplete beta and its quantile

def _beta_cf(x, a, b):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def regularized_incomplete_beta(x, a, b):
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x)
                     - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(x, a, b) / a
    return 1.0 - front * _beta_cf(1.0 - x, b, a) / b


def beta_quantile(q, a, b):
    """Smallest x with I_x(a, b) >= q, by bisection."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level must be in [0, 1], got {q}")
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if regularized_incomplete_beta(mid, a, b) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def clopper_pearson_ci(successes, n, level=0.95):
    _check_level(level)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= successes <= n:
        raise ValueError(f"successes must be in [0, {n}], got {successes}")
    alpha = 1.0 - level
    if successes <= 0.0:
        lower = 0.0
    else:
        lower = beta_quantile(alpha / 2.0, successes, n - successes + 1.0)
    if successes >= n:
        upper = 1.0
    else:
        upper = beta_quantile(1.0 - alpha / 2.0, successes + 1.0, n - successes)
    return Interval(estimate=successes / n, lower=lower, upper=upper,
                    level=level, n=n, method="clopper-pearson")


# ---------------------------------------------------------------------------
# p-values from confidence intervals

def _p_from_z(z):
    return math.exp(-0.717 * z - 0.416 * z * z)


def p_from_ci(estimate, lower, upper):
    """Two-sided p-value for estimate != 0 given its 95% interval."""
    if upper <= lower:
        raise ValueError(
            f"interval must have positive width, got ({lower}, {upper})")
    se = (upper - lower) / (2.0 * 1.96)
    return _p_from_z(abs(estimate) / se)


def dice_difference_test(interval_a, interval_b):
    """p-value for a difference of two scores given their 95% intervals."""
    se_a = (interval_a.upper - interval_a.lower) / (2.0 * 1.96)
    se_b = (interval_b.upper - interval_b.lower) / (2.0 * 1.96)
    if se_a <= 0.0 or se_b <= 0.0:
        raise ValueError("both intervals must have positive width")
    se = math.hypot(se_a, se_b)
    return _p_from_z(abs(interval_a.estimate - interval_b.estimate) / se)

"""Regularized incomplete beta function, its inverse, and derived quantiles.

The prefix x^a (1-x)^b / B(a, b) is evaluated through Stirling remainders and
the binomial deviance ``bd0`` so that it keeps full relative precision when
``a`` and ``b`` are in the thousands (the regime of rank-based recall bounds).
"""

from __future__ import annotations

import math
from statistics import NormalDist

_MAXIT = 10_000
_EPS = 1e-16
_FPMIN = 1e-300
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    """An iterative numerical routine failed to converge."""


def _stirling_remainder(z: float) -> float:
    """lgamma(z) minus its Stirling main term (z - 1/2) ln z - z + ln(2 pi)/2."""
    if z > 15.0:
        z2 = z * z
        return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - (1.0 / 1680.0 - 1.0 / (1188.0 * z2)) / z2) / z2) / z2) / z
    return math.lgamma(z) - ((z - 0.5) * math.log(z) - z + _HALF_LOG_2PI)


def _bd0(x: float, m: float) -> float:
    """Deviance term x ln(x/m) + m - x, accurate when x is close to m."""
    if m == 0.0:
        return math.inf
    if abs(x - m) < 0.1 * (x + m):
        v = (x - m) / (x + m)
        s = (x - m) * v
        ej = 2.0 * x * v
        v2 = v * v
        j = 1
        while True:
            ej *= v2
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
            j += 1
    return x * math.log(x / m) + m - x


def log_beta_prefix(a: float, b: float, x: float) -> float:
    """ln( x^a (1-x)^b / B(a, b) ) for 0 < x < 1."""
    c = a + b
    return (
        -_bd0(a, x * c)
        - _bd0(b, (1.0 - x) * c)
        + 0.5 * math.log(a * b / c)
        - _HALF_LOG_2PI
        + _stirling_remainder(c)
        - _stirling_remainder(a)
        - _stirling_remainder(b)
    )


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise NumericalError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _check_shape(a: float, b: float) -> None:
    if not (a > 0.0 and b > 0.0) or math.isinf(a) or math.isinf(b):
        raise ValueError(f"beta shape parameters must be positive and finite, got a={a}, b={b}")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    _check_shape(a, b)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_beta_prefix(a, b, x)) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_beta_prefix(b, a, 1.0 - x)) * _betacf(b, a, 1.0 - x) / b


def beta_pdf(a: float, b: float, x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return math.exp(log_beta_prefix(a, b, x)) / (x * (1.0 - x))


def _initial_guess(p: float, a: float, b: float) -> float:
    if a >= 1.0 and b >= 1.0:
        pp = p if p < 0.5 else 1.0 - p
        t = math.sqrt(-2.0 * math.log(pp))
        z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        if p < 0.5:
            z = -z
        al = (z * z - 3.0) / 6.0
        h = 2.0 / (1.0 / (2.0 * a - 1.0 + 1e-300) + 1.0 / (2.0 * b - 1.0 + 1e-300))
        w = z * math.sqrt(max(al + h, 0.0)) / h - (1.0 / (2.0 * b - 1.0 + 1e-300) - 1.0 / (2.0 * a - 1.0 + 1e-300)) * (
            al + 5.0 / 6.0 - 2.0 / (3.0 * h)
        )
        w = max(min(2.0 * w, 700.0), -700.0)
        return a / (a + b * math.exp(w))
    lna = math.log(a / (a + b))
    lnb = math.log(b / (a + b))
    t = math.exp(a * lna) / a
    u = math.exp(b * lnb) / b
    w = t + u
    if p < t / w:
        return (a * w * p) ** (1.0 / a)
    return 1.0 - (b * w * (1.0 - p)) ** (1.0 / b)


def beta_inv_cdf(alpha: float, a: float, b: float, max_iter: int = 200) -> float:
    """Quantile of Beta(a, b): the x with I_x(a, b) = alpha.

    Newton iterations inside a shrinking bisection bracket; a Newton step that
    leaves the bracket is replaced by a bisection step. Round trips to 1e-10
    for shapes >= 0.5; smaller shapes can put the quantile closer to 0 or 1
    than double precision resolves.
    """
    _check_shape(a, b)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0 or alpha == 1.0:
        return alpha
    lo, hi = 0.0, 1.0
    x = min(max(_initial_guess(alpha, a, b), 1e-300), 1.0 - 1e-16)
    for _ in range(max_iter):
        f = reg_inc_beta(a, b, x) - alpha
        if f == 0.0:
            return x
        if f < 0.0:
            lo = x
        else:
            hi = x
        dens = beta_pdf(a, b, x)
        step = f / dens if dens > 1e-280 and math.isfinite(dens) else math.inf
        if abs(step) <= 4.0 * math.ulp(x):
            break
        x_new = x - step
        if not lo < x_new < hi:
            # geometric midpoint when the bracket spans many decades near zero
            if lo > 0.0 and hi / lo > 8.0:
                x_new = math.sqrt(lo * hi)
            elif lo == 0.0 and hi < 1e-3:
                x_new = hi * 1e-3
            else:
                x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 2e-16 * x or hi - lo <= 2e-16 * hi:
            x = x_new
            break
        x = x_new
    else:
        raise NumericalError(f"beta_inv_cdf did not converge (alpha={alpha}, a={a}, b={b})")
    resolution = 4.0 * beta_pdf(a, b, x) * math.ulp(x)
    if abs(reg_inc_beta(a, b, x) - alpha) > max(1e-10, resolution):
        raise NumericalError(f"beta_inv_cdf residual too large (alpha={alpha}, a={a}, b={b})")
    return x


def student_t_ppf(p: float, df: float) -> float:
    """Quantile of Student's t with ``df`` degrees of freedom.

    Uses P(T > t) = I_{df/(df+t^2)}(df/2, 1/2) / 2 for t > 0.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -student_t_ppf(1.0 - p, df)
    x = beta_inv_cdf(2.0 * (1.0 - p), 0.5 * df, 0.5)
    return math.sqrt(df * (1.0 - x) / x)


def normal_ppf(p: float) -> float:
    return NormalDist().inv_cdf(p)

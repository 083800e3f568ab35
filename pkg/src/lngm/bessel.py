"""Log-scale modified Bessel function of the second kind.

Everything downstream (GIG normalizers, moment ratios, collapsed eta
kernels) works with log K_nu(x), never K itself, so this module must stay
finite over extreme arguments where scipy's kve overflows.

Evaluation strategy:

* primary: ``log(kve(nu, x)) - x`` (exponentially scaled kernel);
* fallback for x <= 2 when kve overflows: ascending series around the
  leading small-argument term 0.5 * Gamma(nu) * (2/x)^nu, computed in log
  scale.  The second series of the K expansion is dropped: overflow of kve
  requires lgamma(nu) + nu*log(2/x) > ~709, which makes that term smaller
  than 1e-300 relative.
* fallback for x > 2 when kve overflows: Debye uniform asymptotic
  expansion in nu (overflow with x > 2 only happens for nu >~ 50, where
  seven terms give ~1e-13 accuracy on the log).
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, kve

# Coefficients of the Debye polynomials u_k(t) = t^k * sum_j c[j] t^(2j).
_DEBYE_U = (
    (1.0,),
    (3.0 / 24, -5.0 / 24),
    (81.0 / 1152, -462.0 / 1152, 385.0 / 1152),
    (30375.0 / 414720, -369603.0 / 414720, 765765.0 / 414720, -425425.0 / 414720),
    (4465125.0 / 39813120, -94121676.0 / 39813120, 349922430.0 / 39813120,
     -446185740.0 / 39813120, 185910725.0 / 39813120),
    (1519035525.0 / 6688604160, -49286948607.0 / 6688604160,
     284499769554.0 / 6688604160, -614135872350.0 / 6688604160,
     566098157625.0 / 6688604160, -188699385875.0 / 6688604160),
    (2757049477875.0 / 4815794995200, -127577298354750.0 / 4815794995200,
     1050760774457901.0 / 4815794995200, -3369032068261860.0 / 4815794995200,
     5104696716244125.0 / 4815794995200, -3685299006138750.0 / 4815794995200,
     1023694168371875.0 / 4815794995200),
)


def _log_k_series(nu: float, x: float) -> float:
    """Small-argument branch, valid when kve(nu, x) overflowed and x <= 2."""
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    for k in range(1, 400):
        denom = k * (k - nu)
        if denom == 0.0:
            break
        term *= q / denom
        total += term
        if abs(term) < 1e-18 * abs(total):
            break
    return gammaln(nu) - np.log(2.0) + nu * (np.log(2.0) - np.log(x)) + np.log(total)


def _log_k_debye(nu: float, x: float) -> float:
    """Uniform large-order branch; only reached for nu >~ 50."""
    z = x / nu
    r = np.hypot(1.0, z)
    eta = r + np.log(z / (1.0 + r))
    t = 1.0 / r
    s = 0.0
    for k, coeffs in enumerate(_DEBYE_U):
        acc = 0.0
        for c in reversed(coeffs):
            acc = acc * t * t + c
        s += (-1.0) ** k * acc * t**k / nu**k
    return 0.5 * np.log(np.pi / (2.0 * nu)) - nu * eta - 0.5 * np.log(r) + np.log(s)


def _fallback_scalar(nu: float, x: float) -> float:
    if x <= 2.0:
        return _log_k_series(nu, x)
    return _log_k_debye(nu, x)


def log_bessel_k(order, argument):
    """log K_order(argument), vectorized over both arguments.

    Never overflows; symmetric in the order.  Raises ``ValueError`` on
    non-positive or NaN arguments and non-finite orders.
    """
    nu = np.abs(np.asarray(order, dtype=float))
    x = np.asarray(argument, dtype=float)
    scalar = nu.ndim == 0 and x.ndim == 0
    nu, x = np.broadcast_arrays(nu, x)

    if np.any(np.isnan(x)) or np.any(np.isnan(nu)) or np.any(np.isinf(nu)):
        raise ValueError("log_bessel_k: order and argument must be finite, non-NaN")
    if np.any(x <= 0.0) or np.any(np.isinf(x)):
        raise ValueError("log_bessel_k: argument must be positive and finite")

    with np.errstate(over="ignore"):
        scaled = kve(nu, x)
    out = np.empty(np.shape(x), dtype=float)
    ok = np.isfinite(scaled) & (scaled > 0.0)
    out[ok] = np.log(scaled[ok]) - x[ok]
    if not np.all(ok):
        bad = np.argwhere(~ok)
        for idx in bad:
            key = tuple(idx)
            out[key] = _fallback_scalar(float(nu[key]), float(x[key]))
    if scalar:
        return float(out)
    return out


def log_bessel_k_ratio(order_num, order_den, argument):
    """log of K_{order_num}(x) / K_{order_den}(x), the moment-ratio kernel."""
    return log_bessel_k(order_num, argument) - log_bessel_k(order_den, argument)


def dlog_bessel_k_dorder(order, argument, step: float = 1e-5):
    """d/dnu log K_nu(x) by central difference (used for E[log X] of GIG)."""
    return (log_bessel_k(np.asarray(order) + step, argument)
            - log_bessel_k(np.asarray(order) - step, argument)) / (2.0 * step)

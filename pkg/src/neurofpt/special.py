"""Special functions used by the closed-form formulas.

Thin, range-checked wrappers around scipy.special. Target accuracy is 1e-10
relative on the parameter ranges the formulas need; the test suite pins this
against mpmath. Overflows are reported via SpecialFunctionOverflow rather
than silently clipped.
"""

from __future__ import annotations

import numpy as np
from scipy import special as sp

from .errors import SpecialFunctionOverflow

__all__ = [
    "erf", "erfc", "erfi", "norm_cdf", "norm_ppf", "gamma_fn", "gammaln",
    "kummer_phi", "pcf_d", "bessel_iv", "bessel_ive", "bessel_iv_ratio",
]

erf = sp.erf
erfc = sp.erfc
erfi = sp.erfi
norm_cdf = sp.ndtr
norm_ppf = sp.ndtri
gamma_fn = sp.gamma
gammaln = sp.gammaln

# below this argument the Bessel I_nu leading-order series is used (avoids
# the 0*inf ambiguity in density prefactors)
_BESSEL_SERIES_CUTOFF = 1e-8


def kummer_phi(a: float, c: float, z) -> float:
    """Confluent hypergeometric Phi(a, c; z) (Kummer's M)."""
    out = sp.hyp1f1(a, c, z)
    if not np.all(np.isfinite(out)):
        raise SpecialFunctionOverflow(
            f"Kummer Phi({a}, {c}; z) overflowed for z={z!r}")
    return out


def pcf_d(v: float, x: float) -> float:
    """Parabolic cylinder function D_v(x)."""
    val, _ = sp.pbdv(v, x)
    if not np.isfinite(val):
        raise SpecialFunctionOverflow(f"D_{v}({x}) is not finite")
    return val


def _small_z_leading(nu: float, z):
    """Leading-order I_nu(z) ~ (z/2)^nu / Gamma(nu+1) for z -> 0."""
    with np.errstate(divide="ignore"):
        return np.power(z / 2.0, nu) / sp.gamma(nu + 1.0)


def bessel_iv(nu: float, z):
    """Modified Bessel I_nu(z) with a series branch for tiny arguments."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _BESSEL_SERIES_CUTOFF
    out = np.where(small,
                   _small_z_leading(nu, np.where(small, z, 1.0)),
                   sp.iv(nu, np.where(small, 1.0, z)))
    if out.ndim == 0:
        return float(out)
    return out


def bessel_ive(nu: float, z):
    """Exponentially scaled I_nu(z) e^{-|z|}; series branch for tiny z."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _BESSEL_SERIES_CUTOFF
    out = np.where(small,
                   _small_z_leading(nu, np.where(small, z, 1.0)),
                   sp.ive(nu, np.where(small, 1.0, z)))
    if out.ndim == 0:
        return float(out)
    return out


def bessel_iv_ratio(nu: float, z):
    """Stable ratio I_nu(z) / I_{nu-1}(z) via the scaled forms."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _BESSEL_SERIES_CUTOFF
    zsafe = np.where(small, 1.0, z)
    ratio = sp.ive(nu, zsafe) / sp.ive(nu - 1.0, zsafe)
    # leading order: I_nu(z)/I_{nu-1}(z) ~ z / (2 nu) for z -> 0, nu > 0
    lead = np.where(small, z / (2.0 * nu) if nu > 0 else 0.0, 0.0)
    out = np.where(small, lead, ratio)
    if out.ndim == 0:
        return float(out)
    return out

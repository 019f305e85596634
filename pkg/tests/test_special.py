"""Special-function wrappers against an mpmath oracle (1e-10 relative)."""

import mpmath
import numpy as np
import pytest

from neurofpt import special as sp
from neurofpt.errors import SpecialFunctionOverflow

mpmath.mp.dps = 30
RTOL = 1e-10


@pytest.mark.parametrize("x", [-3.0, -0.5, 0.0, 0.7, 2.5, 6.0])
def test_erfc_matches_mpmath(x):
    assert sp.erfc(x) == pytest.approx(float(mpmath.erfc(x)), rel=RTOL)


@pytest.mark.parametrize("x", [0.1, 1.0, 2.0, 3.5])
def test_erfi_matches_mpmath(x):
    assert sp.erfi(x) == pytest.approx(float(mpmath.erfi(x)), rel=RTOL)


@pytest.mark.parametrize("a,c,z", [
    (0.5, 1.5, 0.3), (0.5, 1.5, 8.0), (2.0, 3.0, -4.0), (1.3, 0.7, 2.2),
])
def test_kummer_matches_mpmath(a, c, z):
    assert sp.kummer_phi(a, c, z) == pytest.approx(
        float(mpmath.hyp1f1(a, c, z)), rel=RTOL)


@pytest.mark.parametrize("v,x", [
    (-0.5, 1.0), (-2.3, 0.4), (-1.0, -1.5), (-4.2, 2.8), (0.0, 1.2),
])
def test_parabolic_cylinder_matches_mpmath(v, x):
    assert sp.pcf_d(v, x) == pytest.approx(float(mpmath.pcfd(v, x)), rel=RTOL)


@pytest.mark.parametrize("nu,z", [
    (0.5, 0.2), (1.0, 3.0), (2.7, 10.0), (-0.3, 1.5), (4.0, 80.0),
])
def test_bessel_iv_matches_mpmath(nu, z):
    assert sp.bessel_iv(nu, z) == pytest.approx(
        float(mpmath.besseli(nu, z)), rel=RTOL)


def test_bessel_small_argument_series_branch():
    nu = 1.5
    z = 1e-9        # below the series cutoff
    lead = (z / 2.0) ** nu / float(mpmath.gamma(nu + 1.0))
    assert sp.bessel_iv(nu, z) == pytest.approx(lead, rel=1e-8)
    assert sp.bessel_iv_ratio(1.0, 0.0) == 0.0


def test_bessel_ratio_large_argument_stable():
    # direct ratio overflows near z ~ 800; the scaled form must not
    val = sp.bessel_iv_ratio(1.0, 5000.0)
    assert 0.99 < val < 1.0


def test_kummer_overflow_reported():
    with pytest.raises(SpecialFunctionOverflow):
        sp.kummer_phi(1.0, 2.0, 1e6)

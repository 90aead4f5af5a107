import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manin_lab.arch import estimate_J, oscillatory_I, oscillatory_J, slab_schedule, slab_sigma_inf, tau_inf
from manin_lab.forms import BidegreeForm, random_form
from manin_lab.toric import build_fan

BILINEAR = BidegreeForm((2, 1, 1), 1, 1, (((0, 1, 0, 1), 1), ((1, 0, 1, 0), -1)))
WITH_Y = random_form(build_fan(3, 1, 2), 1, 1, 3, 2)


def sine_integral(x: float) -> float:
    terms = []
    k = 0
    term = x
    while abs(term) > 1e-18 or k < 5:
        terms.append(term / (2 * k + 1))
        term *= -x * x / ((2 * k + 2) * (2 * k + 3))
        k += 1
    return math.fsum(terms)


def bilinear_I(beta: float) -> float:
    if beta == 0:
        return 16.0
    return 4 * sine_integral(2 * math.pi * beta) ** 2 / (math.pi**2 * beta**2)


def test_I_at_zero_is_region_volume():
    assert oscillatory_I(BILINEAR, 0.0, 16).real == pytest.approx(16.0, abs=1e-12)
    # |y| <= |x| over the unit boxes: 8 * E max(|x0|,|x1|) * 4 = 64/3
    assert oscillatory_I(WITH_Y, 0.0, 64).real == pytest.approx(64 / 3, rel=1e-3)


@pytest.mark.parametrize("beta", [0.25, 0.5, 1.5, 3.0])
def test_I_matches_closed_form(beta):
    assert oscillatory_I(BILINEAR, beta, 64).real == pytest.approx(bilinear_I(beta), abs=2e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 6.0))
def test_I_conjugate_symmetry(beta):
    for form in (BILINEAR, WITH_Y):
        a = oscillatory_I(form, beta, 16)
        b = oscillatory_I(form, -beta, 16)
        assert a.real == pytest.approx(b.real, abs=1e-9)
        assert a.imag == pytest.approx(-b.imag, abs=1e-9)


def test_I_dimension_cap():
    big = random_form(build_fan(5, 1, 2), 1, 1, 2, 1)
    with pytest.raises(ValueError):
        oscillatory_I(big, 1.0, 8)
    with pytest.raises(ValueError):
        oscillatory_I(BILINEAR, 1.0, 4)


def test_J_examples():
    assert oscillatory_J(BILINEAR, 0, 8, 16) == 0.0
    j10 = oscillatory_J(BILINEAR, 10, 40, 32)
    j20 = oscillatory_J(BILINEAR, 20, 80, 32)
    assert abs(j20 - j10) < 0.1 * abs(j20)
    assert j20 == pytest.approx(16.0, abs=0.2)


def test_estimate_J_reports_error_indicator():
    est = estimate_J(BILINEAR, 20, 80, 32)
    assert est.stderr > 0
    assert est.truncation[0] == 20
    assert abs(est.value - 16.0) < 3 * est.stderr + 0.1


def test_slab_determinism_and_worker_invariance():
    a = slab_sigma_inf(BILINEAR, 1e-2, 10**5, 7)
    assert slab_sigma_inf(BILINEAR, 1e-2, 10**5, 7) == a
    for w in (2, 3):
        assert slab_sigma_inf(BILINEAR, 1e-2, 10**5, 7, workers=w) == a
    assert slab_sigma_inf(BILINEAR, 1e-2, 10**5, 8) != a


def test_slab_stderr_scaling():
    a = slab_sigma_inf(BILINEAR, 1e-2, 2 * 10**5, 3)
    b = slab_sigma_inf(BILINEAR, 1e-2, 8 * 10**5, 3)
    # four times the samples halves the standard error
    assert b.stderr / a.stderr == pytest.approx(0.5, rel=0.3)


def test_slab_symmetry():
    # swapping (x0, z2) with (x1, z3) maps F to -F and preserves the region
    swapped = BidegreeForm((2, 1, 1), 1, 1, (((1, 0, 1, 0), 1), ((0, 1, 0, 1), -1)))
    a = slab_sigma_inf(BILINEAR, 1e-2, 4 * 10**5, 11)
    b = slab_sigma_inf(swapped, 1e-2, 4 * 10**5, 12)
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)


def test_slab_rejects_bad_input():
    with pytest.raises(ValueError):
        slab_sigma_inf(BILINEAR, 0.0, 10**4, 1)
    with pytest.raises(ValueError):
        slab_sigma_inf(BILINEAR, 1e-2, 10, 1)


def test_slab_schedule_levels():
    rows = slab_schedule(BILINEAR, 1e-2, 10**5, 5)
    assert [r["eps"] for r in rows] == [1e-2, 5e-3, 2.5e-3]
    assert all(r["seed"] == 5 and r["samples"] == 10**5 for r in rows)


def test_tau_inf_is_exact_rescaling():
    # (beta1 beta2 / 4) sigma = 1/4 sigma for the bilinear instance
    assert tau_inf(BILINEAR, 16.0) == 4.0
    b1, b2 = WITH_Y.betas()
    assert tau_inf(WITH_Y, 3.0) == b1 * b2 * 3.0 / 4

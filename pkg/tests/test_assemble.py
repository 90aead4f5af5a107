import os
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manin_lab.assemble import check_hypotheses, end_to_end_report, peyre_constant, sigma_d
from manin_lab.config import ConfigError, parse_config
from manin_lab.toric import build_fan

P1P1 = build_fan(2, 1, 1)

TINY = {
    "n": 2, "r": 1, "m": 1, "d1": 1, "d2": 1,
    "form": {"monomials": [{"exponents": [1, 0, 1, 0], "coeff": 1}, {"exponents": [0, 1, 0, 1], "coeff": -1}]},
    "B_grid": {"values": [1, 2, 4, 8, 16, 32, 64]},
    "density": {"p_max": 3, "N_max": 1, "eps": 0.01, "samples": 20000, "seed": 5, "phi": 5.0, "beta_grid": 10, "quad_grid": 8},
}


def test_sigma_d_examples():
    assert sigma_d(2, Fraction(1, 2), 16, P1P1, 1) == 4
    assert sigma_d(1, Fraction(3, 4), 16, P1P1, 1) == 12
    assert sigma_d(3, Fraction(3, 4), 0, P1P1, 1) == 0
    assert isinstance(sigma_d(2, Fraction(1, 2), 16.0, P1P1, 1), float)
    with pytest.raises(ValueError):
        sigma_d(0, 1, 1, P1P1, 1)


def test_peyre_constant_example():
    pb = peyre_constant(16, [(2, Fraction(3, 4))], P1P1, 1, 1)
    assert pb.sigma_route1 == pb.sigma_route2 == 1.5
    assert pb.agree
    assert pb.alpha == 1 and pb.beta_cohom == 1
    assert pb.beta_factor == Fraction(1, 2)
    assert pb.tau_inf == 4.0


def test_peyre_constant_rejects_bad_input():
    with pytest.raises(ValueError):
        peyre_constant(16, [], P1P1, 1, 1)
    with pytest.raises(ValueError):
        peyre_constant(16, [(2, 1), (2, 1)], P1P1, 1, 1)


FANS = [((2, 1, 1), 1, 1), ((3, 1, 2), 1, 1), ((3, 1, 2), 2, 2), ((4, 2, 3), 1, 2), ((4, 1, 1), 1, 1)]


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(FANS),
    st.fractions(Fraction(1, 100), 100),
    st.lists(st.fractions(Fraction(1, 10), 2), min_size=1, max_size=4),
    st.integers(1, 9),
)
def test_routes_agree_and_scale_linearly(inst, J, sigmas, t):
    (n, r, m), d1, d2 = inst
    fan = build_fan(n, r, m)
    primes = [2, 3, 5, 7][: len(sigmas)]
    factors = list(zip(primes, sigmas))
    pb = peyre_constant(J, factors, fan, d1, d2)
    b1, b2 = fan.betas(d1, d2)
    assert pb.alpha * b1 * b2 == 1
    assert pb.agree and pb.sigma_route1 == pb.sigma_route2
    scaled = peyre_constant(J * t, factors, fan, d1, d2)
    assert Fraction(scaled.sigma_route1) == pytest.approx(float(Fraction(pb.sigma_route1) * t), rel=1e-15)


def test_check_hypotheses_tiny_instance_fails_with_reasons():
    diag = check_hypotheses(P1P1, 1, 1)
    assert not diag.applies
    assert any("d1 >= 2" in f for f in diag.failures)
    assert any("r >= 6 d1 - 3" in f for f in diag.failures)
    diag = check_hypotheses(build_fan(3, 1, 2), 2, 2)
    assert not diag.applies
    assert any("m_required" in f for f in diag.failures)


def test_check_hypotheses_large_instance():
    diag = check_hypotheses(build_fan(70, 9, 20), 2, 2)
    assert diag.K == pytest.approx((72 - 1e-6) / 4, abs=1e-12)
    assert diag.d_tilde == 2
    assert diag.r_ok
    assert diag.mu == 23 and diag.lam == 25
    assert diag.K1 == pytest.approx(24.5) and diag.K2 == pytest.approx(23.5)
    assert diag.m_required == pytest.approx(644.53, abs=0.01)
    assert not diag.applies
    assert check_hypotheses(build_fan(700, 9, 20), 2, 2).applies
    assert check_hypotheses(build_fan(140, 9, 20), 2, 1).applies


def test_check_hypotheses_dims_lower_K():
    a = check_hypotheses(build_fan(70, 9, 20), 2, 2)
    b = check_hypotheses(build_fan(70, 9, 20), 2, 2, dimV1=3, dimV2=5)
    assert b.K == pytest.approx(a.K - 5 / 4)
    assert b.K1 == pytest.approx(a.K1 - 3 / 2)
    assert b.K2 == pytest.approx(a.K2 - 5 / 2)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 3), st.integers(1, 2))
def test_threshold_within_stated_range(d1, d2):
    diag = check_hypotheses(build_fan(100, 15, 40), d1, d2)
    lo = 2 ** (d1 + d2)
    hi = 13 * d2 * (d1 + d2) * 2 ** (d1 + d2)
    assert lo <= diag.m_required <= hi


@settings(max_examples=12, deadline=None)
@given(st.integers(22, 900), st.integers(1, 400), st.sampled_from([(2, 1), (2, 2)]))
def test_applies_monotone_in_n(n, step, d):
    before = check_hypotheses(build_fan(n, 9, 20), *d).applies
    after = check_hypotheses(build_fan(n + step, 9, 20), *d).applies
    assert after or not before


def test_report_is_byte_identical(tmp_path):
    cfg = parse_config(TINY)
    a = end_to_end_report(cfg, str(tmp_path / "a"))
    b = end_to_end_report(cfg, str(tmp_path / "b"), workers=2)
    assert sorted(a) == ["constant", "counts", "densities_p", "density_inf", "report"]
    for key in a:
        with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
            assert fa.read() == fb.read(), key
    text = open(a["report"], encoding="utf-8").read()
    assert "applies=False" in text
    assert "sigma: route1=" in text
    assert "tolerances:" in text
    assert open(a["counts"]).read().splitlines()[:2] == ["B,count,raw_count,openset_id,cap_hit", "1,4,16,all,false"]


def test_missing_field_is_named():
    raw = {k: v for k, v in TINY.items() if k != "d2"}
    with pytest.raises(ConfigError, match="d2"):
        parse_config(raw)


def test_report_files_exist(tmp_path):
    paths = end_to_end_report(parse_config(TINY), str(tmp_path))
    assert all(os.path.getsize(p) > 0 for p in paths.values())

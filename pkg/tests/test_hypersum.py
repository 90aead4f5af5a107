import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manin_lab.counting import histogram_hyperbola
from manin_lab.forms import BidegreeForm
from manin_lab.hypersum import (
    SummationInstance,
    TableFunction,
    direct_sum,
    fit_BlogB,
    ones,
    scheme_sum,
    split_identity,
)

BILINEAR = BidegreeForm((2, 1, 1), 1, 1, (((1, 0, 1, 0), 1), ((0, 1, 0, 1), -1)))


def brute_sum(f, b1, b2, P):
    total = 0
    k = 1
    while k**b1 <= P:
        l = 1
        while k**b1 * l**b2 <= P:
            total += f(np.array([k]), np.array([l]))[0]
            l += 1
        k += 1
    return total


def l_is_one(k, l):
    return (l == 1).astype(np.int64)


def kl_weight(k, l):
    return (k * 3 + l) % 5


def tables():
    cells = st.tuples(st.integers(1, 30), st.integers(1, 30))
    return st.dictionaries(cells, st.integers(1, 9), max_size=40).map(TableFunction.from_dict)


# ---------------------------------------------------------------------------
# direct and split sums


def test_direct_sum_examples():
    assert direct_sum(SummationInstance(ones, 1, 1), 4) == 8
    assert direct_sum(SummationInstance(ones, 1, 1), Fraction(1, 2)) == 0
    assert direct_sum(SummationInstance(ones, 2, 1), 4) == 5
    assert direct_sum(SummationInstance(ones, 1, 1), Fraction(9, 2)) == 8


def test_split_examples():
    assert split_identity(SummationInstance(ones, 1, 1), 4) == (2, 2, 4)
    assert split_identity(SummationInstance(ones, 1, 1), 1) == (0, 0, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 3000), st.sampled_from([ones, l_is_one, kl_weight]))
def test_split_partitions_direct_sum(b1, b2, P, f):
    inst = SummationInstance(f, b1, b2)
    a, b, box = split_identity(inst, P)
    assert a + b + box == direct_sum(inst, P)
    assert min(a, b, box) >= 0
    if P <= 400:
        assert direct_sum(inst, P) == brute_sum(f, b1, b2, P)


@settings(max_examples=60, deadline=None)
@given(tables(), st.integers(1, 3), st.integers(1, 3), st.integers(1, 5000))
def test_split_partitions_table_sums(f, b1, b2, P):
    inst = SummationInstance(f, b1, b2)
    a, b, box = split_identity(inst, P)
    want = sum(v for k, l, v in f.table if k**b1 * l**b2 <= P)
    assert a + b + box == direct_sum(inst, P) == want


@settings(max_examples=40, deadline=None)
@given(tables(), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3000))
def test_direct_sum_transpose_symmetry(f, b1, b2, P):
    ft = TableFunction.from_dict({(l, k): v for k, l, v in f.table})
    assert direct_sum(SummationInstance(f, b1, b2), P) == direct_sum(SummationInstance(ft, b2, b1), P)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2000), st.integers(0, 500))
def test_direct_sum_monotone(b1, b2, P, extra):
    inst = SummationInstance(ones, b1, b2)
    assert direct_sum(inst, P) <= direct_sum(inst, P + extra)


# ---------------------------------------------------------------------------
# T1 / T2 scheme


@pytest.mark.parametrize("P", [16, 64, 256, 10**4])
def test_scheme_exact_for_ones(P):
    res = scheme_sum(SummationInstance(ones, 1, 1), P)
    assert res.exact
    assert res.T1 + res.T2 == res.sum_A
    assert res.total == direct_sum(SummationInstance(ones, 1, 1), P)
    assert list(res.boundaries) == sorted(res.boundaries)


@pytest.mark.parametrize("b1,b2,P", [(2, 1, 10**4), (1, 2, 10**4), (2, 3, 10**5)])
def test_scheme_exact_other_exponents(b1, b2, P):
    res = scheme_sum(SummationInstance(kl_weight, b1, b2), P)
    assert res.exact


def test_scheme_exact_on_histogram_table():
    P = 2000
    f = TableFunction.from_dict(histogram_hyperbola(BILINEAR, 1, P))
    res = scheme_sum(SummationInstance(f, 1, 1), P)
    assert res.exact
    assert res.total == sum(v for _, _, v in f.table)


def test_scheme_without_log_growth():
    # the sum is P, so the P log P coefficient decays like 1/log P
    inst = SummationInstance(l_is_one, 1, 1)
    c = [scheme_sum(inst, P).C_hat for P in (10**2, 10**4, 10**6)]
    assert c[0] > c[1] > c[2]
    assert c[2] < 0.1
    for C_hat, P in zip(c, (10**2, 10**4, 10**6)):
        assert 0.5 < C_hat * math.log(P) < 2


def test_scheme_rejects_bad_parameters():
    inst = SummationInstance(ones, 1, 1)
    with pytest.raises(ValueError):
        scheme_sum(inst, 256, J_steps=4)
    with pytest.raises(ValueError):
        scheme_sum(inst, 1)
    with pytest.raises(ValueError):
        scheme_sum(SummationInstance(ones, 1, 1, mu=math.nextafter(0.5, 0)), 2)


def test_instance_validation():
    assert SummationInstance(ones, 2, 3).mu == pytest.approx(1 / 12)
    with pytest.raises(ValueError):
        SummationInstance(ones, 0, 1)
    with pytest.raises(ValueError):
        SummationInstance(ones, 1, 1, d=0)
    with pytest.raises(ValueError):
        SummationInstance(ones, 2, 1, mu=0.25)


# ---------------------------------------------------------------------------
# tables


def test_table_csv_round_trip(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("k,l,value\n1,1,16\n2,3,5\n4,1,0\n3,2,1/2\n")
    f = TableFunction.from_csv(str(path))
    assert f.table == ((1, 1, 16), (2, 3, 5), (3, 2, Fraction(1, 2)))
    assert list(f(np.array([1, 2, 9]), np.array([1, 3, 9]))) == [16, 5, 0]


def test_table_rejects_negative_values():
    with pytest.raises(ValueError):
        TableFunction.from_dict({(1, 1): -1})


# ---------------------------------------------------------------------------
# fits


def test_fit_exact_models():
    Bs = np.geomspace(10, 1e5, 12)
    res = fit_BlogB([(b, 3 * b * math.log(b)) for b in Bs])
    assert res.C_hat == pytest.approx(3, abs=1e-9)
    assert res.C_hat_single == pytest.approx(3, abs=1e-9)
    res = fit_BlogB([(b, 3 * b * math.log(b) + 5 * b) for b in Bs])
    assert res.C_hat == pytest.approx(3, rel=1e-6)
    assert res.b == pytest.approx(5, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(-100, 100), st.floats(2, 100), st.integers(4, 20))
def test_fit_recovers_planted_constants(a, b, lo, points):
    Bs = np.geomspace(lo, lo * 1000, points)
    res = fit_BlogB([(x, a * x * math.log(x) + b * x) for x in Bs])
    assert res.C_hat == pytest.approx(a, rel=1e-6, abs=1e-9)


def test_fit_rejects_bad_grids():
    with pytest.raises(ValueError):
        fit_BlogB([(10, 1), (100, 2), (1000, 3)])
    with pytest.raises(ValueError):
        fit_BlogB([(1, 1), (10, 2), (100, 3), (1000, 4)])
    with pytest.raises(ValueError):
        fit_BlogB([(10, 1), (20, 2), (30, 3), (40, 4)])

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manin_lab.counting import (
    CapExhausted,
    Caps,
    CountSeries,
    admissible,
    count_box,
    count_moebius,
    count_moebius_series,
    count_N_dU,
    count_N_U,
    count_N_U_series,
    derived_x_bound,
    fiber_solutions,
    height,
    height_leq,
    height_monomial,
    histogram_h,
    histogram_hyperbola,
    openset_mask,
    sandwich,
)
from manin_lab.forms import BidegreeForm, TorsorPoint, evaluate, random_form, scale_x
from manin_lab.toric import build_fan

from oracles import brute_box, brute_height_d, brute_N_U, brute_points, grad_xy_nonzero, specialize_nonzero

BILINEAR = BidegreeForm((2, 1, 1), 1, 1, (((1, 0, 1, 0), 1), ((0, 1, 0, 1), -1)))

# (fan, d1, d2, seed): the instances the brute oracle covers
ORACLE_INSTANCES = [
    ((3, 1, 2), 2, 2, 1),
    ((3, 1, 2), 1, 1, 2),
    ((3, 1, 2), 1, 2, 3),
    ((3, 2, 2), 1, 1, 4),
    ((2, 1, 1), 1, 1, 5),
]


def oracle_form(inst):
    params, d1, d2, seed = inst
    return random_form(build_fan(*params), d1, d2, 3, seed)


def points(params, bound=6):
    n, r, m = params
    return st.tuples(
        st.lists(st.integers(-bound, bound), min_size=r + 1, max_size=r + 1).filter(any),
        st.lists(st.integers(-bound, bound), min_size=m - r, max_size=m - r),
        st.lists(st.integers(-bound, bound), min_size=n - m + 1, max_size=n - m + 1),
    ).map(lambda t: TorsorPoint(*t))


# ---------------------------------------------------------------------------
# heights


def test_height_examples():
    p = TorsorPoint((1, 2), (3,), (1, 1))
    assert height(p, 2, 2) == 9
    assert height_leq(p, 2, 2, 9)
    assert not height_leq(p, 2, 2, Fraction(899, 100))
    assert height(TorsorPoint((1, 0), (0,), (0, 1)), 2, 2) == 1
    assert not height_leq(TorsorPoint((1, 0), (), (0, 1)), 1, 1, Fraction(1, 2))


def test_height_monomial_examples():
    fan = build_fan(2, 1, 1)
    p = TorsorPoint((2, 1), (), (1, 3))
    # |x| |z| = 2 * 3
    assert height_monomial(p, fan, 1, 1) == 6
    assert height(p, 1, 1) == 6
    fan = build_fan(3, 1, 2)
    assert height_monomial(TorsorPoint((1, -1), (1,), (-1, 1)), fan, 1, 1) == 1


def test_height_routes_differ_when_beta1_below_beta2_with_y():
    # fan(3,1,2), (d1,d2) = (2,1): beta = (1,2), so |y|^2/|x| is not a section monomial
    fan = build_fan(3, 1, 2)
    assert fan.betas(2, 1) == (1, 2)
    p = TorsorPoint((1, 0), (2,), (1, 0))
    assert height(p, 1, 2) == 4
    assert height_monomial(p, fan, 2, 1) == 2
    p = TorsorPoint((1, 0), (2,), (0, 0))
    assert height(p, 1, 2) == 4
    assert height_monomial(p, fan, 2, 1) == 0


def test_admissible_examples():
    assert not admissible(TorsorPoint((2, 4), (1,), (1, 0)))
    assert admissible(TorsorPoint((1, 0), (), (0, 1)))
    assert not admissible(TorsorPoint((3, 5), (2,), (4, 6)))
    assert not admissible(TorsorPoint((1, 0), (0,), (0, 0)))


@pytest.mark.parametrize("params,d1,d2", [((2, 1, 1), 1, 1), ((3, 1, 2), 1, 1), ((3, 1, 2), 2, 2), ((3, 2, 2), 1, 1), ((3, 1, 1), 1, 1), ((4, 2, 3), 1, 1)])
@settings(max_examples=150, deadline=None)
@given(data=st.data())
def test_height_routes_agree(params, d1, d2, data):
    fan = build_fan(*params)
    b1, b2 = fan.betas(d1, d2)
    assert b1 >= b2 or params[1] == params[2]
    p = data.draw(points(params).filter(lambda q: any(q.y) or any(q.z)))
    assert height(p, b1, b2) == height_monomial(p, fan, d1, d2)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_height_and_admissibility_action_invariance(data):
    params = (3, 1, 2)
    p = data.draw(points(params))
    b1, b2 = 2, 2
    neg = lambda v: tuple(-c for c in v)  # noqa: E731
    for q in (TorsorPoint(neg(p.x), neg(p.y), p.z), TorsorPoint(p.x, neg(p.y), neg(p.z))):
        assert height(q, b1, b2) == height(p, b1, b2)
        assert admissible(q) == admissible(p)


@settings(max_examples=100, deadline=None)
@given(st.data(), st.fractions(0, 100), st.fractions(0, 100))
def test_height_leq_is_monotone_and_exact(data, B, extra):
    p = data.draw(points((3, 1, 2)))
    assert height_leq(p, 2, 2, B) == (height(p, 2, 2) <= B)
    if height_leq(p, 2, 2, B):
        assert height_leq(p, 2, 2, B + extra)


# ---------------------------------------------------------------------------
# fiber solver


@pytest.mark.parametrize("inst", ORACLE_INSTANCES)
def test_fiber_solutions_match_brute(inst):
    form = oracle_form(inst)
    n, r, m = form.fan_params
    X = np.array([x for x in np.ndindex(*([5] * (r + 1)))], dtype=np.int64) - 2
    fixed = {i: X[:, i] for i in range(r + 1)}
    free = [(v, 3) for v in range(r + 1, n + 2)]
    got = set()
    for idx, vals in fiber_solutions(form.monomials, fixed, len(X), free, n + 2):
        for j, row in enumerate(idx.tolist()):
            got.add(tuple(int(X[row, i]) for i in range(r + 1)) + tuple(int(vals[v][j]) for v in range(r + 1, n + 2)))
    want = {pt for pt in brute_points(form, 2, 3, 3)}
    assert got == want


# ---------------------------------------------------------------------------
# counts


def test_count_N_U_examples():
    assert count_N_U(BILINEAR, Fraction(1, 2)) == 0
    assert count_N_U(BILINEAR, 1) == 4
    assert count_N_dU(BILINEAR, 1, 1) == 16
    assert count_N_dU(BILINEAR, 2, 1) == 16


def test_count_moebius_examples():
    assert count_moebius(BILINEAR, Fraction(1, 2)) == 0
    assert count_moebius(BILINEAR, 1) == 4
    assert count_moebius(BILINEAR, 4) == count_N_U(BILINEAR, 4) == brute_N_U(BILINEAR, 4, 4)


def test_bilinear_frozen_counts():
    res = count_N_U_series(BILINEAR, [1, 4, 16, 1000])
    assert [r.count for r in res] == [4, 8, 24, 1232]
    assert all(r.raw_count == 4 * r.count for r in res)


@pytest.mark.parametrize("inst", ORACLE_INSTANCES)
def test_count_N_U_matches_brute(inst):
    form = oracle_form(inst)
    Bs = [1, 2, 3, 5, 8]
    xr = max(derived_x_bound(form, 1, Fraction(b)) for b in Bs)
    got = [r.count for r in count_N_U_series(form, Bs)]
    want = [brute_N_U(form, b, xr) for b in Bs]
    assert got == want


@pytest.mark.parametrize("openset,pred", [("grad-xy", grad_xy_nonzero), ("specialize-nonzero", specialize_nonzero)])
@pytest.mark.parametrize("inst", ORACLE_INSTANCES[:2] + ORACLE_INSTANCES[4:])
def test_open_sets_match_brute(inst, openset, pred):
    form = oracle_form(inst)
    xr = derived_x_bound(form, 1, Fraction(6))
    assert count_N_U(form, 6, openset) == brute_N_U(form, 6, xr, pred)


def test_openset_mask_rejects_unknown_id():
    with pytest.raises(ValueError):
        openset_mask(BILINEAR, np.zeros((1, 4), dtype=np.int64), "nope")
    with pytest.raises(ValueError):
        count_N_U(BILINEAR, 4, "nope")


@pytest.mark.parametrize("inst", ORACLE_INSTANCES)
def test_moebius_matches_direct(inst):
    form = oracle_form(inst)
    Bs = list(range(1, 41))
    assert [r.count for r in count_moebius_series(form, Bs)] == [r.count for r in count_N_U_series(form, Bs)]


@pytest.mark.parametrize("d", [1, 2, 3])
def test_count_N_dU_matches_brute_heights(d):
    form = oracle_form(ORACLE_INSTANCES[1])
    b1, b2 = form.betas()
    B = Fraction(7)
    g = scale_x(form, d)
    xr = derived_x_bound(form, d, B)
    n, r, m = form.fan_params
    want = 0
    for pt in brute_points(g, xr, math.floor(d * xr * 7), 7):
        x, rest = pt[: r + 1], pt[r + 1 :]
        if any(x) and any(rest) and brute_height_d(pt, form.fan_params, d, b1, b2) <= B:
            want += 1
    assert count_N_dU(form, d, B) == want


def test_caps_behaviour():
    form = random_form(build_fan(3, 1, 2), 2, 1, 3, 3)
    assert form.betas() == (1, 2)
    assert derived_x_bound(form, 1, Fraction(10)) is None
    with pytest.raises(CapExhausted):
        count_N_U(form, 4)
    with pytest.raises(CapExhausted):
        count_N_U(form, 4, caps=Caps(6))
    res = count_N_U_series(form, [4], caps=Caps(6, "flag"))[0]
    assert res.cap_hit
    assert res.count == brute_N_U(form, 4, 6)
    # a cap above the derived bound is not a hit
    res = count_N_U_series(BILINEAR, [4], caps=Caps(100, "raise"))[0]
    assert not res.cap_hit and res.count == 8
    with pytest.raises(CapExhausted):
        count_N_U(BILINEAR, 100, caps=Caps(3))
    with pytest.raises(ValueError):
        Caps(3, "ignore")


def test_count_series_validation():
    with pytest.raises(ValueError):
        CountSeries([(Fraction(2), 1), (Fraction(1), 2)])
    with pytest.raises(ValueError):
        CountSeries([(Fraction(1), 3), (Fraction(2), 2)])


@pytest.mark.parametrize("strategy", ["x-outer", "split"])
def test_strategies_agree_on_bilinear(strategy):
    Bs = [1, 10, 100, 300]
    want = [r.count for r in count_N_U_series(BILINEAR, Bs)]
    assert [r.count for r in count_N_U_series(BILINEAR, Bs, strategy=strategy)] == want


@pytest.mark.parametrize("workers", [2, 8])
def test_counts_are_worker_invariant(workers):
    form = oracle_form(ORACLE_INSTANCES[0])
    Bs = [4, 16, 64]
    assert count_N_U_series(form, Bs, workers=workers) == count_N_U_series(form, Bs)
    assert count_box(BILINEAR, 1, 6, 3, workers=workers) == count_box(BILINEAR, 1, 6, 3)


# ---------------------------------------------------------------------------
# boxes and histograms


def test_count_box_examples():
    assert count_box(BILINEAR, 1, Fraction(1, 2), Fraction(1, 2)) == 1
    # x0 z2 = x1 z3 over {-1,0,1}^4: 33 solutions
    assert count_box(BILINEAR, 1, 1, 1) == 33
    assert count_box(BILINEAR, 1, 1, 1) == brute_box(BILINEAR, 1, 1, 1)


@pytest.mark.parametrize("inst", ORACLE_INSTANCES[1:])
@pytest.mark.parametrize("d", [1, 2])
def test_count_box_matches_brute(inst, d):
    form = oracle_form(inst)
    assert count_box(form, d, 2, 1) == brute_box(form, d, 2, 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 2), st.integers(0, 2))
def test_count_box_monotone(P1, P2, a, b):
    assert count_box(BILINEAR, 1, P1, P2) <= count_box(BILINEAR, 1, P1 + a, P2 + b)


def test_histogram_examples():
    h = histogram_h(BILINEAR, 1, 3, 3)
    assert h[(1, 1)] == 16
    assert all(v >= 0 for v in h.values())
    assert not any(l == 0 for _, l in h)


@pytest.mark.parametrize("inst", ORACLE_INSTANCES)
def test_histogram_matches_floor_box_count(inst):
    form = oracle_form(inst)
    n, r, m = form.fan_params
    d, P1, P2 = 2, 2, 2
    g = scale_x(form, d)
    want = {}
    for pt in brute_points(g, P1, d * P1 * (P2 + 1) - 1, P2):
        x, y, z = pt[: r + 1], pt[r + 1 : m + 1], pt[m + 1 :]
        if not any(x) or not (any(y) or any(z)):
            continue
        k = max(map(abs, x))
        l = max(max(map(abs, y), default=0) // (d * k), max(map(abs, z)))
        if l <= P2:
            want[(k, l)] = want.get((k, l), 0) + 1
    assert histogram_h(form, d, P1, P2) == dict(sorted(want.items()))


@pytest.mark.parametrize("inst", ORACLE_INSTANCES)
def test_histogram_hyperbola_is_region_restriction(inst):
    form = oracle_form(inst)
    b1, b2 = form.betas()
    P = 12
    kmax = math.floor(P ** (1 / b1) + 1e-9)
    full = histogram_h(form, 1, kmax, P)
    want = {(k, l): v for (k, l), v in full.items() if l >= 1 and k**b1 * l**b2 <= P}
    assert histogram_hyperbola(form, 1, P) == want


@pytest.mark.parametrize("inst", ORACLE_INSTANCES)
def test_sandwich_orders_counts(inst):
    form = oracle_form(inst)
    s = sandwich(form, 1, 20)
    assert s.lower <= s.middle <= s.upper + s.l0_points
    assert s.l0_points >= 0
    if form.m == form.r:
        assert s.l0_points == 0


@pytest.mark.parametrize("inst", ORACLE_INSTANCES)
def test_raw_counts_divisible_by_four(inst):
    form = oracle_form(inst)
    for res in count_N_U_series(form, [3, 9, 27]):
        assert res.raw_count % 4 == 0


def test_zero_points_are_zeros():
    form = oracle_form(ORACLE_INSTANCES[0])
    for pt in brute_points(form, 1, 1, 1):
        assert evaluate(form, pt) == 0

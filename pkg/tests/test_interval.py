import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rascert.errors import ConfigError
from rascert.interval import (INTERVAL_FUNCTIONS, POINT_FUNCTIONS, Interval, box, iv_add, iv_fn, iv_mul,
                              iv_neg, iv_square, ivmat_mul)

TOL = 1e-12

finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def interval_and_point(draw, lo=-50.0, hi=50.0):
    a = draw(st.floats(lo, hi))
    b = draw(st.floats(lo, hi))
    a, b = min(a, b), max(a, b)
    t = draw(st.floats(0, 1))
    return Interval(a, b), a + t * (b - a)


def encloses(iv: Interval, v, rel=TOL) -> bool:
    slack = rel * (1.0 + np.abs(v))
    return bool(np.all((iv.lo - slack <= v) & (v <= iv.hi + slack)))


def test_examples_from_hand():
    r = iv_add(Interval(1, 2), Interval(-3, 5))
    assert (r.lo, r.hi) == (-2, 7)
    r = iv_mul(Interval(-1, 2), Interval(3, 4))
    assert (r.lo, r.hi) == (-4, 8)
    r = iv_square(Interval(-2, 1))
    assert (r.lo, r.hi) == (0, 4)
    r = iv_square(Interval(1, 3))
    assert (r.lo, r.hi) == (1, 9)
    r = iv_neg(Interval(-1, 3))
    assert (r.lo, r.hi) == (-3, 1)


def test_square_is_tighter_than_self_product():
    a = Interval(-2, 1)
    assert iv_mul(a, a).lo == -2
    assert iv_square(a).lo == 0


def test_elementary_functions_by_hand():
    r = iv_fn("sin", Interval(0, math.pi))
    assert r.lo == pytest.approx(0, abs=1e-15) and r.hi == 1
    r = iv_fn("cos", Interval(-0.1, 2 * math.pi + 0.1))
    assert (r.lo, r.hi) == (-1, 1)
    r = iv_fn("tanh", Interval(0, 0))
    assert (r.lo, r.hi) == (0, 0)
    r = iv_fn("softplus", Interval(0, 0))
    assert r.lo == pytest.approx(math.log(2), abs=1e-15)
    r = iv_fn("tanh_d1", Interval(-1, 2))
    assert r.hi == 1.0 and r.lo == pytest.approx(1 - math.tanh(2) ** 2)
    r = iv_fn("softplus_d2", Interval(-3, 1))
    assert r.hi == 0.25


def test_unknown_function():
    with pytest.raises(ConfigError):
        iv_fn("relu6", Interval(0, 1))


def test_reversed_endpoints_rejected():
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)


def test_matrix_product_examples():
    a = Interval([[1.0, 0.0], [0.0, 1.0]])
    b = Interval([[-1.0, 1.0]], [[1.0, 2.0]]).reshape(1, 2)
    # identity times an interval row is the row itself
    out = ivmat_mul(Interval([[1.0]]), b)
    assert np.array_equal(out.lo, b.lo) and np.array_equal(out.hi, b.hi)
    m = np.array([[1.0, -2.0], [3.0, 4.0]])
    x = np.array([[0.5], [-1.5]])
    p = ivmat_mul(Interval.point(m), Interval.point(x))
    assert np.allclose(p.lo, m @ x) and np.allclose(p.hi, m @ x)
    assert a.shape == (2, 2)


def test_box_helpers():
    b = box([0, 1], [2, 3])
    assert np.array_equal(b.mid, [1, 2]) and np.array_equal(b.rad, [1, 1])
    assert b.contains(np.array([1.0, 2.5])).all()
    w = b.widen(0.5)
    assert np.all(w.lo <= b.lo) and np.all(w.hi >= b.hi)


@settings(max_examples=300, deadline=None)
@given(interval_and_point(), interval_and_point())
def test_arithmetic_encloses_points(ax, by):
    (a, x), (b, y) = ax, by
    assert encloses(iv_add(a, b), x + y)
    assert encloses(iv_mul(a, b), x * y)
    assert encloses(iv_square(a), x * x)
    assert encloses(iv_neg(a), -x)
    assert encloses(a - b, x - y)


@pytest.mark.parametrize("name", sorted(INTERVAL_FUNCTIONS))
@settings(max_examples=200, deadline=None)
@given(pair=interval_and_point(-12.0, 12.0))
def test_elementary_functions_enclose_points(name, pair):
    a, x = pair
    v = POINT_FUNCTIONS[name](np.array(x))
    assert encloses(iv_fn(name, a), v)


@pytest.mark.parametrize("name", ["tanh", "tanh_d1", "tanh_d2", "softplus", "softplus_d1", "softplus_d2",
                                  "sin", "cos"])
def test_elementary_functions_are_tight(name):
    # the enclosure endpoints are attained up to the sampling resolution
    rng = np.random.default_rng(7)
    f = POINT_FUNCTIONS[name]
    for _ in range(50):
        lo = rng.uniform(-6, 6)
        hi = lo + rng.uniform(0, 4)
        iv = iv_fn(name, Interval(lo, hi))
        v = f(np.linspace(lo, hi, 20001))
        assert iv.lo == pytest.approx(v.min(), abs=1e-6)
        assert iv.hi == pytest.approx(v.max(), abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_matrix_product_encloses_samples(seed):
    rng = np.random.default_rng(seed)
    n, k, p = rng.integers(1, 5, 3)
    mid_a, mid_b = rng.normal(size=(n, k)), rng.normal(size=(k, p))
    ra, rb = rng.uniform(0, 1, (n, k)), rng.uniform(0, 1, (k, p))
    A, B = Interval.from_mid_rad(mid_a, ra), Interval.from_mid_rad(mid_b, rb)
    prod = ivmat_mul(A, B)
    for _ in range(20):
        a = rng.uniform(A.lo, A.hi)
        b = rng.uniform(B.lo, B.hi)
        assert encloses(prod, a @ b)
    # point matrices give the exact product
    exact = ivmat_mul(Interval.point(mid_a), Interval.point(mid_b))
    assert np.allclose(exact.lo, mid_a @ mid_b) and np.allclose(exact.hi, mid_a @ mid_b)

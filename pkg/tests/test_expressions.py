import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rascert.errors import ConfigError
from rascert.expressions import parse
from rascert.interval import Interval


def test_point_evaluation():
    e = parse("-x + 2*sin(y) - 0.5*x*y", ["x", "y"])
    x, y = np.array([1.0, 2.0]), np.array([0.3, -1.0])
    assert np.allclose(e({"x": x, "y": y}), -x + 2 * np.sin(y) - 0.5 * x * y)
    assert e.names == {"x", "y"}


def test_constants_and_pi():
    e = parse("cos(pi) * 3", [])
    assert e({}) == pytest.approx(-3.0)
    assert parse("0", ["x"]).is_zero


@pytest.mark.parametrize("src", ["x / 2", "x ** 2", "abs(x)", "__import__('os')", "x.real", "z + 1",
                                 "sin(x, x)", "'a'", "True", "x if x else 1", "lambda: 1"])
def test_rejects_unsafe_or_unknown(src):
    with pytest.raises(ConfigError):
        parse(src, ["x"])


def test_syntax_error_is_config_error():
    with pytest.raises(ConfigError):
        parse("x +", ["x"])


@settings(max_examples=150, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2), st.floats(0, 1), st.floats(-3, 3), st.floats(0, 2), st.floats(0, 1))
def test_interval_evaluation_encloses(xl, xw, tx, yl, yw, ty):
    e = parse("x*y - exp(0.3*x) + tanh(2*y) + cos(x - y) - 4*x", ["x", "y"])
    X, Y = Interval(xl, xl + xw), Interval(yl, yl + yw)
    x, y = xl + tx * xw, yl + ty * yw
    v = e({"x": np.array(x), "y": np.array(y)})
    out = e.interval({"x": X, "y": Y})
    assert out.lo - 1e-12 <= v <= out.hi + 1e-12


def test_constant_interval_is_a_point():
    out = parse("2*pi", ["x"]).interval({"x": Interval(0, 1)})
    assert out.lo == out.hi == pytest.approx(2 * math.pi)

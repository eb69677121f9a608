import dataclasses

import numpy as np
import pytest

from helpers import ou_problem, points_in, random_box, random_cert, softplus_pair_cert
from rascert import mlp
from rascert.dynamics import BUILTINS, builtin
from rascert.errors import ConfigError
from rascert.generator import generator_at, generator_from_parts, generator_interval, generator_upper
from rascert.interval import Interval


def cert_for(name, seed):
    _, spec = builtin(name)
    return random_cert(seed, spec.dim, input_box=(spec.domain.lo, spec.domain.hi))


def test_toy_generator_by_hand():
    # V = x², σ = 0.84, a = 0.4 at x = 1: 0.4·2 + ½·0.84²·2
    out = generator_from_parts(np.array([[0.4]]), np.array([[[0.84]]]), np.array([[2.0]]), np.array([[2.0]]))
    assert out[0] == pytest.approx(1.5056, abs=1e-12)


def test_generator_vanishes_at_gbm_equilibrium():
    model, _ = builtin("bivariate-gbm")
    assert generator_at(model, cert_for("bivariate-gbm", 0), np.zeros(2)) == 0.0


def test_generator_matches_finite_difference_oracle():
    model, spec = builtin("toy-gbm", sigma=0.84)
    cert = random_cert(1, 1, hidden=(8, 8), input_box=(spec.domain.lo, spec.domain.hi))
    h = 1e-4
    for x in [0.3, 1.0, 4.0, 7.5]:
        v = lambda s: mlp.forward(cert, np.array([s]))
        d1 = (v(x + h) - v(x - h)) / (2 * h)
        d2 = (v(x + h) - 2 * v(x) + v(x - h)) / h ** 2
        expected = 0.4 * x * d1 + 0.5 * (0.84 * x) ** 2 * d2
        assert generator_at(model, cert, np.array([x])) == pytest.approx(expected, rel=1e-5, abs=1e-8)


def test_generator_matches_dynkin_estimate():
    # exact OU transition with antithetic pairs; only forward evaluations of V
    model, _ = ou_problem(noise=0.1)
    cert = softplus_pair_cert()
    h, n = 1e-3, 200_000
    z = np.random.default_rng(0).standard_normal(n)
    for x in [0.3, 0.7, 1.0]:
        mean = x * np.exp(-h)
        sd = 0.1 * np.sqrt((1 - np.exp(-2 * h)) / 2)
        vx = mlp.forward(cert, np.array([x]))
        up = mlp.forward(cert, (mean + sd * z)[:, None])
        down = mlp.forward(cert, (mean - sd * z)[:, None])
        est = (0.5 * (up + down).mean() - vx) / h
        assert generator_at(model, cert, np.array([x])) == pytest.approx(est, rel=5e-3)


@pytest.mark.parametrize("name", BUILTINS)
def test_point_box_equals_pointwise(name):
    model, spec = builtin(name)
    cert = cert_for(name, 2)
    x = 0.3 * spec.domain.hi
    g = generator_at(model, cert, x)
    for centred in (False, True):
        iv = generator_interval(model, cert, Interval.point(x), centred=centred)
        assert iv.lo == pytest.approx(g, rel=1e-10, abs=1e-12) and iv.hi == pytest.approx(g, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("name", BUILTINS)
def test_generator_bound_is_sound(name):
    model, spec = builtin(name)
    rng = np.random.default_rng(5)
    for trial in range(150):
        cert = cert_for(name, trial)
        b = random_box(rng, spec.domain.lo, spec.domain.hi, 0.05)
        xs = points_in(rng, b, 20)
        up = generator_upper(model, cert, b)
        g = generator_at(model, cert, xs)
        assert np.all(g <= up + 1e-9 * (1 + abs(up)))


def test_bound_converges_on_shrinking_boxes():
    model, spec = builtin("bivariate-gbm")
    cert = cert_for("bivariate-gbm", 7)
    x = np.array([30.0, -20.0])
    g = generator_at(model, cert, x)
    gaps = []
    for j in range(1, 12):
        r = 8.0 / 2 ** j
        gaps.append(generator_upper(model, cert, Interval(x - r, x + r)) - g)
    assert all(gap >= -1e-12 for gap in gaps)
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3 * max(1.0, abs(g))


def test_non_diagonal_noise_is_rejected():
    model, _ = builtin("bivariate-gbm")
    model = dataclasses.replace(model, diagonal_noise=False)
    with pytest.raises(ConfigError):
        generator_at(model, cert_for("bivariate-gbm", 0), np.ones(2))

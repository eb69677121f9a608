"""Vectorised interval arithmetic.

An :class:`Interval` holds two numpy arrays ``lo`` and ``hi`` of identical
shape, so one object can stand for a scalar interval, an interval box
(shape ``(l,)``), a batch of boxes (shape ``(c, l)``) or an interval matrix.

Rounding is not directed. Results are exact images in real arithmetic,
evaluated in floating point; callers that want a safety margin can use
:meth:`Interval.widen`.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError

TWO_PI = 2.0 * math.pi


class Interval:
    """Closed interval(s) ``[lo, hi]`` with numpy-array endpoints."""

    __slots__ = ("lo", "hi")
    __array_priority__ = 1000

    def __init__(self, lo, hi=None, check: bool = True):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        if lo.shape != hi.shape:
            lo, hi = np.broadcast_arrays(lo, hi)
        if check and np.any(lo > hi):
            raise ValueError("interval with lo > hi")
        self.lo = lo
        self.hi = hi

    @classmethod
    def point(cls, x) -> Interval:
        x = np.asarray(x, dtype=float)
        return cls(x, x, check=False)

    @classmethod
    def from_mid_rad(cls, mid, rad) -> Interval:
        return cls(mid - rad, mid + rad, check=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.lo.shape

    @property
    def ndim(self) -> int:
        return self.lo.ndim

    def __len__(self) -> int:
        return len(self.lo)

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def __getitem__(self, idx) -> Interval:
        return Interval(self.lo[idx], self.hi[idx], check=False)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        if self.ndim == 0:
            return f"Interval([{float(self.lo)!r}, {float(self.hi)!r}])"
        return f"Interval(lo={self.lo!r}, hi={self.hi!r})"

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (self.lo - tol <= x) & (x <= self.hi + tol)

    def issubset(self, other: Interval, tol: float = 0.0) -> bool:
        return bool(np.all(other.lo - tol <= self.lo) and np.all(self.hi <= other.hi + tol))

    def widen(self, rel: float, abs_: float = 0.0) -> Interval:
        """Widen outward by ``rel`` times the endpoint magnitude plus ``abs_``."""
        if rel == 0.0 and abs_ == 0.0:
            return self
        mag = np.maximum(np.abs(self.lo), np.abs(self.hi))
        pad = rel * mag + abs_
        return Interval(self.lo - pad, self.hi + pad, check=False)

    def reshape(self, *shape) -> Interval:
        return Interval(self.lo.reshape(*shape), self.hi.reshape(*shape), check=False)

    def sum(self, axis=None) -> Interval:
        return Interval(self.lo.sum(axis=axis), self.hi.sum(axis=axis), check=False)

    def __add__(self, other) -> Interval:
        return iv_add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Interval:
        return iv_add(self, iv_neg(_as_interval(other)))

    def __rsub__(self, other) -> Interval:
        return iv_add(_as_interval(other), iv_neg(self))

    def __neg__(self) -> Interval:
        return iv_neg(self)

    def __mul__(self, other) -> Interval:
        return iv_mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other) -> Interval:
        return ivmat_mul(self, other)

    def __rmatmul__(self, other) -> Interval:
        return ivmat_mul(other, self)


def _as_interval(a) -> Interval:
    return a if isinstance(a, Interval) else Interval.point(a)


def box(lows, highs) -> Interval:
    """Build an interval box from per-dimension bounds."""
    return Interval(np.asarray(lows, dtype=float), np.asarray(highs, dtype=float))


def iv_add(a, b) -> Interval:
    a, b = _as_interval(a), _as_interval(b)
    return Interval(a.lo + b.lo, a.hi + b.hi, check=False)


def iv_neg(a) -> Interval:
    a = _as_interval(a)
    return Interval(-a.hi, -a.lo, check=False)


def iv_mul(a, b) -> Interval:
    """Elementwise product; a plain array operand is treated as exact."""
    if not isinstance(a, Interval):
        a, b = b, a
    if not isinstance(b, Interval):
        s = np.asarray(b, dtype=float)
        p, q = a.lo * s, a.hi * s
        return Interval(np.minimum(p, q), np.maximum(p, q), check=False)
    p1, p2 = a.lo * b.lo, a.lo * b.hi
    p3, p4 = a.hi * b.lo, a.hi * b.hi
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return Interval(lo, hi, check=False)


def iv_square(a) -> Interval:
    """Exact image of x**2; the lower end is 0 whenever 0 lies in ``a``."""
    a = _as_interval(a)
    l2, h2 = a.lo * a.lo, a.hi * a.hi
    hi = np.maximum(l2, h2)
    lo = np.where((a.lo <= 0.0) & (a.hi >= 0.0), 0.0, np.minimum(l2, h2))
    return Interval(lo, hi, check=False)


def ivmat_mul(a, b) -> Interval:
    """Interval matrix product (numpy ``@`` broadcasting rules).

    If either operand is a plain array it is treated as an exact matrix and
    the product is formed in midpoint-radius form, which is the tight
    enclosure for exact-times-interval products.
    """
    a_iv, b_iv = isinstance(a, Interval), isinstance(b, Interval)
    a_shape = a.shape if a_iv else np.shape(a)
    b_shape = b.shape if b_iv else np.shape(b)
    k_a = a_shape[-1]
    k_b = b_shape[0] if len(b_shape) == 1 else b_shape[-2]
    if k_a != k_b:
        raise ShapeError(f"matmul shape mismatch: {a_shape} @ {b_shape}")
    if not a_iv and not b_iv:
        return Interval.point(np.asarray(a) @ np.asarray(b))
    if not a_iv:
        m = np.asarray(a, dtype=float)
        return Interval.from_mid_rad(m @ b.mid, np.abs(m) @ b.rad)
    if not b_iv:
        m = np.asarray(b, dtype=float)
        return Interval.from_mid_rad(a.mid @ m, a.rad @ np.abs(m))
    # general case: enumerate endpoint products per summand
    if len(b_shape) == 1:
        prod = iv_mul(a, b)
        return prod.sum(axis=-1)
    ea = a.reshape(*a_shape, 1)
    eb = b.reshape(*b_shape[:-2], 1, *b_shape[-2:])
    return iv_mul(ea, eb).sum(axis=-2)


# elementary functions ------------------------------------------------------


def _monotone_inc(f: Callable) -> Callable[[Interval], Interval]:
    def g(a: Interval) -> Interval:
        return Interval(f(a.lo), f(a.hi), check=False)

    return g


def _even_peak(f: Callable) -> Callable[[Interval], Interval]:
    """Even function that decreases in |x| (peak at 0)."""

    def g(a: Interval) -> Interval:
        flo, fhi = f(a.lo), f(a.hi)
        straddle = (a.lo <= 0.0) & (a.hi >= 0.0)
        lo = np.minimum(flo, fhi)
        hi = np.where(straddle, f(np.zeros_like(a.lo)), np.maximum(flo, fhi))
        return Interval(lo, hi, check=False)

    return g


def _contains_periodic(lo, hi, c, period=TWO_PI):
    k = np.ceil((lo - c) / period)
    return c + k * period <= hi


def _periodic(f: Callable, c_max: float, c_min: float) -> Callable[[Interval], Interval]:
    """Periodic function with range [-1, 1], maxima at c_max and minima at c_min mod 2π."""

    def g(a: Interval) -> Interval:
        flo, fhi = f(a.lo), f(a.hi)
        lo = np.minimum(flo, fhi)
        hi = np.maximum(flo, fhi)
        full = (a.hi - a.lo) >= TWO_PI
        hi = np.where(full | _contains_periodic(a.lo, a.hi, c_max), 1.0, hi)
        lo = np.where(full | _contains_periodic(a.lo, a.hi, c_min), -1.0, lo)
        return Interval(lo, hi, check=False)

    return g


def _tanh_d1(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _tanh_d2(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


# tanh'' has its extrema where tanh(x) = ±1/sqrt(3)
_TANH_D2_CRIT = math.atanh(1.0 / math.sqrt(3.0))
_TANH_D2_EXT = 4.0 / (3.0 * math.sqrt(3.0))


def _iv_tanh_d2(a: Interval) -> Interval:
    flo, fhi = _tanh_d2(a.lo), _tanh_d2(a.hi)
    lo = np.minimum(flo, fhi)
    hi = np.maximum(flo, fhi)
    has_min = (a.lo <= _TANH_D2_CRIT) & (a.hi >= _TANH_D2_CRIT)
    has_max = (a.lo <= -_TANH_D2_CRIT) & (a.hi >= -_TANH_D2_CRIT)
    lo = np.where(has_min, -_TANH_D2_EXT, lo)
    hi = np.where(has_max, _TANH_D2_EXT, hi)
    return Interval(lo, hi, check=False)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    # branch-free stable logistic
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus_d2(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def _identity(x):
    return np.asarray(x, dtype=float)


def _iv_const(value: float) -> Callable[[Interval], Interval]:
    def g(a: Interval) -> Interval:
        c = np.full_like(a.lo, value)
        return Interval(c, c, check=False)

    return g


POINT_FUNCTIONS: dict[str, Callable] = {
    "identity": _identity,
    "identity_d1": lambda x: np.ones_like(np.asarray(x, dtype=float)),
    "identity_d2": lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    "tanh": np.tanh,
    "tanh_d1": _tanh_d1,
    "tanh_d2": _tanh_d2,
    "softplus": softplus,
    "softplus_d1": sigmoid,
    "softplus_d2": _softplus_d2,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
}

INTERVAL_FUNCTIONS: dict[str, Callable[[Interval], Interval]] = {
    "identity": lambda a: a,
    "identity_d1": _iv_const(1.0),
    "identity_d2": _iv_const(0.0),
    "tanh": _monotone_inc(np.tanh),
    "tanh_d1": _even_peak(_tanh_d1),
    "tanh_d2": _iv_tanh_d2,
    "softplus": _monotone_inc(softplus),
    "softplus_d1": _monotone_inc(sigmoid),
    # logistic derivative s(1-s) peaks at 1/4 at the origin
    "softplus_d2": _even_peak(_softplus_d2),
    "sin": _periodic(np.sin, 0.5 * math.pi, -0.5 * math.pi),
    "cos": _periodic(np.cos, 0.0, math.pi),
    "exp": _monotone_inc(np.exp),
}


def iv_fn(name: str, a) -> Interval:
    """Enclosure of ``name(x)`` over ``a``; see ``INTERVAL_FUNCTIONS`` for ids."""
    try:
        fn = INTERVAL_FUNCTIONS[name]
    except KeyError:
        raise ConfigError(f"unknown elementary function {name!r}") from None
    return fn(_as_interval(a))

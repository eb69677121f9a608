"""Controlled SDE models, policies and reach-avoid-stay specifications.

A model is ``dX = f(X, u) dt + g(X, u) dW`` with ``u = π(X)``. Every model
evaluates on batches of states ``(n, l)`` and on batches of interval boxes
``(c, l)``, the latter giving sound enclosures of the closed-loop drift and
diffusion. Sets in a specification are finite unions of closed boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import mlp as mlp_mod
from .errors import ConfigError, DomainError, ShapeError
from .expressions import Expr, parse
from .interval import Interval, iv_fn, iv_mul, ivmat_mul

MODES = ("reach-avoid-stay", "reach-avoid-only", "stay-only")
MODE_ALIASES = {"ras": "reach-avoid-stay", "reach-avoid": "reach-avoid-only", "stay": "stay-only"}

PENDULUM_POLICY_PATH = Path(__file__).parent / "data" / "pendulum_policy.json"


# sets ----------------------------------------------------------------------


@dataclass(frozen=True)
class BoxUnion:
    """Finite union of closed axis-aligned boxes, stored as ``(b, l)`` bounds."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_2d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise ShapeError("box bounds differ in shape")
        if np.any(lo > hi):
            raise ConfigError("box with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def of(cls, boxes: Sequence, dim: int | None = None) -> BoxUnion:
        """From a list of boxes, each a list of ``[lo, hi]`` pairs per dimension."""
        if len(boxes) == 0:
            if dim is None:
                raise ConfigError("empty union needs an explicit dimension")
            return cls(np.zeros((0, dim)), np.zeros((0, dim)))
        arr = np.asarray(boxes, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ConfigError("boxes must be given as [[lo, hi], ...] per dimension")
        return cls(arr[:, :, 0], arr[:, :, 1])

    @classmethod
    def empty(cls, dim: int) -> BoxUnion:
        return cls(np.zeros((0, dim)), np.zeros((0, dim)))

    @property
    def dim(self) -> int:
        return self.lo.shape[1]

    def __len__(self) -> int:
        return self.lo.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def to_list(self) -> list:
        return [[[float(a), float(b)] for a, b in zip(l, h)] for l, h in zip(self.lo, self.hi)]

    def boxes(self) -> list[Interval]:
        return [Interval(l, h) for l, h in zip(self.lo, self.hi)]

    @property
    def volumes(self) -> np.ndarray:
        return np.prod(self.hi - self.lo, axis=1)

    def contains(self, x) -> np.ndarray:
        """Closed membership for states of shape ``(n, l)`` (or a single state)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        if len(self) == 0:
            out = np.zeros(x2.shape[0], dtype=bool)
        else:
            inside = (x2[:, None, :] >= self.lo[None]) & (x2[:, None, :] <= self.hi[None])
            out = inside.all(axis=2).any(axis=1)
        return bool(out[0]) if single else out

    def contains_interior(self, x) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        if len(self) == 0:
            return np.zeros(x2.shape[0], dtype=bool)
        inside = (x2[:, None, :] > self.lo[None]) & (x2[:, None, :] < self.hi[None])
        return inside.all(axis=2).any(axis=1)

    def intersects(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Which boxes ``[lo, hi]`` (shape ``(c, l)``) meet the union; shared faces count."""
        if len(self) == 0:
            return np.zeros(lo.shape[0], dtype=bool)
        out = np.zeros(lo.shape[0], dtype=bool)
        for blo, bhi in zip(self.lo, self.hi):
            out |= np.all((lo <= bhi) & (hi >= blo), axis=1)
        return out

    def covers(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Boxes contained in a single member box of the union (a sufficient test)."""
        if len(self) == 0:
            return np.zeros(lo.shape[0], dtype=bool)
        out = np.zeros(lo.shape[0], dtype=bool)
        for blo, bhi in zip(self.lo, self.hi):
            out |= np.all((lo >= blo) & (hi <= bhi), axis=1)
        return out

    def covers_strictly(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Boxes inside the interior of a single member box."""
        if len(self) == 0:
            return np.zeros(lo.shape[0], dtype=bool)
        out = np.zeros(lo.shape[0], dtype=bool)
        for blo, bhi in zip(self.lo, self.hi):
            out |= np.all((lo > blo) & (hi < bhi), axis=1)
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples over the union (overlaps are counted twice)."""
        if len(self) == 0 or n == 0:
            return np.zeros((0, self.dim))
        vol = self.volumes
        p = vol / vol.sum() if vol.sum() > 0 else np.full(len(self), 1.0 / len(self))
        which = rng.choice(len(self), size=n, p=p)
        u = rng.random((n, self.dim))
        return self.lo[which] + u * (self.hi[which] - self.lo[which])

    def sample_boundary(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform-by-face samples on the boundary of the union.

        Points falling in the interior of another member box are dropped, so
        fewer than ``n`` points may be returned for overlapping unions.
        """
        if len(self) == 0 or n == 0:
            return np.zeros((0, self.dim))
        l = self.dim
        widths = self.hi - self.lo
        # face measure for the two faces orthogonal to each axis
        face = np.empty((len(self), l))
        for i in range(l):
            face[:, i] = np.prod(np.delete(widths, i, axis=1), axis=1) if l > 1 else 1.0
        weights = np.repeat(face.ravel(), 2)
        weights = weights / weights.sum()
        pick = rng.choice(weights.size, size=n, p=weights)
        box_idx, rest = np.divmod(pick, 2 * l)
        axis, side = np.divmod(rest, 2)
        u = rng.random((n, l))
        pts = self.lo[box_idx] + u * widths[box_idx]
        rows = np.arange(n)
        pts[rows, axis] = np.where(side == 0, self.lo[box_idx, axis], self.hi[box_idx, axis])
        if len(self) > 1:
            pts = pts[~self.contains_interior(pts)]
        return pts

    def centres(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


@dataclass
class RasSpec:
    """Reach-avoid-stay specification over a bounded box domain."""

    domain: Interval
    init: BoxUnion
    target: BoxUnion
    unsafe: BoxUnion
    eps: float = 0.9
    delta: float = 0.9
    mode: str = "reach-avoid-stay"
    # time-varying unsafe set, consumed only by the simulator
    unsafe_schedule: Callable[[float], BoxUnion] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("eps", "delta"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {p}")
        l = self.dim
        for name in ("init", "target", "unsafe"):
            s = getattr(self, name)
            if s.dim != l:
                raise ShapeError(f"{name} set has dimension {s.dim}, domain has {l}")
            if len(s) and not (np.all(s.lo >= self.domain.lo) and np.all(s.hi <= self.domain.hi)):
                raise ConfigError(f"{name} set leaves the domain")
        if self.mode != "stay-only" and self.init.is_empty:
            raise ConfigError("reach-avoid modes need a nonempty initial set")
        if self.mode != "reach-avoid-only" and self.target.is_empty:
            raise ConfigError("stay modes need a nonempty target set")
        for name in ("init", "target"):
            s = getattr(self, name)
            if len(s) and np.any(self.unsafe.intersects(s.lo, s.hi)):
                raise ConfigError(f"{name} set touches the unsafe set")

    @property
    def dim(self) -> int:
        return self.domain.shape[0]

    def with_mode(self, mode: str) -> RasSpec:
        return RasSpec(self.domain, self.init, self.target, self.unsafe, self.eps, self.delta,
                       mode, self.unsafe_schedule)


@dataclass(frozen=True)
class Membership:
    in_domain: np.ndarray
    in_init: np.ndarray
    in_target: np.ndarray
    in_unsafe: np.ndarray


def membership(spec: RasSpec, x) -> Membership:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    in_dom = np.all((x2 >= spec.domain.lo) & (x2 <= spec.domain.hi), axis=1)
    flags = [in_dom, spec.init.contains(x2), spec.target.contains(x2), spec.unsafe.contains(x2)]
    if single:
        flags = [bool(f[0]) for f in flags]
    return Membership(*flags)


# policies --------------------------------------------------------------------


class LinearPolicy:
    """u = K x."""

    def __init__(self, gain):
        self.gain = np.atleast_2d(np.asarray(gain, dtype=float))

    @property
    def control_dim(self) -> int:
        return self.gain.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.gain.T

    def interval(self, box: Interval) -> Interval:
        return ivmat_mul(box, self.gain.T)

    def describe(self) -> dict:
        return {"type": "linear", "gain": self.gain.tolist()}


class NeuralPolicy:
    """Network policy ``u = squash(net(x) - net(0))``.

    Subtracting ``net(0)`` makes the origin an equilibrium; ``squash='tanh'``
    keeps every control component in ``[-1, 1]``.
    """

    def __init__(self, net: mlp_mod.Mlp, squash: str | None = "tanh", centre: bool = True,
                 source: str | None = None):
        self.net = net
        self.squash = squash
        self.offset = mlp_mod.forward(net, np.zeros(net.in_dim)) if centre else np.zeros(net.out_dim)
        self.offset = np.atleast_1d(self.offset)
        self.source = source

    @property
    def control_dim(self) -> int:
        return self.net.out_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = mlp_mod.forward(self.net, x)
        out = out.reshape(x.shape[0], -1) - self.offset
        return np.tanh(out) if self.squash == "tanh" else out

    def interval(self, box: Interval) -> Interval:
        out = mlp_mod.forward_interval(self.net, box)
        out = out.reshape(box.shape[0], -1) - self.offset
        return iv_fn("tanh", out) if self.squash == "tanh" else out

    def describe(self) -> dict:
        return {"type": "neural", "checkpoint": self.source, "squash": self.squash}


class ExpressionPolicy:
    def __init__(self, exprs: Sequence[Expr], state_names: Sequence[str]):
        self.exprs = list(exprs)
        self.state_names = list(state_names)

    @property
    def control_dim(self) -> int:
        return len(self.exprs)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        env = {n: x[:, i] for i, n in enumerate(self.state_names)}
        return np.stack([np.broadcast_to(e(env), x.shape[:1]) for e in self.exprs], axis=1)

    def interval(self, box: Interval) -> Interval:
        env = {n: box[:, i] for i, n in enumerate(self.state_names)}
        parts = [e.interval(env) for e in self.exprs]
        c = box.shape[0]
        lo = np.stack([np.broadcast_to(p.lo, (c,)) for p in parts], axis=1)
        hi = np.stack([np.broadcast_to(p.hi, (c,)) for p in parts], axis=1)
        return Interval(lo, hi, check=False)

    def describe(self) -> dict:
        return {"type": "expression", "u": [e.source for e in self.exprs]}


# models ------------------------------------------------------------------------


@dataclass
class SdeModel:
    """Controlled SDE with batched point and interval evaluators.

    ``drift(x, u) -> (n, l)``, ``diffusion(x, u) -> (n, l, k)``; the interval
    versions take a batch of boxes ``(c, l)`` and control enclosures ``(c, m)``.
    ``diagonal_noise`` asserts that g gᵀ is diagonal for every state.
    """

    name: str
    state_dim: int
    noise_dim: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray, np.ndarray], np.ndarray]
    drift_interval: Callable[[Interval, Interval], Interval]
    diffusion_interval: Callable[[Interval, Interval], Interval]
    policy: object
    domain: Interval | None = None
    diagonal_noise: bool = True
    params: dict = field(default_factory=dict)
    # optional tighter enclosure of the closed loop, box -> (f, g)
    closed_loop_bounds: Callable[[Interval], tuple[Interval, Interval]] | None = None

    def closed_loop(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = self.policy(x)
        return self.drift(x, u), self.diffusion(x, u)

    def closed_loop_interval(self, box: Interval) -> tuple[Interval, Interval]:
        if self.closed_loop_bounds is not None:
            return self.closed_loop_bounds(box)
        u = self.policy.interval(box)
        return self.drift_interval(box, u), self.diffusion_interval(box, u)


def _check_in_domain(model: SdeModel, x2: np.ndarray) -> None:
    if model.domain is None:
        return
    ok = np.all((x2 >= model.domain.lo) & (x2 <= model.domain.hi), axis=1)
    if not np.all(ok):
        bad = x2[~ok][0]
        raise DomainError(f"state {bad.tolist()} lies outside the domain of {model.name}")


def eval_drift_diffusion(model: SdeModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop drift ``f_π(x)`` and diffusion ``g_π(x)`` at one or many states."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != model.state_dim:
        raise ShapeError(f"state of dimension {x2.shape[1]} for a {model.state_dim}-D model")
    _check_in_domain(model, x2)
    f, g = model.closed_loop(x2)
    return (f[0], g[0]) if single else (f, g)


def eval_drift_diffusion_interval(model: SdeModel, box: Interval) -> tuple[Interval, Interval]:
    """Sound enclosures of the closed-loop drift and diffusion over boxes."""
    single = box.ndim == 1
    b = box.reshape(1, -1) if single else box
    if b.shape[1] != model.state_dim:
        raise ShapeError(f"box of dimension {b.shape[1]} for a {model.state_dim}-D model")
    f, g = model.closed_loop_interval(b)
    return (f[0], g[0]) if single else (f, g)


def _stack_iv(parts: Sequence[Interval], axis: int) -> Interval:
    return Interval(np.stack([p.lo for p in parts], axis=axis),
                    np.stack([p.hi for p in parts], axis=axis), check=False)


# built-in systems ----------------------------------------------------------------


def toy_gbm(sigma: float = 1.0, a: float = 0.4) -> tuple[SdeModel, RasSpec]:
    """dX = a X dt + π(X) dW with the noise-injecting policy π(x) = σ x."""

    def drift(x, u):
        return a * x

    def diffusion(x, u):
        return u[:, :, None]

    def drift_iv(box, u):
        return box * a

    def diffusion_iv(box, u):
        return u.reshape(u.shape[0], 1, 1)

    domain = Interval([-1.0], [10.0])
    model = SdeModel(f"toy-gbm(sigma={sigma})", 1, 1, drift, diffusion, drift_iv, diffusion_iv,
                     LinearPolicy([[sigma]]), domain, True, {"a": a, "sigma": sigma})
    spec = RasSpec(
        domain=domain,
        init=BoxUnion.of([[[1.2, 1.6]]]),
        target=BoxUnion.of([[[-1.0, 1.0]]]),
        # limit of the shrinking unsafe band; the schedule below is exact
        unsafe=BoxUnion.of([[[2.0, 10.0]]]),
        eps=0.5,
        delta=0.5,
        unsafe_schedule=lambda t: BoxUnion.of([[[2.0 + 8.0 * math.exp(-0.075 * t), 10.0]]]),
    )
    return model, spec


PENDULUM_CONSTANTS = {"gravity": 9.81, "length": 0.5, "mass": 0.15, "friction": 0.1, "max_torque": 6.0}


def pendulum_sets() -> dict:
    pi = math.pi
    return {
        "domain": Interval([-20.0, -2 * pi], [20.0, 2 * pi]),
        "init": BoxUnion.of([[[-1.0, 1.0], [0.75 * pi, 1.25 * pi]]]),
        "target": BoxUnion.of([[[-4.0, 4.0], [-0.5 * pi, 0.5 * pi]]]),
        "unsafe": BoxUnion.of([
            [[-20.0, -10.0], [-2 * pi, -1.5 * pi]],
            [[10.0, 20.0], [1.5 * pi, 2 * pi]],
        ]),
    }


def pendulum_model(policy, sigma: float = 0.1, **constants) -> SdeModel:
    """Stochastic inverted pendulum, state ``(φ, θ)`` = (angular velocity, angle).

    ``dφ = (g/L sin θ + (M u - b φ)/(m L²)) dt + σ dW``, ``dθ = φ dt``.
    """
    c = {**PENDULUM_CONSTANTS, **constants}
    g_over_l = c["gravity"] / c["length"]
    inertia = c["mass"] * c["length"] ** 2
    torque = c["max_torque"] / inertia
    damping = c["friction"] / inertia

    def drift(x, u):
        phi, theta = x[:, 0], x[:, 1]
        return np.stack([g_over_l * np.sin(theta) + torque * u[:, 0] - damping * phi, phi], axis=1)

    def diffusion(x, u):
        g = np.zeros((x.shape[0], 2, 1))
        g[:, 0, 0] = sigma
        return g

    def drift_iv(box, u):
        phi, theta = box[:, 0], box[:, 1]
        # φ appears twice in the first row only through -bφ, so no dependency loss
        first = iv_fn("sin", theta) * g_over_l + u[:, 0] * torque + phi * (-damping)
        return _stack_iv([first, phi], axis=1)

    def diffusion_iv(box, u):
        return Interval.point(diffusion(box.lo, None))

    sets = pendulum_sets()
    return SdeModel("inverted-pendulum", 2, 1, drift, diffusion, drift_iv, diffusion_iv, policy,
                    sets["domain"], True, {"sigma": sigma, **c})


def load_pendulum_policy(path=None) -> NeuralPolicy:
    path = Path(path) if path is not None else PENDULUM_POLICY_PATH
    if not path.exists():
        raise ConfigError(f"pendulum policy checkpoint {path} not found; run scripts/train_pendulum_policy.py")
    return NeuralPolicy(mlp_mod.load(path), squash="tanh", centre=True, source=str(path))


def inverted_pendulum(sigma: float = 0.1, policy=None) -> tuple[SdeModel, RasSpec]:
    policy = load_pendulum_policy() if policy is None else policy
    model = pendulum_model(policy, sigma=sigma)
    sets = pendulum_sets()
    spec = RasSpec(sets["domain"], sets["init"], sets["target"], sets["unsafe"], eps=0.9, delta=0.9)
    return model, spec


GBM_MU = np.array([[-0.5, 1.0], [-1.0, -0.5]])


def bivariate_gbm(literal_sign: bool = False, vol: float = 0.2) -> tuple[SdeModel, RasSpec]:
    """Controlled bivariate GBM with σ(x) = vol·diag(x) and policy π(x) = -x.

    By default the control enters as ``μx + u`` so that π(x) = -x stabilises
    the system (closed loop ``(μ - I)x``). ``literal_sign=True`` uses
    ``μx - u`` instead, whose closed loop ``(μ + I)x`` is unstable.
    """
    sign = -1.0 if literal_sign else 1.0

    def drift(x, u):
        return x @ GBM_MU.T + sign * u

    def diffusion(x, u):
        return vol * x[:, :, None] * np.eye(2)[None]

    def drift_iv(box, u):
        return ivmat_mul(box, GBM_MU.T) + u * sign

    def diffusion_iv(box, u):
        d = box * vol
        zero = np.zeros(box.shape[0])
        lo = np.stack([np.stack([d.lo[:, 0], zero], 1), np.stack([zero, d.lo[:, 1]], 1)], 1)
        hi = np.stack([np.stack([d.hi[:, 0], zero], 1), np.stack([zero, d.hi[:, 1]], 1)], 1)
        return Interval(lo, hi, check=False)

    policy = LinearPolicy(-np.eye(2))
    closed = GBM_MU - sign * np.eye(2)

    domain = Interval([-100.0, -100.0], [100.0, 100.0])
    # the closed-loop drift is linear, so one exact product gives tight bounds
    model = SdeModel("bivariate-gbm", 2, 2, drift, diffusion, drift_iv, diffusion_iv, policy, domain,
                     True, {"vol": vol, "literal_sign": literal_sign, "closed_loop": closed.tolist()},
                     closed_loop_bounds=lambda box: (ivmat_mul(box, closed.T), diffusion_iv(box, None)))
    spec = RasSpec(
        domain=domain,
        init=BoxUnion.of([[[45.0, 55.0], [-55.0, -45.0]]]),
        target=BoxUnion.of([[[-25.0, 25.0], [-25.0, 25.0]]]),
        unsafe=BoxUnion.of([[[-100.0, -80.0], [-100.0, 100.0]]]),
        eps=0.9,
        delta=0.9,
    )
    return model, spec


BUILTINS = ("toy-gbm", "inverted-pendulum", "bivariate-gbm")


def builtin(name: str, **options) -> tuple[SdeModel, RasSpec]:
    """Return ``(model, spec)`` for a named benchmark system."""
    if name == "toy-gbm":
        return toy_gbm(**options)
    if name == "inverted-pendulum":
        return inverted_pendulum(**options)
    if name == "bivariate-gbm":
        return bivariate_gbm(**options)
    raise ConfigError(f"unknown builtin model {name!r}; choose from {', '.join(BUILTINS)}")


# user-defined systems --------------------------------------------------------------


def expression_model(state: Sequence[str], drift: Sequence[str], diffusion: Sequence[Sequence[str]],
                     policy, control: Sequence[str] = (), name: str = "custom",
                     domain: Interval | None = None) -> SdeModel:
    """Model whose drift and diffusion entries are closed-form expressions.

    Expressions may use state and control names. The diffusion must have at
    most one nonzero entry per column, which keeps g gᵀ diagonal.
    """
    state, control = list(state), list(control)
    names = state + control
    l = len(state)
    if len(drift) != l or len(diffusion) != l:
        raise ShapeError("drift and diffusion need one row per state variable")
    k = len(diffusion[0])
    if any(len(row) != k for row in diffusion):
        raise ShapeError("diffusion rows differ in length")
    f_exprs = [parse(e, names) for e in drift]
    g_exprs = [[parse(e, names) for e in row] for row in diffusion]
    for r in range(k):
        if sum(not g_exprs[i][r].is_zero for i in range(l)) > 1:
            raise ConfigError("diffusion column couples several states; g gᵀ would not be diagonal")
    if policy.control_dim != len(control):
        raise ShapeError(f"policy gives {policy.control_dim} controls, model names {len(control)}")

    def env_point(x, u):
        env = {n: x[:, i] for i, n in enumerate(state)}
        env.update({n: u[:, j] for j, n in enumerate(control)})
        return env

    def env_iv(box, u):
        env = {n: box[:, i] for i, n in enumerate(state)}
        env.update({n: u[:, j] for j, n in enumerate(control)})
        return env

    def drift_fn(x, u):
        env = env_point(x, u)
        return np.stack([np.broadcast_to(e(env), x.shape[:1]) for e in f_exprs], axis=1)

    def diffusion_fn(x, u):
        env = env_point(x, u)
        n = x.shape[0]
        return np.stack([np.stack([np.broadcast_to(e(env), (n,)) for e in row], axis=1)
                         for row in g_exprs], axis=1)

    def drift_iv(box, u):
        env = env_iv(box, u)
        c = box.shape[0]
        parts = [e.interval(env) for e in f_exprs]
        return Interval(np.stack([np.broadcast_to(p.lo, (c,)) for p in parts], 1),
                        np.stack([np.broadcast_to(p.hi, (c,)) for p in parts], 1), check=False)

    def diffusion_iv(box, u):
        env = env_iv(box, u)
        c = box.shape[0]
        rows = [[e.interval(env) for e in row] for row in g_exprs]
        lo = np.stack([np.stack([np.broadcast_to(p.lo, (c,)) for p in row], 1) for row in rows], 1)
        hi = np.stack([np.stack([np.broadcast_to(p.hi, (c,)) for p in row], 1) for row in rows], 1)
        return Interval(lo, hi, check=False)

    return SdeModel(name, l, k, drift_fn, diffusion_fn, drift_iv, diffusion_iv, policy, domain, True,
                    {"state": state, "control": control, "drift": list(drift),
                     "diffusion": [list(r) for r in diffusion]})

"""Euler–Maruyama simulation and Monte Carlo estimates of RAS events.

Every path draws its Brownian increments from its own stream
``default_rng([seed, path_id])``, so results do not depend on chunking or on
the number of worker threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import RasSpec, SdeModel
from .errors import ConfigError, NumericalError, ShapeError
from .mlp import Mlp, forward
from .verifier import worker_count

SCHEMES = ("euler-maruyama",)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    n_paths: int = 1
    seed: int = 0
    scheme: str = "euler-maruyama"
    bounded: bool = True  # clamp at the model domain and record the exit
    chunk: int = 2048

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.horizon >= self.dt:
            raise ConfigError(f"horizon {self.horizon} is shorter than dt {self.dt}")
        if self.n_paths < 1 or self.chunk < 1:
            raise ConfigError("n_paths and chunk must be positive")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (steps + 1, l)
    stream: int
    exit_step: int | None = None

    @property
    def exited(self) -> bool:
        return self.exit_step is not None


def _increments(cfg: SimConfig, ids: np.ndarray, k: int) -> np.ndarray:
    """Brownian increments ``(c, steps, k)`` for the given path ids."""
    scale = math.sqrt(cfg.dt)
    out = np.empty((len(ids), cfg.steps, k))
    for row, pid in enumerate(ids):
        out[row] = np.random.default_rng([cfg.seed, int(pid)]).standard_normal((cfg.steps, k)) * scale
    return out


def _integrate(model: SdeModel, x0: np.ndarray, ids: np.ndarray, cfg: SimConfig,
               on_step: Callable | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Advance a chunk of paths to the horizon.

    ``on_step(step, x, exited)`` sees the state after every step (and step 0).
    Returns the final states and the exit step of each path (-1 if none).
    """
    x = np.array(x0, dtype=float)
    dw = _increments(cfg, ids, model.noise_dim)
    exit_step = np.full(len(x), -1)
    dom = model.domain if cfg.bounded else None
    if dom is not None:
        outside = np.any((x < dom.lo) | (x > dom.hi), axis=1)
        x = np.clip(x, dom.lo, dom.hi)
        exit_step[outside] = 0
    if on_step is not None:
        on_step(0, x, exit_step >= 0)
    for s in range(cfg.steps):
        alive = exit_step < 0
        if np.any(alive):
            xa = x[alive]
            f, g = model.closed_loop(xa)
            nxt = xa + f * cfg.dt + np.einsum("nik,nk->ni", g, dw[alive, s])
            if not np.all(np.isfinite(nxt)):
                raise NumericalError(f"non-finite state at step {s + 1}", step=s + 1)
            if dom is not None:
                out = np.any((nxt < dom.lo) | (nxt > dom.hi), axis=1)
                nxt = np.clip(nxt, dom.lo, dom.hi)
                idx = np.flatnonzero(alive)[out]
                exit_step[idx] = s + 1
            x[alive] = nxt
        if on_step is not None:
            on_step(s + 1, x, exit_step >= 0)
    return x, exit_step


def _starts(model: SdeModel, x0, n: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (n, x0.shape[0]))
    if x0.shape != (n, model.state_dim):
        raise ShapeError(f"need {n} start states of dimension {model.state_dim}, got {x0.shape}")
    return x0


def _chunked(cfg: SimConfig, fn: Callable[[np.ndarray], object]) -> list:
    ids = np.arange(cfg.n_paths)
    parts = [ids[i:i + cfg.chunk] for i in range(0, len(ids), cfg.chunk)]
    workers = min(worker_count(), len(parts))
    if workers <= 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, parts))


def simulate(model: SdeModel, x0, cfg: SimConfig, path_id: int = 0) -> Trajectory:
    """One Euler–Maruyama path from ``x0``."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if x0.shape[1] != model.state_dim:
        raise ShapeError(f"start state of dimension {x0.shape[1]} for a {model.state_dim}-D model")
    states = np.empty((cfg.steps + 1, model.state_dim))

    def keep(step, x, _):
        states[step] = x[0]

    _, exit_step = _integrate(model, x0, np.array([path_id]), cfg, keep)
    ex = int(exit_step[0])
    return Trajectory(cfg.times(), states, path_id, None if ex < 0 else ex)


def simulate_paths(model: SdeModel, x0, cfg: SimConfig) -> list[Trajectory]:
    """``cfg.n_paths`` stored paths from one start state or from one state per path."""
    starts = _starts(model, x0, cfg.n_paths)
    times = cfg.times()

    def run(ids):
        states = np.empty((len(ids), cfg.steps + 1, model.state_dim))

        def keep(step, x, _):
            states[:, step] = x

        _, ex = _integrate(model, starts[ids], ids, cfg, keep)
        return [Trajectory(times, states[j], int(pid), None if ex[j] < 0 else int(ex[j]))
                for j, pid in enumerate(ids)]

    return [t for part in _chunked(cfg, run) for t in part]


def terminal_states(model: SdeModel, x0, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Final states ``(n, l)`` and exit steps (-1 when none) without storing paths."""
    starts = _starts(model, x0, cfg.n_paths)
    parts = _chunked(cfg, lambda ids: _integrate(model, starts[ids], ids, cfg))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# event estimates ---------------------------------------------------------------


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else float("nan")


@dataclass(frozen=True)
class RasEstimate:
    p_ra: float
    p_stay: float  # among reach-avoid paths; nan when none reached
    se_ra: float
    se_stay: float
    n_paths: int
    n_reached: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _RasTracker:
    """Streaming evaluation of the reach-avoid and stay events for a chunk."""

    def __init__(self, spec: RasSpec, n: int, cfg: SimConfig, settle_window: float):
        self.spec = spec
        self.dt = cfg.dt
        self.settle = settle_window
        self.reached = np.zeros(n, bool)
        self.failed = np.zeros(n, bool)  # unsafe or exit before reaching
        self.run_start = np.full(n, np.nan)
        self.settled = np.zeros(n, bool)
        self.left = np.zeros(n, bool)

    def __call__(self, step: int, x: np.ndarray, exited: np.ndarray) -> None:
        t = step * self.dt
        spec = self.spec
        unsafe = spec.unsafe_schedule(t) if spec.unsafe_schedule is not None else spec.unsafe
        in_target = spec.target.contains(x) & ~exited
        open_ = ~self.reached & ~self.failed
        hit = open_ & in_target
        self.reached |= hit
        bad = open_ & ~hit & (exited | (unsafe.contains(x) if len(unsafe) else False))
        self.failed |= bad
        # stay bookkeeping on reach-avoid paths only
        r = self.reached
        start = r & in_target & np.isnan(self.run_start)
        self.run_start[start] = t
        self.left |= r & self.settled & ~in_target
        self.run_start[r & ~in_target] = np.nan
        done = r & ~self.settled & in_target & (t - self.run_start >= self.settle - 1e-12)
        self.settled |= done

    def counts(self) -> tuple[int, int]:
        stay = self.reached & self.settled & ~self.left
        return int(self.reached.sum()), int(stay.sum())


def estimate_ras(model: SdeModel, spec: RasSpec, x0, cfg: SimConfig, settle_window: float = 0.0) -> RasEstimate:
    """Monte Carlo frequencies of the reach-avoid event and of staying afterwards.

    Paths that have not reached the target by the horizon count as failures.
    The stay event starts at the first target entry that lasts
    ``settle_window`` seconds and must then hold until the horizon.
    """
    if settle_window < 0:
        raise ConfigError("settle_window must be nonnegative")
    starts = _starts(model, x0, cfg.n_paths)

    def run(ids):
        tracker = _RasTracker(spec, len(ids), cfg, settle_window)
        _integrate(model, starts[ids], ids, cfg, tracker)
        return tracker.counts()

    parts = _chunked(cfg, run)
    reached = sum(p[0] for p in parts)
    stayed = sum(p[1] for p in parts)
    n = cfg.n_paths
    p_ra = reached / n
    p_stay = stayed / reached if reached else float("nan")
    return RasEstimate(p_ra, p_stay, binomial_se(p_ra, n), binomial_se(p_stay, reached), n, reached)


def stopped_certificate_means(model: SdeModel, cert: Mlp, x0, cfg: SimConfig, lower: float, upper: float,
                              checkpoints: int = 10) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample mean and standard error of V at evenly spaced times.

    Each path is frozen once V leaves ``[lower, upper)`` or the path leaves the
    domain, so the means track the stopped process.
    """
    if checkpoints < 2:
        raise ConfigError("need at least two checkpoints")
    starts = _starts(model, x0, cfg.n_paths)
    marks = np.unique(np.linspace(0, cfg.steps, checkpoints).round().astype(int))

    def run(ids):
        c = len(ids)
        stopped = np.zeros(c, bool)
        frozen = np.empty(c)
        sums = np.zeros((len(marks), 2))

        def watch(step, x, exited):
            v = forward(cert, x).reshape(c)
            newly = ~stopped & (exited | (v < lower) | (v >= upper))
            frozen[newly] = v[newly]
            stopped[newly] = True
            hits = np.flatnonzero(marks == step)
            if hits.size:
                vals = np.where(stopped, frozen, v)
                sums[hits[0]] = vals.sum(), (vals * vals).sum()

        _integrate(model, starts[ids], ids, cfg, watch)
        return sums

    total = sum(_chunked(cfg, run))
    n = cfg.n_paths
    mean = total[:, 0] / n
    var = np.maximum(total[:, 1] / n - mean ** 2, 0.0)
    return marks * cfg.dt, mean, np.sqrt(var / n)


# export ------------------------------------------------------------------------


def export_paths(trajectories, path) -> None:
    """CSV with one row per (path_id, t, x1..xl)."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ConfigError("nothing to export")
    l = trajectories[0].states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t"] + [f"x{i + 1}" for i in range(l)])
        for tr in trajectories:
            for t, x in zip(tr.times, tr.states):
                w.writerow([tr.stream, repr(float(t))] + [repr(float(v)) for v in x])


def read_paths(path) -> list[Trajectory]:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pid = int(row.pop("path_id"))
            t = float(row.pop("t"))
            rows.setdefault(pid, []).append((t, [float(v) for v in row.values()]))
    out = []
    for pid, items in rows.items():
        times = np.array([t for t, _ in items])
        out.append(Trajectory(times, np.array([x for _, x in items]), pid))
    return out

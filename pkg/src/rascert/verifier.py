"""Grid-based verification of reach-avoid-stay certificates.

The domain is tiled by ``m**l`` equal cells. Interval bound propagation gives
value bounds per cell, from which the certified reach-avoid and stay
probabilities follow; the decrease condition is then checked on every cell of
the relevant level band, bisecting cells whose generator bound is not
negative up to a maximum depth.
"""

from __future__ import annotations

import csv
import itertools
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import RasSpec, SdeModel
from .errors import SpecError
from .generator import generator_interval
from .interval import Interval
from .mlp import Mlp, forward_interval, value_bounds

DEFAULT_CHUNK = 4096


@dataclass(frozen=True)
class Cell:
    box: Interval
    v_low: float
    v_up: float
    depth: int


class Cells:
    """Struct-of-arrays collection of cells; indexing yields :class:`Cell`."""

    def __init__(self, lo, hi, depth=None, v_low=None, v_up=None, gen_up=None):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        n = self.lo.shape[0]
        self.depth = np.zeros(n, dtype=int) if depth is None else np.asarray(depth, dtype=int)
        self.v_low = v_low
        self.v_up = v_up
        self.gen_up = gen_up

    def __len__(self) -> int:
        return self.lo.shape[0]

    def __getitem__(self, i: int) -> Cell:
        v_low = float(self.v_low[i]) if self.v_low is not None else float("nan")
        v_up = float(self.v_up[i]) if self.v_up is not None else float("nan")
        return Cell(Interval(self.lo[i], self.hi[i]), v_low, v_up, int(self.depth[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self) -> int:
        return self.lo.shape[1]

    @property
    def boxes(self) -> Interval:
        return Interval(self.lo, self.hi, check=False)

    def select(self, mask) -> Cells:
        pick = lambda a: None if a is None else a[mask]
        return Cells(self.lo[mask], self.hi[mask], self.depth[mask], pick(self.v_low),
                     pick(self.v_up), pick(self.gen_up))


def build_grid(domain: Interval, m: int) -> Cells:
    """``m`` equal intervals per dimension, all Cartesian products (``m**l`` cells)."""
    if m < 1:
        raise ValueError("m must be positive")
    edges = [np.linspace(lo, hi, m + 1) for lo, hi in zip(domain.lo, domain.hi)]
    idx = np.stack(np.meshgrid(*[np.arange(m)] * len(edges), indexing="ij"), axis=-1).reshape(-1, len(edges))
    lo = np.stack([edges[d][idx[:, d]] for d in range(len(edges))], axis=1)
    hi = np.stack([edges[d][idx[:, d] + 1] for d in range(len(edges))], axis=1)
    return Cells(lo, hi)


def split_cells(cells: Cells) -> Cells:
    """Bisect every cell along every dimension into ``2**l`` children."""
    l = cells.dim
    mid = 0.5 * (cells.lo + cells.hi)
    los, his = [], []
    for corner in itertools.product((0, 1), repeat=l):
        c = np.array(corner, dtype=bool)
        los.append(np.where(c, mid, cells.lo))
        his.append(np.where(c, cells.hi, mid))
    lo = np.stack(los, axis=1).reshape(-1, l)
    hi = np.stack(his, axis=1).reshape(-1, l)
    return Cells(lo, hi, np.repeat(cells.depth + 1, 2 ** l))


def worker_count() -> int:
    env = os.environ.get("RAS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map_chunks(fn: Callable[[Interval], np.ndarray], lo: np.ndarray, hi: np.ndarray,
                chunk: int = DEFAULT_CHUNK, workers: int | None = None):
    starts = range(0, lo.shape[0], chunk)
    jobs = [Interval(lo[s:s + chunk], hi[s:s + chunk], check=False) for s in starts]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def bound_cells(cert: Mlp, cells: Cells, chunk: int = DEFAULT_CHUNK, centred: bool = True) -> Cells:
    """Attach value bounds ``v_low``/``v_up`` to every cell.

    ``centred`` intersects plain IBP with the mean-value form; both are sound.
    """
    fn = (lambda b: value_bounds(cert, b)) if centred else (lambda b: forward_interval(cert, b))
    parts = _map_chunks(fn, cells.lo, cells.hi, chunk)
    if parts:
        v_low = np.concatenate([p.lo for p in parts])
        v_up = np.concatenate([p.hi for p in parts])
    else:
        v_low = v_up = np.zeros(0)
    return Cells(cells.lo, cells.hi, cells.depth, v_low, v_up)


def _ratio_prob(alpha: float, beta: float) -> float:
    if not np.isfinite(beta):
        return 1.0
    if beta <= 0.0:
        return 0.0
    return max(0.0, 1.0 - alpha / beta)


def reach_avoid_probability(cells: Cells, spec: RasSpec) -> tuple[float, float, float]:
    """``(ε̂, α̂_RA, β̂_RA)``: max V_up over initial cells, min V_low over unsafe cells."""
    if spec.unsafe.is_empty:
        if spec.mode == "stay-only":
            return 1.0, float("nan"), float("inf")
        raise SpecError("reach-avoid verification needs a nonempty unsafe set")
    init_cells = spec.init.intersects(cells.lo, cells.hi)
    unsafe_cells = spec.unsafe.intersects(cells.lo, cells.hi)
    if not init_cells.any() or not unsafe_cells.any():
        raise SpecError("no grid cell meets the initial or unsafe set")
    alpha = float(cells.v_up[init_cells].max())
    beta = float(cells.v_low[unsafe_cells].min())
    return _ratio_prob(alpha, beta), alpha, beta


def target_boundary_cells(cells: Cells, spec: RasSpec) -> np.ndarray:
    """Cells meeting the target and not contained in one target box (a superset of ∂X⋆ cells)."""
    return spec.target.intersects(cells.lo, cells.hi) & ~spec.target.covers(cells.lo, cells.hi)


def stay_probability(cells: Cells, spec: RasSpec) -> tuple[float, float, float]:
    """``(δ̂, α̂_S, β̂_S)``: min V_up over target cells, min V_low over boundary cells."""
    in_target = spec.target.intersects(cells.lo, cells.hi)
    boundary = target_boundary_cells(cells, spec)
    if not in_target.any() or not boundary.any():
        raise SpecError("no grid cell meets the target set or its boundary")
    alpha = float(cells.v_up[in_target].min())
    beta = float(cells.v_low[boundary].min())
    return _ratio_prob(alpha, beta), alpha, beta


def decrease_candidates(cells: Cells, alpha_s_hat: float, beta_ra_hat: float,
                        exclude_inside: RasSpec | None = None) -> np.ndarray:
    """Cells with ``V_low > α̂_S`` and ``V_up ≤ β̂_RA`` (optionally not strictly inside X⋆)."""
    mask = (cells.v_low > alpha_s_hat) & (cells.v_up <= beta_ra_hat)
    if exclude_inside is not None:
        mask &= ~exclude_inside.target.covers_strictly(cells.lo, cells.hi)
    return mask


@dataclass
class DecreaseResult:
    unverified: Cells
    cells_processed: int
    max_depth_used: int


def generator_upper_cells(model: SdeModel, cert: Mlp, cells: Cells, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    def bound(b: Interval) -> np.ndarray:
        return generator_interval(model, cert, b).hi

    parts = _map_chunks(bound, cells.lo, cells.hi, chunk)
    return np.concatenate(parts) if parts else np.zeros(0)


def decrease_check(model: SdeModel, cert: Mlp, cells: Cells, k: int,
                   chunk: int = DEFAULT_CHUNK) -> DecreaseResult:
    """Check G V < 0 on ``cells``, bisecting failures up to depth ``k``.

    Returns the cells still unverified at the final depth, sorted by
    descending generator bound.
    """
    processed = len(cells)
    gen = generator_upper_cells(model, cert, cells, chunk)
    bad = cells.select(gen >= 0.0)
    bad.gen_up = gen[gen >= 0.0]
    depth = 0
    while len(bad) > 0 and depth < k:
        children = split_cells(bad)
        depth += 1
        processed += len(children)
        gen = generator_upper_cells(model, cert, children, chunk)
        keep = gen >= 0.0
        bad = children.select(keep)
        bad.gen_up = gen[keep]
    if len(bad):
        order = np.argsort(-bad.gen_up, kind="stable")
        bad = bad.select(order)
    return DecreaseResult(bad, processed, depth)


@dataclass
class VerificationReport:
    eps_hat: float
    delta_hat: float | None
    alpha_ra_hat: float
    beta_ra_hat: float
    alpha_s_hat: float | None
    beta_s_hat: float | None
    unverified_count: int
    cells_processed: int
    max_depth_used: int
    duration: float
    verdict: str  # yes | no-probability | no-decrease
    failed_stage: str | None = None
    m: int = 0
    k: int = 0
    mode: str = "reach-avoid-stay"
    counterexamples: list = field(default_factory=list)
    unverified: Cells | None = field(default=None, repr=False, compare=False)

    @property
    def yes(self) -> bool:
        return self.verdict == "yes"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "unverified"}


def verify(model: SdeModel, cert: Mlp, spec: RasSpec, m: int, k: int, grid: Cells | None = None,
           chunk: int = DEFAULT_CHUNK, n_counterexamples: int = 5) -> VerificationReport:
    """One verification pass; stops early when a probability target is missed."""
    t0 = time.perf_counter()
    cells = bound_cells(cert, grid if grid is not None else build_grid(spec.domain, m), chunk)
    mode = spec.mode
    nan = float("nan")

    def report(verdict, stage, eps_hat, ra, s, dres=None):
        return VerificationReport(
            eps_hat=eps_hat,
            delta_hat=s[0] if s else None,
            alpha_ra_hat=ra[0], beta_ra_hat=ra[1],
            alpha_s_hat=s[1] if s else None, beta_s_hat=s[2] if s else None,
            unverified_count=len(dres.unverified) if dres else 0,
            cells_processed=len(cells) + (dres.cells_processed if dres else 0),
            max_depth_used=dres.max_depth_used if dres else 0,
            duration=time.perf_counter() - t0,
            verdict=verdict, failed_stage=stage, m=m, k=k, mode=mode,
            counterexamples=[] if not dres else [
                {"lo": dres.unverified.lo[i].tolist(), "hi": dres.unverified.hi[i].tolist(),
                 "gen_up": float(dres.unverified.gen_up[i]), "depth": int(dres.unverified.depth[i])}
                for i in range(min(n_counterexamples, len(dres.unverified)))
            ],
            unverified=dres.unverified if dres else None,
        )

    if mode == "stay-only":
        eps_hat, a_ra, b_ra = (reach_avoid_probability(cells, spec) if not spec.unsafe.is_empty
                               else (1.0, nan, float("inf")))
    else:
        eps_hat, a_ra, b_ra = reach_avoid_probability(cells, spec)
        if eps_hat < spec.eps:
            return report("no-probability", "reach-avoid", eps_hat, (a_ra, b_ra), None)

    stay = None
    if mode != "reach-avoid-only":
        stay = stay_probability(cells, spec)
        if stay[0] < spec.delta:
            return report("no-probability", "stay", eps_hat, (a_ra, b_ra), stay)
        mask = decrease_candidates(cells, stay[1], b_ra)
    else:
        mask = decrease_candidates(cells, -np.inf, b_ra, exclude_inside=spec)

    dres = decrease_check(model, cert, cells.select(mask), k, chunk)
    verdict = "yes" if len(dres.unverified) == 0 else "no-decrease"
    return report(verdict, None if verdict == "yes" else "decrease", eps_hat, (a_ra, b_ra), stay, dres)


def export_cells_csv(cells: Cells, path, extra: dict[str, np.ndarray] | None = None) -> None:
    """Per-cell bounds as CSV: ``x{i}_lo, x{i}_hi`` per dimension, ``v_low, v_up`` and extras."""
    extra = extra or {}
    header = []
    for d in range(cells.dim):
        header += [f"x{d + 1}_lo", f"x{d + 1}_hi"]
    header += ["v_low", "v_up", *extra]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(cells)):
            row = []
            for d in range(cells.dim):
                row += [repr(float(cells.lo[i, d])), repr(float(cells.hi[i, d]))]
            row += [repr(float(cells.v_low[i])), repr(float(cells.v_up[i]))]
            row += [repr(float(v[i])) for v in extra.values()]
            w.writerow(row)

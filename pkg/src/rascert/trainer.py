"""Certificate training: levels, batches, the certificate loss and Adam.

The loss over a batch is

    L = L_unsafe + L_init + L_goal + L_decrease + R

with hinge penalties ``(·)⁺`` on sampled states and ``R`` a multiple of the
product of layer operator norms. :func:`certify_loop` alternates ``q`` Adam
steps with a full verification until the certificate is proven or the epoch
budget runs out.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dynamics import BoxUnion, RasSpec, SdeModel, eval_drift_diffusion, membership
from .errors import ConfigError, NumericalError
from .generator import _require_diagonal, noise_power
from .mlp import Mlp, certificate_net, forward, tensor_derivatives, tensor_forward
from .verifier import VerificationReport, build_grid, verify

LOSS_TERMS = ("unsafe", "init", "goal", "decrease", "reg")


@dataclass(frozen=True)
class Levels:
    alpha_s: float
    beta_s: float
    alpha_ra: float
    beta_ra: float

    def __post_init__(self):
        if not 0.0 < self.alpha_s < self.beta_s < self.alpha_ra < self.beta_ra:
            raise ConfigError(f"levels must satisfy 0 < α_S < β_S < α_RA < β_RA, got {self}")

    def scale_stay(self, c: float) -> Levels:
        """Move the stay pair by a common factor; only its ratio enters δ."""
        return Levels(self.alpha_s * c, self.beta_s * c, self.alpha_ra, self.beta_ra)


def init_levels(eps: float, delta: float, kappa: float) -> Levels:
    """Training levels with slack ``κ`` over the probabilities to be verified."""
    if not (0.0 <= eps < 1.0 and 0.0 <= delta < 1.0):
        raise ConfigError("eps and delta must lie in [0, 1)")
    if not kappa > 1.0:
        raise ConfigError(f"kappa must exceed 1, got {kappa}")
    alpha_ra = 1.0
    beta_s = 0.9
    return Levels(alpha_s=beta_s * (1.0 - delta) / kappa, beta_s=beta_s,
                  alpha_ra=alpha_ra, beta_ra=kappa * alpha_ra / (1.0 - eps))


@dataclass
class TrainConfig:
    n: int = 256  # batch size
    lam: float = 0.1  # regulariser multiplier λ
    zeta: float = 1.0  # generator threshold ζ
    kappa: float = 4.0
    q: int = 1000  # verify every q epochs
    epochs: int | None = None  # N; defaults to 30·q
    learning_rate: float = 1e-3
    seed: int = 0
    m: int = 200
    k: int = 2
    hidden: tuple = (32, 32)
    focus: bool = True  # resample unverified cells between verifications
    stay_scale: float = 1.0  # multiplies α_S and β_S, keeping their ratio

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.n < 1 or self.q < 1:
            raise ConfigError("n and q must be positive")
        if not self.kappa > 1.0:
            raise ConfigError(f"kappa must exceed 1, got {self.kappa}")
        if not self.zeta > 0.0:
            raise ConfigError(f"zeta must be positive, got {self.zeta}")
        if self.lam < 0.0 or self.learning_rate <= 0.0:
            raise ConfigError("lam must be nonnegative and the learning rate positive")
        if not 0.0 < self.stay_scale <= 1.0:
            raise ConfigError(f"stay_scale must lie in (0, 1], got {self.stay_scale}")
        if self.m < 1 or self.k < 0:
            raise ConfigError("m must be positive and k nonnegative")

    @property
    def budget(self) -> int:
        return self.epochs if self.epochs is not None else 30 * self.q


# batches ---------------------------------------------------------------------


@dataclass
class Batch:
    x: np.ndarray  # every state at which set-based terms apply
    in_init: np.ndarray
    in_target: np.ndarray
    in_unsafe: np.ndarray
    boundary: np.ndarray  # samples on the target boundary
    anchors: np.ndarray  # samples near the target box centres

# half-width of the anchor boxes relative to their target boxes
ANCHOR_FRACTION = 0.3
# anchor states are pushed below this fraction of α_S
ANCHOR_LEVEL = 0.1


def anchor_region(spec: RasSpec) -> BoxUnion:
    c = spec.target.centres()
    half = 0.5 * ANCHOR_FRACTION * (spec.target.hi - spec.target.lo)
    return BoxUnion(c - half, c + half)


def sample_batch(spec: RasSpec, n: int, rng: np.random.Generator, focus: BoxUnion | None = None) -> Batch:
    """``n`` uniform states plus ``⌈n/4⌉`` from each of X₀, X⋆, X⊘, ∂X⋆ and the anchor boxes.

    ``focus`` (typically the cells the verifier could not prove) receives
    another ``⌈n/4⌉`` states when given.
    """
    extra = math.ceil(n / 4)
    lo, hi = spec.domain.lo, spec.domain.hi
    parts = [lo + rng.random((n, spec.dim)) * (hi - lo)]
    for s in (spec.init, spec.target, spec.unsafe):
        parts.append(s.sample(extra, rng))
    if focus is not None and not focus.is_empty:
        which = rng.integers(len(focus), size=extra)
        parts.append(focus.lo[which] + rng.random((extra, spec.dim)) * (focus.hi[which] - focus.lo[which]))
    x = np.concatenate(parts)
    mem = membership(spec, x)
    return Batch(x, mem.in_init, mem.in_target, mem.in_unsafe,
                 spec.target.sample_boundary(extra, rng), anchor_region(spec).sample(extra, rng))


# loss ------------------------------------------------------------------------


def _layers(cert: Mlp, params: list | None):
    it = iter(params) if params is not None else None
    out = []
    for layer in cert.layers:
        if it is not None and layer.trainable:
            out.append((next(it), next(it), layer.activation))
        else:
            out.append((layer.weight, layer.bias, layer.activation))
    return out


def decrease_mask(spec: RasSpec, levels: Levels, v: np.ndarray, in_target_interior: np.ndarray) -> np.ndarray:
    if spec.mode == "reach-avoid-only":
        return (v <= levels.beta_ra) & ~in_target_interior
    return (v > levels.alpha_s) & (v <= levels.beta_ra)


def effective_weights(cert: Mlp) -> list[tuple[np.ndarray, np.ndarray]]:
    """``(W_eff, P)`` per trainable layer, with frozen affine layers folded in.

    ``W_eff = W @ P`` where ``P`` is the product of the frozen identity layers
    directly before it, so norms are measured in raw state coordinates.
    """
    out, pending = [], None
    for layer in cert.layers:
        if not layer.trainable:
            if layer.activation != "identity":
                raise ConfigError("only frozen affine layers can be folded")
            pending = layer.weight if pending is None else layer.weight @ pending
            continue
        fold = pending if pending is not None else np.eye(layer.in_dim)
        out.append((layer.weight @ fold, fold))
        pending = None
    return out


def regulariser(cert: Mlp, lam: float) -> tuple[float, list[np.ndarray]]:
    """``λ Π_j max_r ‖W_j[r]‖₁`` over effective layers, with a subgradient per parameter."""
    eff = effective_weights(cert)
    norms = [np.abs(w).sum(axis=1) for w, _ in eff]
    tops = [int(np.argmax(nm)) for nm in norms]
    vals = np.array([nm[t] for nm, t in zip(norms, tops)])
    total = lam * float(np.prod(vals))
    grads = []
    for j, ((w, fold), t) in enumerate(zip(eff, tops)):
        gw = np.zeros_like(w)
        gw[t] = lam * float(np.prod(np.delete(vals, j))) * np.sign(w[t])
        grads += [gw @ fold.T, np.zeros(w.shape[0])]
    return total, grads


def _terms(cert: Mlp, model: SdeModel, spec: RasSpec, levels: Levels, batch: Batch, zeta: float,
           params: list | None):
    layers = _layers(cert, params)
    mode = spec.mode
    zero = ad.Tensor(0.0)
    terms = {}

    if mode != "stay-only":
        x_u = batch.x[batch.in_unsafe]
        x_0 = batch.x[batch.in_init]
        terms["unsafe"] = ad.relu(levels.beta_ra - tensor_forward(layers, x_u)).sum() if len(x_u) else zero
        terms["init"] = ad.relu(tensor_forward(layers, x_0) - levels.alpha_ra).sum() if len(x_0) else zero
    else:
        terms["unsafe"] = terms["init"] = zero

    if mode != "reach-avoid-only":
        pocket = ad.relu(tensor_forward(layers, batch.anchors) - ANCHOR_LEVEL * levels.alpha_s).sum()
        rim = (ad.relu(levels.beta_s - tensor_forward(layers, batch.boundary)).sum()
               if len(batch.boundary) else zero)
        terms["goal"] = pocket + rim
    else:
        terms["goal"] = zero

    v = forward(cert, batch.x)
    interior = spec.target.contains_interior(batch.x) if mode == "reach-avoid-only" else None
    xd = batch.x[decrease_mask(spec, levels, v, interior)]
    if len(xd):
        f, g = eval_drift_diffusion(model, xd)
        _require_diagonal(model, g)
        _, jac, hess = tensor_derivatives(layers, xd)
        gen = (jac * f).sum(axis=1) + (hess * (0.5 * noise_power(g))).sum(axis=1)
        terms["decrease"] = ad.relu(gen + zeta).sum()
    else:
        terms["decrease"] = zero
    return terms


def loss(cert: Mlp, model: SdeModel, spec: RasSpec, levels: Levels, batch: Batch, zeta: float,
         lam: float) -> tuple[float, dict]:
    """Total loss and its parts ``{unsafe, init, goal, decrease, reg}``."""
    terms = _terms(cert, model, spec, levels, batch, zeta, None)
    parts = {name: float(t.value) for name, t in terms.items()}
    parts["reg"] = regulariser(cert, lam)[0]
    return sum(parts[k] for k in LOSS_TERMS), parts


def loss_and_grad(cert: Mlp, model: SdeModel, spec: RasSpec, levels: Levels, batch: Batch,
                  zeta: float, lam: float) -> tuple[float, dict, list[np.ndarray]]:
    """Loss, its parts and the gradient with respect to ``cert.params()``."""
    params = [ad.Tensor(p, requires_grad=True) for p in cert.params()]
    terms = _terms(cert, model, spec, levels, batch, zeta, params)
    total = terms["unsafe"] + terms["init"] + terms["goal"] + terms["decrease"]
    parts = {name: float(t.value) for name, t in terms.items()}
    reg, reg_grads = regulariser(cert, lam)
    parts["reg"] = reg
    if total.requires_grad:
        total.backward()
    grads = [(p.grad if p.grad is not None else np.zeros_like(p.value)) + rg
             for p, rg in zip(params, reg_grads)]
    value = sum(parts[k] for k in LOSS_TERMS)
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericalError("non-finite loss or gradient")
    return value, parts, grads


# optimiser -------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    stab: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_update(params: list, grads: list, adam: AdamState, lr: float) -> tuple[list, AdamState]:
    t = adam.t + 1
    b1, b2 = adam.beta1, adam.beta2
    new_m = [b1 * m + (1 - b1) * g for m, g in zip(adam.m, grads)]
    new_v = [b2 * v + (1 - b2) * g * g for v, g in zip(adam.v, grads)]
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new_p = [p - lr * (m / c1) / (np.sqrt(v / c2) + adam.stab) for p, m, v in zip(params, new_m, new_v)]
    return new_p, AdamState(new_m, new_v, t, b1, b2, adam.stab)


def train_step(cert: Mlp, adam: AdamState, grads: list, lr: float = 1e-3) -> tuple[Mlp, AdamState]:
    params, adam = adam_update(cert.params(), grads, adam, lr)
    return cert.with_params(params), adam


# loop --------------------------------------------------------------------------


@dataclass
class CertifyOutcome:
    verdict: str  # yes | no
    cert: Mlp
    report: VerificationReport | None
    reports: list = field(default_factory=list)
    epochs: int = 0

    @property
    def yes(self) -> bool:
        return self.verdict == "yes"


class Telemetry:
    """Line-delimited JSON records; a no-op without a path."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []

    def emit(self, **record) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


def certify_loop(model: SdeModel, spec: RasSpec, config: TrainConfig, cert: Mlp | None = None,
                 telemetry: Telemetry | None = None, log_every: int = 100,
                 on_verify: Callable[[int, VerificationReport], None] | None = None) -> CertifyOutcome:
    """Alternate ``q`` training epochs with verification until proven or out of budget."""
    telemetry = telemetry or Telemetry()
    levels = init_levels(spec.eps, spec.delta, config.kappa).scale_stay(config.stay_scale)
    rng = np.random.default_rng(config.seed)
    if cert is None:
        box = (spec.domain.lo, spec.domain.hi)
        cert = certificate_net(spec.dim, config.hidden, seed=config.seed, input_box=box)
    adam = AdamState.zeros_like(cert.params())
    grid = build_grid(spec.domain, config.m)
    focus = None
    reports: list[VerificationReport] = []
    telemetry.emit(event="start", model=model.name, mode=spec.mode, seed=config.seed,
                   levels=asdict(levels), config=asdict(config), time=time.time())
    t_train = time.perf_counter()
    for epoch in range(1, config.budget + 1):
        batch = sample_batch(spec, config.n, rng, focus)
        value, parts, grads = loss_and_grad(cert, model, spec, levels, batch, config.zeta, config.lam)
        cert, adam = train_step(cert, adam, grads, config.learning_rate)
        if log_every and epoch % log_every == 0:
            telemetry.emit(event="loss", epoch=epoch, loss=value, **parts)
        if epoch % config.q == 0:
            train_time = time.perf_counter() - t_train
            report = verify(model, cert, spec, config.m, config.k, grid=grid)
            reports.append(report)
            telemetry.emit(event="verify", epoch=epoch, train_duration=train_time, **report.to_dict())
            if on_verify is not None:
                on_verify(epoch, report)
            if report.yes:
                telemetry.emit(event="done", verdict="yes", epoch=epoch, verifications=len(reports))
                return CertifyOutcome("yes", cert, report, reports, epoch)
            if config.focus and report.unverified is not None and len(report.unverified):
                focus = BoxUnion(report.unverified.lo, report.unverified.hi)
            t_train = time.perf_counter()
    telemetry.emit(event="done", verdict="no", epoch=config.budget, verifications=len(reports))
    return CertifyOutcome("no", cert, reports[-1] if reports else None, reports, config.budget)

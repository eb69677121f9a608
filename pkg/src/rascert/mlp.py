"""Feed-forward networks with smooth activations.

Besides evaluation, a network exposes analytic input derivatives: the
Jacobian and the Hessian diagonal of a scalar output, computed with the
layer-wise ``B``/``F`` recursions for second-order derivatives of MLPs. The
same recursions are lifted to intervals for verification, and run on
:class:`~rascert.autodiff.Tensor` values when parameter gradients are needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .interval import Interval, iv_fn, iv_mul, iv_square, ivmat_mul

ACTIVATIONS = ("identity", "tanh", "softplus")
CHECKPOINT_FORMAT = "rascert-mlp"


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "tanh"
    trainable: bool = True

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bad layer shapes {self.weight.shape}, {self.bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    layers: list[Layer]
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer shapes do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (weight, bias per trainable layer)."""
        out = []
        for layer in self.layers:
            if layer.trainable:
                out += [layer.weight, layer.bias]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> Mlp:
        it = iter(params)
        layers = []
        for layer in self.layers:
            if layer.trainable:
                w, b = next(it), next(it)
                layers.append(Layer(np.array(w), np.array(b), layer.activation, True))
            else:
                layers.append(layer)
        return Mlp(layers, self.seed, dict(self.metadata))

    def scaled(self, c: float) -> Mlp:
        """Network computing ``c * net(x)``; only valid for identity output."""
        if self.layers[-1].activation != "identity":
            raise ConfigError("output scaling needs an identity output layer")
        last = self.layers[-1]
        layers = self.layers[:-1] + [Layer(c * last.weight, c * last.bias, "identity", last.trainable)]
        return Mlp(layers, self.seed, dict(self.metadata))


# construction ----------------------------------------------------------------


def normalizer(lows, highs) -> Layer:
    """Frozen affine layer mapping the box ``[lows, highs]`` onto ``[-1, 1]^l``."""
    lows, highs = np.asarray(lows, dtype=float), np.asarray(highs, dtype=float)
    half = 0.5 * (highs - lows)
    centre = 0.5 * (highs + lows)
    return Layer(np.diag(1.0 / half), -centre / half, "identity", trainable=False)


def init_mlp(sizes: Sequence[int], activations: Sequence[str], seed: int = 0,
             input_box: tuple | None = None) -> Mlp:
    """Uniform init with bound 1/sqrt(fan_in); optional frozen input normaliser."""
    if len(activations) != len(sizes) - 1:
        raise ConfigError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    if input_box is not None:
        layers.append(normalizer(*input_box))
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(Layer(rng.uniform(-bound, bound, (fan_out, fan_in)),
                            rng.uniform(-bound, bound, fan_out), act))
    return Mlp(layers, seed=seed)


def certificate_net(in_dim: int, hidden: Sequence[int] = (32, 32), seed: int = 0,
                    input_box: tuple | None = None) -> Mlp:
    """Scalar network with tanh hidden layers and a softplus head (V >= 0)."""
    sizes = [in_dim, *hidden, 1]
    acts = ["tanh"] * len(hidden) + ["softplus"]
    return init_mlp(sizes, acts, seed=seed, input_box=input_box)


def policy_net(in_dim: int, out_dim: int, hidden: Sequence[int] = (64, 64), seed: int = 0,
               input_box: tuple | None = None) -> Mlp:
    sizes = [in_dim, *hidden, out_dim]
    acts = ["tanh"] * len(hidden) + ["identity"]
    return init_mlp(sizes, acts, seed=seed, input_box=input_box)


# pointwise evaluation ----------------------------------------------------------


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.in_dim:
        raise ShapeError(f"input of shape {x.shape} does not match in_dim={net.in_dim}")
    return x2, single


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate on one state ``(l,)`` or a batch ``(n, l)``.

    Scalar-output networks return a float (single state) or an ``(n,)`` array.
    """
    a, single = _as_batch(net, x)
    for layer in net.layers:
        a = _act(layer.activation, a @ layer.weight.T + layer.bias)
    if net.out_dim == 1:
        a = a[:, 0]
    return a[0] if single else a


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return ad.TOWERS[name][0](z)


@dataclass
class DerivativeBundle:
    value: np.ndarray
    jacobian: np.ndarray
    hessian_diag: np.ndarray


def tensor_derivatives(layers: Sequence[tuple], x: np.ndarray, need_hessian: bool = True):
    """Value, Jacobian and Hessian diagonal of a scalar-output network.

    ``layers`` is a sequence of ``(W, b, activation)`` where ``W``/``b`` may be
    Tensors (to differentiate with respect to them) or arrays. ``x`` has shape
    ``(n, l)``. Returns Tensors of shapes ``(n,)``, ``(n, l)``, ``(n, l)``.

    The Jacobian rows ``B`` are propagated forward,
    ``B_0 = W_0``, ``B_i = W_i diag(σ'_{i-1}(z_{i-1})) B_{i-1}``, and the
    backward row vectors ``F_i`` (derivative of the output w.r.t. layer-i
    activations) are formed after the forward sweep. The Hessian is
    ``Σ_i B_iᵀ diag(F_i ⊙ σ''_i(z_i)) B_i``; the output activation is handled
    by appending a unit linear layer, so ``F_{N-1} = [1]``.
    """
    n = x.shape[0]
    a = ad.Tensor(x)
    zs, d1s, d2s, Bs = [], [], [], []
    B = None
    for idx, (W, b, act) in enumerate(layers):
        Wt = W if isinstance(W, ad.Tensor) else ad.Tensor(W)
        z = a @ Wt.T + b
        if idx == 0:
            B = ad.expand_dims(Wt, 0)  # (1, h0, l)
        else:
            B = Wt @ (ad.expand_dims(d1s[-1], 2) * B)
        d1 = ad.apply(act, z, 1)
        zs.append(z)
        d1s.append(d1)
        Bs.append(B)
        if need_hessian:
            d2s.append(ad.apply(act, z, 2))
        a = ad.apply(act, z, 0)
    value = ad.reshape(a, (n,))
    jac = ad.reshape(ad.expand_dims(d1s[-1], 2) * Bs[-1], (n, -1))
    if not need_hessian:
        return value, jac, None
    # F rows, from the output backwards
    F = ad.Tensor(np.ones((n, 1)))
    hess = None
    for idx in range(len(layers) - 1, -1, -1):
        coeff = F * d2s[idx]  # (n, h_i)
        Bsq = Bs[idx] * Bs[idx]  # (n|1, h_i, l)
        term = (ad.expand_dims(coeff, 2) * Bsq).sum(axis=1)
        hess = term if hess is None else hess + term
        if idx > 0:
            W = layers[idx][0]
            Wt = W if isinstance(W, ad.Tensor) else ad.Tensor(W)
            F = (F * d1s[idx]) @ Wt
    return value, jac, hess


def tensor_forward(layers: Sequence[tuple], x: np.ndarray):
    """Scalar network output ``(n,)`` as a Tensor, for parameter gradients."""
    a = ad.Tensor(x)
    for W, b, act in layers:
        Wt = W if isinstance(W, ad.Tensor) else ad.Tensor(W)
        a = ad.apply(act, a @ Wt.T + b, 0)
    return ad.reshape(a, (x.shape[0],))


def _layer_triples(net: Mlp) -> list[tuple]:
    return [(layer.weight, layer.bias, layer.activation) for layer in net.layers]


def derivatives(net: Mlp, x) -> DerivativeBundle:
    """Analytic value, Jacobian and Hessian diagonal of a scalar network."""
    if net.out_dim != 1:
        raise ShapeError("derivatives need a scalar-output network")
    xb, single = _as_batch(net, x)
    v, j, h = tensor_derivatives(_layer_triples(net), xb)
    if single:
        return DerivativeBundle(float(v.value[0]), j.value[0], h.value[0])
    return DerivativeBundle(v.value, j.value, h.value)


def full_hessian(net: Mlp, x) -> np.ndarray:
    """Full input Hessian of a scalar network at one state (internal checks)."""
    xb, _ = _as_batch(net, x)
    a = xb
    zs, d1s, d2s, Bs = [], [], [], []
    B = None
    for idx, layer in enumerate(net.layers):
        z = a @ layer.weight.T + layer.bias
        tower = ad.TOWERS[layer.activation]
        B = layer.weight if idx == 0 else layer.weight @ (d1s[-1][0][:, None] * B)
        zs.append(z)
        d1s.append(tower[1](z))
        d2s.append(tower[2](z))
        Bs.append(B)
        a = tower[0](z)
    F = np.ones(1)
    H = np.zeros((net.in_dim, net.in_dim))
    for idx in range(len(net.layers) - 1, -1, -1):
        H += Bs[idx].T @ np.diag(F * d2s[idx][0]) @ Bs[idx]
        if idx > 0:
            F = (F * d1s[idx][0]) @ net.layers[idx].weight
    return H


# interval evaluation ---------------------------------------------------------


def _as_box_batch(net: Mlp, box: Interval) -> tuple[Interval, bool]:
    single = box.ndim == 1
    b = box.reshape(1, -1) if single else box
    if b.ndim != 2 or b.shape[1] != net.in_dim:
        raise ShapeError(f"box of shape {box.shape} does not match in_dim={net.in_dim}")
    return b, single


def _affine_iv(layer: Layer, a: Interval) -> Interval:
    # a: (c, in) -> (c, out); exact weights so midpoint-radius is tight
    mid = a.mid @ layer.weight.T + layer.bias
    rad = a.rad @ np.abs(layer.weight).T
    return Interval.from_mid_rad(mid, rad)


def forward_interval(net: Mlp, box: Interval) -> Interval:
    """Naive IBP enclosure of the network output over a box (or batch of boxes)."""
    a, single = _as_box_batch(net, box)
    for layer in net.layers:
        a = iv_fn(layer.activation, _affine_iv(layer, a))
    if net.out_dim == 1:
        a = a[:, 0]
    return a[0] if single else a


def _interval_sweep(net: Mlp, a: Interval, second: bool):
    """Forward IBP sweep keeping activation-derivative and Jacobian-row enclosures."""
    d1s, d2s, Bs = [], [], []
    B = None
    for idx, layer in enumerate(net.layers):
        z = _affine_iv(layer, a)
        if idx == 0:
            B = Interval.point(np.broadcast_to(layer.weight, (a.shape[0], *layer.weight.shape)))
        else:
            scaled = iv_mul(d1s[-1].reshape(*d1s[-1].shape, 1), B)
            B = ivmat_mul(layer.weight, scaled)
        d1s.append(iv_fn(f"{layer.activation}_d1", z))
        if second:
            d2s.append(iv_fn(f"{layer.activation}_d2", z))
        Bs.append(B)
        a = iv_fn(layer.activation, z)
    return a[:, 0], d1s, d2s, Bs


def _hessian_terms(net: Mlp, d1s, d2s, Bs, c: int):
    """Yield ``(coeff (c, h), B (c, h, l))`` per layer with ``H = Σ Bᵀ diag(coeff) B``."""
    F = Interval.point(np.ones((c, 1)))
    for idx in range(len(net.layers) - 1, -1, -1):
        if net.layers[idx].activation != "identity":
            yield iv_mul(F, d2s[idx]), Bs[idx]
        if idx > 0:
            F = ivmat_mul(iv_mul(F, d1s[idx]), net.layers[idx].weight)


def hessian_interval(net: Mlp, box: Interval) -> Interval:
    """Enclosure of the full input Hessian over each box, shape ``(c, l, l)``."""
    b, single = _as_box_batch(net, box)
    _, d1s, d2s, Bs = _interval_sweep(net, b, True)
    l = net.in_dim
    out = Interval.point(np.zeros((b.shape[0], l, l)))
    eye = np.eye(l, dtype=bool)
    for coeff, B in _hessian_terms(net, d1s, d2s, Bs, b.shape[0]):
        outer = iv_mul(B.reshape(*B.shape, 1), B.reshape(*B.shape[:2], 1, l))  # (c, h, l, l)
        sq = iv_square(B)
        lo = np.where(eye, sq.lo[..., None], outer.lo)
        hi = np.where(eye, sq.hi[..., None], outer.hi)
        prod = Interval(lo, hi, check=False)
        out = out + iv_mul(coeff.reshape(*coeff.shape, 1, 1), prod).sum(axis=1)
    return out[0] if single else out


def derivatives_interval(net: Mlp, box: Interval, with_value: bool = False, hessian: bool = True,
                         centred: bool = False):
    """Interval enclosures of the Jacobian and Hessian diagonal over a box.

    Returns ``(jacobian, hessian_diag)`` (and the value enclosure first when
    ``with_value``), each an :class:`Interval` of shape ``(l,)`` or ``(c, l)``.
    With ``hessian=False`` the Hessian entry is ``None``. With ``centred`` the
    Jacobian is intersected with its mean-value form ``J(c) + H(box)·(box - c)``.
    """
    if net.out_dim != 1:
        raise ShapeError("derivatives need a scalar-output network")
    b, single = _as_box_batch(net, box)
    c = b.shape[0]
    value, d1s, d2s, Bs = _interval_sweep(net, b, hessian or centred)
    last = d1s[-1]
    jac = iv_mul(last.reshape(*last.shape, 1), Bs[-1])[:, 0, :]
    hess = None
    if centred:
        H = hessian_interval(net, b)
        spread = (np.maximum(np.abs(H.lo), np.abs(H.hi)) * b.rad[:, None, :]).sum(axis=2)
        j_mid = derivatives(net, b.mid).jacobian
        lo = np.maximum(jac.lo, j_mid - spread)
        hi = np.minimum(jac.hi, j_mid + spread)
        jac = Interval(lo, np.maximum(lo, hi), check=False)
        if hessian:
            idx = np.arange(net.in_dim)
            hess = Interval(H.lo[:, idx, idx], H.hi[:, idx, idx], check=False)
    elif hessian:
        for coeff, B in _hessian_terms(net, d1s, d2s, Bs, c):
            term = iv_mul(coeff.reshape(*coeff.shape, 1), iv_square(B)).sum(axis=1)
            hess = term if hess is None else hess + term
        if hess is None:
            hess = Interval.point(np.zeros(jac.shape))
    if single:
        value, jac = value[0], jac[0]
        hess = hess[0] if hess is not None else None
    return (value, jac, hess) if with_value else (jac, hess)


def value_bounds(net: Mlp, box: Interval) -> Interval:
    """IBP enclosure intersected with the mean-value form ``V(c) + J(box)·(box - c)``.

    Both enclose the range, so the intersection does too; the mean-value form
    shrinks quadratically with the box width and dominates on small cells.
    """
    b, single = _as_box_batch(net, box)
    ibp, jac, _ = derivatives_interval(net, b, with_value=True, hessian=False)
    slope = np.maximum(np.abs(jac.lo), np.abs(jac.hi))
    spread = (slope * b.rad).sum(axis=1)
    v_mid = forward(net, b.mid)
    lo = np.maximum(ibp.lo, v_mid - spread)
    hi = np.minimum(ibp.hi, v_mid + spread)
    out = Interval(lo, np.maximum(lo, hi), check=False)
    return out[0] if single else out


def op_norm_product(net: Mlp, trainable_only: bool = True) -> float:
    """Product over layers of the max row ℓ1-norm (the ∞→∞ operator norm)."""
    out = 1.0
    for layer in net.layers:
        if trainable_only and not layer.trainable:
            continue
        out *= float(np.abs(layer.weight).sum(axis=1).max())
    return out


# checkpoints -------------------------------------------------------------------


def to_dict(net: Mlp) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "seed": net.seed,
        "metadata": net.metadata,
        "layers": [
            {
                "activation": layer.activation,
                "trainable": layer.trainable,
                "shape": list(layer.weight.shape),
                "weights": layer.weight.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in net.layers
        ],
    }


def from_dict(doc: dict) -> Mlp:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("not a network checkpoint")
    layers = []
    for entry in doc["layers"]:
        shape = tuple(entry["shape"])
        w = np.array(entry["weights"], dtype=float).reshape(shape)
        layers.append(Layer(w, np.array(entry["bias"], dtype=float), entry["activation"],
                            entry.get("trainable", True)))
    return Mlp(layers, doc.get("seed"), doc.get("metadata") or {})


def save(net: Mlp, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(to_dict(net), indent=1))


def load(path) -> Mlp:
    return from_dict(json.loads(Path(path).read_text()))

"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from rascert import mlp
from rascert.dynamics import BoxUnion, RasSpec, expression_model, LinearPolicy
from rascert.interval import Interval


def random_cert(seed: int, in_dim: int = 2, hidden=(32, 32), scale: float = 1.5,
                input_box=None) -> mlp.Mlp:
    """Certificate-shaped net with weights large enough to leave the linear regime."""
    rng = np.random.default_rng(seed)
    sizes = [in_dim, *hidden, 1]
    acts = ["tanh"] * len(hidden) + ["softplus"]
    layers = []
    if input_box is not None:
        layers.append(mlp.normalizer(*input_box))
    for fi, fo, act in zip(sizes[:-1], sizes[1:], acts):
        layers.append(mlp.Layer(rng.normal(0, scale / np.sqrt(fi), (fo, fi)), rng.normal(0, 0.5, fo), act))
    return mlp.Mlp(layers, seed=seed)


def random_box(rng, lo, hi, max_width: float) -> Interval:
    """Random sub-box of ``[lo, hi]`` with side at most ``max_width``."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    w = rng.uniform(0, max_width, lo.shape) * (hi - lo)
    a = rng.uniform(lo, hi - w)
    return Interval(a, a + w)


def points_in(rng, box: Interval, n: int) -> np.ndarray:
    return rng.uniform(box.lo, box.hi, (n, box.shape[-1]))


def softplus_pair_cert(k: float = 10.0, b: float = 5.0) -> mlp.Mlp:
    """V(x) = sp(kx − b) + sp(−kx − b): even, convex, with its minimum at the origin."""
    return mlp.Mlp([
        mlp.Layer([[k], [-k]], [-b, -b], "softplus"),
        mlp.Layer([[1.0, 1.0]], [0.0], "identity"),
    ])


def ou_problem(noise: float = 0.1, mode: str = "reach-avoid-stay"):
    """dX = −X dt + noise dW on [−5, 5] with a hand-built certificate."""
    model = expression_model(["x"], ["-x"], [[str(noise)]], LinearPolicy(np.zeros((0, 1))),
                             name="ou", domain=Interval([-5.0], [5.0]))
    spec = RasSpec(
        domain=model.domain,
        init=BoxUnion.of([[[0.6, 0.8]]]),
        target=BoxUnion.of([[[-0.5, 0.5]]]),
        unsafe=BoxUnion.of([[[-5.0, -4.5]], [[4.5, 5.0]]]),
        eps=0.9, delta=0.9, mode=mode,
    )
    return model, spec

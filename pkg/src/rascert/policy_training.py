"""Swing-up policy for the built-in pendulum, fitted by backpropagation through time.

The deterministic pendulum is rolled out with explicit Euler steps under
``u = tanh(net(x) - net(0))`` and a quadratic state/effort cost is minimised
with Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import mlp
from .dynamics import PENDULUM_CONSTANTS, pendulum_sets


@dataclass
class PolicyTrainConfig:
    iterations: int = 400
    batch: int = 128
    horizon: float = 1.5
    dt: float = 0.01
    learning_rate: float = 3e-3
    angle_weight: float = 1.0
    velocity_weight: float = 0.01
    effort_weight: float = 0.01
    seed: int = 0


def _start_states(n: int, rng: np.random.Generator) -> np.ndarray:
    pi = math.pi
    sets = pendulum_sets()
    wide = np.column_stack([rng.uniform(-8, 8, n), rng.uniform(-1.4 * pi, 1.4 * pi, n)])
    init = sets["init"].sample(n // 4, rng)
    return np.concatenate([wide, init])


def rollout_cost(layers, x0: np.ndarray, cfg: PolicyTrainConfig):
    c = PENDULUM_CONSTANTS
    inertia = c["mass"] * c["length"] ** 2
    g_over_l = c["gravity"] / c["length"]
    torque = c["max_torque"] / inertia
    damping = c["friction"] / inertia
    steps = int(round(cfg.horizon / cfg.dt))
    n = x0.shape[0]
    origin = np.zeros((1, 2))

    def net(x):
        a = x
        for W, b, act in layers:
            a = ad.apply(act, a @ W.T + b, 0)
        return a

    offset = net(ad.Tensor(origin))
    phi = ad.Tensor(x0[:, 0])
    theta = ad.Tensor(x0[:, 1])
    cost = ad.Tensor(0.0)
    for _ in range(steps):
        state = ad.stack([phi, theta], axis=1)
        u = ad.reshape(ad.tanh(net(state) - offset), (n,))
        acc = ad.sin(theta) * g_over_l + u * torque - phi * damping
        phi, theta = phi + acc * cfg.dt, theta + phi * cfg.dt
        stage = (theta * theta * cfg.angle_weight + phi * phi * cfg.velocity_weight
                 + u * u * cfg.effort_weight)
        cost = cost + stage.sum() * (cfg.dt / n)
    return cost


def train_pendulum_policy(cfg: PolicyTrainConfig | None = None, log=None) -> mlp.Mlp:
    from .trainer import AdamState, adam_update

    cfg = cfg or PolicyTrainConfig()
    rng = np.random.default_rng(cfg.seed)
    dom = pendulum_sets()["domain"]
    net = mlp.policy_net(2, 1, seed=cfg.seed, input_box=(dom.lo, dom.hi))
    params = net.params()
    adam = AdamState.zeros_like(params)
    for it in range(cfg.iterations):
        tensors = [ad.Tensor(p, requires_grad=True) for p in params]
        it_t = iter(tensors)
        layers = [(next(it_t), next(it_t), l.activation) if l.trainable
                  else (ad.Tensor(l.weight), ad.Tensor(l.bias), l.activation) for l in net.layers]
        cost = rollout_cost(layers, _start_states(cfg.batch, rng), cfg)
        cost.backward()
        params, adam = adam_update(params, [t.grad for t in tensors], adam, cfg.learning_rate)
        if log is not None and it % 20 == 0:
            log(it, float(cost.value))
    out = net.with_params(params)
    out.metadata.update({"kind": "pendulum-policy", "squash": "tanh", "centred": True})
    return out

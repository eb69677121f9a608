"""Infinitesimal generator of a time-homogeneous certificate.

For a closed-loop SDE with drift ``f`` and diffusion columns ``g_r``,

    G V(x) = Σ_i f_i(x) ∂V/∂x_i + ½ Σ_i Σ_r g_{i,r}(x)² ∂²V/∂x_i²,

which is the exact Itô generator whenever g gᵀ is diagonal. Models that do
not guarantee this are rejected.
"""

from __future__ import annotations

import numpy as np

from .dynamics import SdeModel, eval_drift_diffusion, eval_drift_diffusion_interval
from .errors import ConfigError
from .interval import Interval, iv_square
from .mlp import Mlp, derivatives, derivatives_interval


def _require_diagonal(model: SdeModel, g: np.ndarray | None = None) -> None:
    if not model.diagonal_noise:
        raise ConfigError(f"{model.name}: g gᵀ is not diagonal; the generator would omit cross terms")
    if g is not None and g.shape[1] > 1:
        ggt = g @ np.swapaxes(g, 1, 2)
        off = ggt - ggt * np.eye(g.shape[1])[None]
        if np.any(np.abs(off) > 1e-12 * (1.0 + np.abs(ggt).max())):
            raise ConfigError(f"{model.name}: g gᵀ has nonzero off-diagonal entries")


def noise_power(g: np.ndarray) -> np.ndarray:
    """Σ_r g_{i,r}² per state coordinate, for ``g`` of shape ``(n, l, k)``."""
    return (g * g).sum(axis=2)


def generator_from_parts(f, g, jac, hess_diag) -> np.ndarray:
    return (f * jac).sum(axis=-1) + 0.5 * (noise_power(g) * hess_diag).sum(axis=-1)


def generator_at(model: SdeModel, cert: Mlp, x) -> np.ndarray:
    """Pointwise G V at one state (returns a float) or at a batch ``(n, l)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    f, g = eval_drift_diffusion(model, x2)
    _require_diagonal(model, g)
    d = derivatives(cert, x2)
    out = generator_from_parts(f, g, d.jacobian, d.hessian_diag)
    return float(out[0]) if single else out


def generator_interval(model: SdeModel, cert: Mlp, box: Interval, derivs=None, centred: bool = True) -> Interval:
    """Interval enclosure of G V over each box of a batch ``(c, l)``.

    ``derivs`` may carry a precomputed ``(jacobian, hessian_diag)`` pair;
    ``centred`` tightens the Jacobian with its mean-value form.
    """
    _require_diagonal(model)
    single = box.ndim == 1
    b = box.reshape(1, -1) if single else box
    f, g = eval_drift_diffusion_interval(model, b)
    jac, hess = derivs if derivs is not None else derivatives_interval(cert, b, centred=centred)
    drift_term = (f * jac).sum(axis=1)
    # squares taken per noise column before summing keep sign changes tight
    k = g.shape[2]
    power = iv_square(g[:, :, 0])
    for r in range(1, k):
        power = power + iv_square(g[:, :, r])
    out = drift_term + (power * hess).sum(axis=1) * 0.5
    return out[0] if single else out


def generator_upper(model: SdeModel, cert: Mlp, box: Interval) -> np.ndarray:
    """Upper bound of G V over a box (float) or over each box of a batch."""
    out = generator_interval(model, cert, box)
    return float(out.hi) if box.ndim == 1 else out.hi

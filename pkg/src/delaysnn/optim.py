"""AdamW with decoupled weight decay, cosine schedule and neuron-parameter clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .neuron import NeuronParams

__all__ = ["CLIP_RANGES", "OptimState", "adamw_update", "cosine_lr", "clip_neuron_params"]

CLIP_RANGES = {
    "alpha": (0.36, 0.96),
    "beta": (0.96, 0.99),
    "a": (0.0, 1.0),
    "b": (0.0, 2.0),
}


@dataclass
class OptimState:
    lr_base: float = 1e-2
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_update(opt: OptimState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 lr_t: float) -> dict[str, np.ndarray]:
    """One AdamW step, updating ``params`` in place.

    ``p <- p - lr_t * (m_hat / (sqrt(v_hat) + eps) + wd * p)``. Parameters
    without a gradient entry are left untouched.
    """
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p)
            opt.v[name] = np.zeros_like(p)
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + opt.eps) + opt.weight_decay * p
        p -= lr_t * update
    return params


def cosine_lr(epoch: int, total: int, base: float) -> float:
    if total <= 0 or not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside schedule of length {total}")
    return max(0.0, 0.5 * base * (1.0 + math.cos(math.pi * epoch / total)))


def clip_neuron_params(target):
    """Clip neuron parameters into their admissible ranges.

    Accepts a :class:`NeuronParams` (returns a clipped copy) or anything with a
    ``layers`` list of layer parameters, e.g. a ``Network`` (clipped in place).
    """
    if isinstance(target, NeuronParams):
        c = lambda v, k: min(max(v, CLIP_RANGES[k][0]), CLIP_RANGES[k][1])
        return replace(target, alpha=c(target.alpha, "alpha"), beta=c(target.beta, "beta"),
                       a_adapt=c(target.a_adapt, "a"), b_adapt=c(target.b_adapt, "b"))
    for p in target.layers:
        for name, (lo, hi) in CLIP_RANGES.items():
            arr = getattr(p, name)
            if arr is not None:
                np.clip(arr, lo, hi, out=arr)
    return target

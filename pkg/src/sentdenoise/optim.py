"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InvalidParameterError, NonFiniteError


@dataclass
class OptimizerState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise InvalidParameterError("lr and weight_decay must be non-negative, eps positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidParameterError("betas must lie in [0, 1)")

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay, "t": self.t}


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        factor = max_norm / (norm + 1e-6)
        for name in grads:
            grads[name] = grads[name] * grads[name].dtype.type(factor)
    return norm


def adamw_step(params: Mapping, grads: Mapping[str, np.ndarray], state: OptimizerState, lr: float | None = None):
    """One AdamW update, in place.

    ``params`` maps names to Tensors; parameters absent from ``grads`` are
    treated as having zero gradient.  Decay is applied first
    (``p -= lr * wd * p``), then the bias-corrected Adam step.  Every gradient
    is checked before anything is modified, so a non-finite gradient leaves
    parameters and state untouched.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}; step aborted")
    lr = state.lr if lr is None else lr
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        data = p.data
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        if state.weight_decay:
            data -= data.dtype.type(lr * state.weight_decay) * data
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        data -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return params, state

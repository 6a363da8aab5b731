"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import ContractViolation, InvalidParameterError, InvalidShapeError
from .tensor import Tensor, no_grad


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise InvalidShapeError(f"grad_check needs a scalar output, got dims {out.dims}")
    return float(out.data.reshape(-1)[0])


def grad_check(
    f: Callable[[], Tensor],
    inputs: Mapping[str, Tensor],
    h: float = 1e-6,
    per_tensor: bool = False,
):
    """Compare backprop gradients of ``f`` with central differences.

    ``f`` takes no arguments and closes over ``inputs``; every element of every
    input is perturbed by ``±h`` in place.  The relative error of an element is
    ``|a - b| / max(|a|, |b|, 1e-8)``.  Returns the maximum over all elements,
    or a ``{name: max_error}`` dict when ``per_tensor`` is set.
    """
    if h <= 0:
        raise InvalidParameterError("finite-difference step must be positive")
    for t in inputs.values():
        t.requires_grad = True
        t.zero_grad()
    out = f()
    base = _scalar(out)
    out.backward()
    with no_grad():
        if _scalar(f()) != base:
            raise ContractViolation("grad_check target is not deterministic; fix its RngStream")

        errors = {}
        for name, t in inputs.items():
            analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).astype(np.float64)
            flat = t.data.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                plus = _scalar(f())
                flat[i] = original - h
                minus = _scalar(f())
                flat[i] = original
                numeric = (plus - minus) / (2.0 * h)
                a = analytic[i]
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
            errors[name] = worst
    return errors if per_tensor else max(errors.values(), default=0.0)

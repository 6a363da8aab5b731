"""Denoising reconstruction loss, in-batch InfoNCE and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatchError, InvalidParameterError, InvalidShapeError
from .substrate import Tensor, cross_entropy_mean, l2_normalize, logsumexp, matmul, take, transpose
from .textdata import SentenceBatch

DEFAULT_TAU = 0.03


def denoising_loss(logits: Tensor, original: SentenceBatch, reduction: str = "mean") -> Tensor:
    """Token cross-entropy against the ORIGINAL ids at its real positions.

    ``reduction="sum"`` gives the literal corpus-sum form; the default mean
    keeps the loss scale independent of batch size.
    """
    if logits.shape[:2] != original.ids.shape:
        raise InvalidShapeError(f"logits {logits.shape} do not cover the original batch {original.ids.shape}")
    if not original.mask.any():
        raise DegenerateBatchError("original batch has no real tokens")
    return cross_entropy_mean(logits, original.ids, original.mask, reduction=reduction)


def token_accuracy(logits: Tensor, original: SentenceBatch) -> float:
    on = original.mask != 0
    hits = (logits.data.argmax(axis=-1) == original.ids) & on
    return float(hits.sum()) / float(on.sum())


def info_nce(z: Tensor, z_plus: Tensor, tau: float = DEFAULT_TAU, include_positive: bool = True) -> Tensor:
    """Mean over anchors of ``-log softmax_j(cos(z_i, z+_j) / tau)[i]``.

    The positives of the other rows act as negatives.  With
    ``include_positive=False`` the positive term is left out of the
    denominator (the loss can then go negative).
    """
    if z.shape != z_plus.shape or z.ndim != 2:
        raise InvalidShapeError(f"info_nce needs matching [B, d] inputs, got {z.shape} and {z_plus.shape}")
    B = z.shape[0]
    if B < 2:
        raise DegenerateBatchError("info_nce needs at least two rows for in-batch negatives")
    if tau <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {tau}")
    sim = matmul(l2_normalize(z), transpose(l2_normalize(z_plus))) * (1.0 / tau)
    diag = np.arange(B)
    positives = take(sim, (diag, diag))
    if include_positive:
        return (logsumexp(sim) - positives).mean()
    off = np.where(np.eye(B, dtype=bool), -1e9, 0.0).astype(sim.dtype)
    return (logsumexp(sim + off) - positives).mean()


@dataclass
class LossBreakdown:
    denoising: float
    contrastive: float
    combined: float
    token_accuracy: float
    total: Tensor | None = field(default=None, repr=False, compare=False)

    def as_row(self) -> tuple[float, float, float, float]:
        return self.combined, self.contrastive, self.denoising, self.token_accuracy


def combined_loss(contrastive, denoising, w_contrastive: float = 1.0, w_denoising: float = 1.0,
                  token_accuracy: float = float("nan")) -> LossBreakdown:
    """``w_c * contrastive + w_d * denoising``.

    Either component may be a Tensor (kept differentiable in ``total``), a
    float, or None for a component that was not computed (counted as 0).
    """
    if w_contrastive < 0 or w_denoising < 0:
        raise InvalidParameterError("loss weights must be non-negative")
    total = None
    value = 0.0
    parts = {}
    for name, term, weight in (("contrastive", contrastive, w_contrastive), ("denoising", denoising, w_denoising)):
        if term is None:
            parts[name] = 0.0
            continue
        if isinstance(term, Tensor):
            parts[name] = term.item()
            if weight != 0.0:
                weighted = term * weight
                total = weighted if total is None else total + weighted
        else:
            parts[name] = float(term)
        value += weight * parts[name]
    return LossBreakdown(parts["denoising"], parts["contrastive"], value, token_accuracy, total)

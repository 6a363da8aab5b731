"""Training step and loop over the combined denoising + contrastive objective."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import EmptyInputError, InvalidParameterError, NonFiniteError
from .evaluation import eval_sts
from .model import ModelConfig, ModelParams, decode_denoise, encode, init_params, wrap_batch
from .noise import NoiseConfig, load_synonyms, make_training_pair
from .objectives import LossBreakdown, combined_loss, denoising_loss, info_nce, token_accuracy
from .optim import OptimizerState, adamw_step, clip_grad_norm
from .substrate import RngStream, Tensor, no_grad
from .textdata import EvalRecord, SentenceBatch, Vocabulary, make_batch

log = logging.getLogger(__name__)

OBJECTIVES = {"combined": (1.0, 1.0), "contrastive": (1.0, 0.0), "denoising": (0.0, 1.0)}


@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 2000
    lr: float = 5e-5
    tau: float = 0.03
    p: float = 0.825
    w_contrastive: float = 1.0
    w_denoising: float = 1.0
    seed: int = 0
    eval_every: int = 500
    checkpoint_path: str | None = None
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    warmup_steps: int = 0
    contrastive_denominator: str = "with_positive"
    denoising_reduction: str = "mean"

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise InvalidParameterError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.steps < 1:
            out.append("steps must be at least 1")
        if self.batch_size < 1:
            out.append("batch_size must be at least 1")
        if self.w_contrastive < 0 or self.w_denoising < 0:
            out.append("objective weights must be non-negative")
        if self.w_contrastive == 0 and self.w_denoising == 0:
            out.append("at least one objective weight must be positive")
        if self.w_contrastive > 0 and self.batch_size < 2:
            out.append("the contrastive objective needs batch_size >= 2 for in-batch negatives")
        if self.lr < 0:
            out.append("lr must be non-negative")
        if self.tau <= 0:
            out.append("tau must be positive")
        if not 0.0 <= self.p < 1.0:
            out.append("dropout rate p must lie in [0, 1)")
        if self.eval_every < 1:
            out.append("eval_every must be at least 1")
        if self.contrastive_denominator not in ("with_positive", "negatives_only"):
            out.append("contrastive_denominator must be with_positive or negatives_only")
        if self.denoising_reduction not in ("mean", "sum"):
            out.append("denoising_reduction must be mean or sum")
        if self.warmup_steps < 0:
            out.append("warmup_steps must be non-negative")
        return out

    @property
    def objective(self) -> str:
        for name, weights in OBJECTIVES.items():
            if (self.w_contrastive, self.w_denoising) == weights:
                return name
        return "custom"

    def lr_at(self, step: int) -> float:
        """Constant rate, optionally ramped linearly over the first ``warmup_steps``."""
        if self.warmup_steps and step <= self.warmup_steps:
            return self.lr * step / self.warmup_steps
        return self.lr


@dataclass
class PreparedBatch:
    original: SentenceBatch
    augmented: SentenceBatch
    corruption_rngs: list


def prepare_batch(texts: Sequence[str], vocab: Vocabulary, noise_cfg: NoiseConfig, L: int,
                  rng: RngStream, table=None, synonyms=None) -> PreparedBatch:
    """Discrete stage for every sentence; both views share one trimmed width."""
    if synonyms is None:
        synonyms = load_synonyms()
    pairs = [make_training_pair(t, vocab, noise_cfg, table, rng.child("pair", i), synonyms)
             for i, t in enumerate(texts)]
    width = min(L, max(max(len(p.original_ids), len(p.augmented_ids)) for p in pairs))
    return PreparedBatch(
        make_batch([p.original_ids for p in pairs], width),
        make_batch([p.augmented_ids for p in pairs], width),
        [RngStream(*p.rng_tag) for p in pairs],
    )


def forward_losses(prepared: PreparedBatch, params: ModelParams, model_cfg: ModelConfig,
                   train_cfg: TrainConfig, vocab: Vocabulary, rng: RngStream,
                   training: bool = True) -> LossBreakdown:
    """Losses for one prepared batch; ``total`` carries the graph when training.

    The anchor vector ``z`` is computed once and feeds both objectives.  A
    zero-weighted objective is still evaluated for reporting (when defined)
    but outside the graph.
    """
    B = prepared.original.size
    w_c, w_d = train_cfg.w_contrastive, train_cfg.w_denoising
    if model_cfg.encoder_input_mode == "original":
        anchor_view, positive_view = prepared.original, prepared.augmented
    else:
        anchor_view, positive_view = prepared.augmented, prepared.original

    wrapped, pos = wrap_batch(anchor_view, vocab)
    z = encode(wrapped, pos, params, model_cfg, training=training, rng=rng.child("encode", "anchor"))

    contrastive = None
    if B >= 2:
        def positive_loss():
            wrapped_p, pos_p = wrap_batch(positive_view, vocab)
            z_plus = encode(wrapped_p, pos_p, params, model_cfg, training=training,
                            rng=rng.child("encode", "positive"))
            anchor = z if w_c > 0 else z.detach()
            return info_nce(anchor, z_plus, train_cfg.tau,
                            include_positive=train_cfg.contrastive_denominator == "with_positive")
        if w_c > 0:
            contrastive = positive_loss()
        else:
            with no_grad():
                contrastive = positive_loss()

    def denoise():
        logits = decode_denoise(z if w_d > 0 else z.detach(), prepared.augmented, params, model_cfg,
                                train_cfg.p, training=training, rng=rng.child("decode"), corrupt=True,
                                corruption_rngs=prepared.corruption_rngs)
        loss = denoising_loss(logits, prepared.original, reduction=train_cfg.denoising_reduction)
        return loss, token_accuracy(logits, prepared.original)

    if w_d > 0:
        denoising, acc = denoise()
    else:
        with no_grad():
            denoising, acc = denoise()
    return combined_loss(contrastive, denoising, w_c, w_d, token_accuracy=acc)


def collect_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()}


def train_step(texts: Sequence[str], params: ModelParams, opt_state: OptimizerState, model_cfg: ModelConfig,
               noise_cfg: NoiseConfig, train_cfg: TrainConfig, vocab: Vocabulary, rng: RngStream,
               table=None, synonyms=None, lr: float | None = None) -> LossBreakdown:
    """Augment, encode, decode, compute losses, backprop, clip, AdamW update."""
    if train_cfg.w_contrastive > 0 and len(texts) < 2:
        raise InvalidParameterError("the contrastive objective needs at least two sentences per batch")
    prepared = prepare_batch(texts, vocab, noise_cfg, model_cfg.L, rng.child("data"), table, synonyms)
    breakdown = forward_losses(prepared, params, model_cfg, train_cfg, vocab, rng.child("model"))
    values = (breakdown.combined, breakdown.contrastive, breakdown.denoising)
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteError(f"non-finite loss (combined, contrastive, denoising) = {values}")
    for t in params.values():
        t.zero_grad()
    breakdown.total.backward()
    grads = collect_grads(params)
    if train_cfg.clip_norm > 0:
        clip_grad_norm(grads, train_cfg.clip_norm)
    adamw_step(params, grads, opt_state, lr=lr)
    return breakdown


# -- loop -------------------------------------------------------------------------------------


def batch_indices(step: int, batch_size: int, n: int, seed: int) -> np.ndarray:
    """Corpus indices for 0-based ``step``: consecutive slices of per-epoch permutations.

    A pure function of its arguments, so a resumed run sees the same batches
    as an uninterrupted one.
    """
    start = step * batch_size
    out = []
    cache: dict[int, np.ndarray] = {}
    for k in range(start, start + batch_size):
        epoch, offset = divmod(k, n)
        if epoch not in cache:
            cache[epoch] = RngStream(seed).child("shuffle", epoch).permutation(n)
        out.append(cache[epoch][offset])
    return np.asarray(out, dtype=np.int64)


def format_metrics_line(step: int, b: LossBreakdown) -> str:
    return f"{step}\t{b.combined:.6f}\t{b.contrastive:.6f}\t{b.denoising:.6f}\t{b.token_accuracy:.6f}"


def evaluate_heldout(sentences: Sequence[str], params: ModelParams, model_cfg: ModelConfig,
                     noise_cfg: NoiseConfig, train_cfg: TrainConfig, vocab: Vocabulary, seed: int,
                     table=None, synonyms=None, batch_size: int = 64) -> LossBreakdown:
    """Losses on held-out sentences: full two-stage noise, no internal dropout, no update."""
    rng = RngStream(seed).child("heldout")
    totals = np.zeros(4)
    weight_sum = 0.0
    with no_grad():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start:start + batch_size]
            prepared = prepare_batch(chunk, vocab, noise_cfg, model_cfg.L, rng.child("data", start), table, synonyms)
            b = forward_losses(prepared, params, model_cfg, train_cfg, vocab, rng.child("model", start),
                               training=False)
            n_tok = float(prepared.original.mask.sum())
            totals += np.array([b.combined, b.contrastive, b.denoising * n_tok, b.token_accuracy * n_tok])
            weight_sum += n_tok
    n_batches = math.ceil(len(sentences) / batch_size)
    return LossBreakdown(
        denoising=totals[2] / weight_sum,
        contrastive=totals[1] / n_batches,
        combined=train_cfg.w_contrastive * totals[1] / n_batches + train_cfg.w_denoising * totals[2] / weight_sum,
        token_accuracy=totals[3] / weight_sum,
    )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[LossBreakdown] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    params: ModelParams | None = None


def _snapshot(params: ModelParams, model_cfg: ModelConfig, opt_state: OptimizerState, step: int,
              train_cfg: TrainConfig) -> Checkpoint:
    extra = {f"train.{k}": str(v) for k, v in asdict(train_cfg).items() if v is not None}
    frozen = replace(opt_state, m={k: v.copy() for k, v in opt_state.m.items()},
                     v={k: v.copy() for k, v in opt_state.v.items()})
    return Checkpoint(model_cfg, {k: t.data.copy() for k, t in params.items()}, step=step, seed=train_cfg.seed,
                      optimizer=frozen, extra=extra)


def params_from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    return {name: Tensor(value.copy(), requires_grad=True, name=name) for name, value in ckpt.params.items()}


def train_loop(corpus: Sequence[str], vocab: Vocabulary, model_cfg: ModelConfig, noise_cfg: NoiseConfig,
               train_cfg: TrainConfig, *, table=None, synonyms=None, resume: Checkpoint | str | Path | None = None,
               heldout: Sequence[str] | None = None, sts_dev: Sequence[EvalRecord] | None = None,
               metrics_path=None, header: Mapping[str, object] | None = None) -> TrainResult:
    """Run ``train_cfg.steps`` optimisation steps (counted from 0, or from a resumed checkpoint).

    Writes one metrics line per step, evaluates and checkpoints every
    ``eval_every`` steps and at the end.  With ``sts_dev`` the best checkpoint
    by dev Spearman is also kept at ``<checkpoint_path>.best``.
    """
    if not corpus:
        raise EmptyInputError("training corpus is empty")
    if len(vocab) != model_cfg.V:
        raise InvalidParameterError(f"vocabulary size {len(vocab)} != model V={model_cfg.V}")

    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ckpt.model_config.V != model_cfg.V:
            raise InvalidParameterError("checkpoint vocabulary size does not match")
        model_cfg = ckpt.model_config
        params = params_from_checkpoint(ckpt)
        opt_state = ckpt.optimizer or OptimizerState(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
        start = ckpt.step
    else:
        params = init_params(model_cfg, seed=train_cfg.seed)
        opt_state = OptimizerState(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
        start = 0

    metrics_fh = None
    if metrics_path is not None:
        metrics_fh = open(metrics_path, "a" if resume is not None else "w", encoding="utf-8")
        if resume is None and header:
            for k, v in header.items():
                metrics_fh.write(f"# {k}={v}\n")
    eval_fh = None
    if metrics_path is not None and (heldout or sts_dev):
        eval_fh = open(str(metrics_path) + ".eval", "a" if resume is not None else "w", encoding="utf-8")

    root = RngStream(train_cfg.seed).child("train")
    result = TrainResult(checkpoint=None)
    best = -math.inf
    try:
        for step in range(start, train_cfg.steps):
            idx = batch_indices(step, train_cfg.batch_size, len(corpus), train_cfg.seed)
            texts = [corpus[i] for i in idx]
            b = train_step(texts, params, opt_state, model_cfg, noise_cfg, train_cfg, vocab, root.child(step),
                           table=table, synonyms=synonyms, lr=train_cfg.lr_at(step + 1))
            b.total = None
            result.history.append(b)
            if metrics_fh is not None:
                metrics_fh.write(format_metrics_line(step + 1, b) + "\n")
                metrics_fh.flush()
            done = step + 1
            if done % train_cfg.eval_every == 0 or done == train_cfg.steps:
                record = {"step": done}
                if heldout:
                    h = evaluate_heldout(heldout, params, model_cfg, noise_cfg, train_cfg, vocab,
                                         train_cfg.seed, table, synonyms)
                    record.update(heldout_denoising=h.denoising, heldout_token_accuracy=h.token_accuracy,
                                  heldout_contrastive=h.contrastive)
                if sts_dev:
                    record["sts_dev_spearman"] = eval_sts(sts_dev, params, model_cfg, vocab).spearman
                result.evaluations.append(record)
                log.info("step %d evaluation %s", done, record)
                if eval_fh is not None:
                    eval_fh.write("\t".join(f"{k}={v}" for k, v in record.items()) + "\n")
                    eval_fh.flush()
                snapshot = _snapshot(params, model_cfg, opt_state, done, train_cfg)
                if train_cfg.checkpoint_path:
                    save_checkpoint(train_cfg.checkpoint_path, snapshot)
                    if sts_dev and record["sts_dev_spearman"] > best:
                        best = record["sts_dev_spearman"]
                        save_checkpoint(str(train_cfg.checkpoint_path) + ".best", snapshot)
                result.checkpoint = snapshot
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
        if eval_fh is not None:
            eval_fh.close()
    if result.checkpoint is None:
        result.checkpoint = _snapshot(params, model_cfg, opt_state, start, train_cfg)
    result.params = params
    return result

"""Template-pooled Transformer encoder and a non-causal denoising decoder.

The encoder reads ``x_1 .. x_n means [MASK] .`` and its hidden state at the
``[MASK]`` slot is the sentence vector.  The decoder reconstructs the original
tokens from a corrupted copy; its only view of the encoder is cross-attention
over that single vector, so the memory length is always 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import ContractViolation, EmptyInputError, InvalidParameterError, InvalidShapeError
from .noise import continuous_corrupt
from .substrate import (
    RngStream,
    Tensor,
    default_dtype,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    reshape,
    softmax_rows,
    take,
    transpose,
)
from .textdata import MASK_ID, SentenceBatch, Vocabulary, make_batch, tokenize

ModelParams = dict  # name -> Tensor

_NEG_INF = -1e9
ENCODER_INPUT_MODES = ("original", "augmented")
POOLING_MODES = ("mask", "mean")


@dataclass
class ModelConfig:
    V: int
    d: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    enc_heads: int = 4
    dec_heads: int = 1
    ffn_mult: int = 4
    L: int = 32
    L_enc: int | None = None
    internal_dropout: float = 0.1
    encoder_input_mode: str = "original"
    pooling: str = "mask"

    def __post_init__(self):
        if self.L_enc is None:
            self.L_enc = self.L + 4
        problems = self.problems()
        if problems:
            raise InvalidParameterError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("V", "d", "enc_heads", "dec_heads", "ffn_mult", "L"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be positive")
        for name in ("enc_layers", "dec_layers"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be non-negative")
        if self.d >= 1 and self.enc_heads >= 1 and self.d % self.enc_heads:
            out.append(f"d={self.d} is not divisible by enc_heads={self.enc_heads}")
        if self.d >= 1 and self.dec_heads >= 1 and self.d % self.dec_heads:
            out.append(f"d={self.d} is not divisible by dec_heads={self.dec_heads}")
        if self.L_enc < self.L + 3:
            out.append(f"L_enc={self.L_enc} is shorter than L + 3")
        if not 0.0 <= self.internal_dropout < 1.0:
            out.append("internal_dropout must lie in [0, 1)")
        if self.encoder_input_mode not in ENCODER_INPUT_MODES:
            out.append(f"encoder_input_mode must be one of {ENCODER_INPUT_MODES}")
        if self.pooling not in POOLING_MODES:
            out.append(f"pooling must be one of {POOLING_MODES}")
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                continue
            if key in ("encoder_input_mode", "pooling"):
                kwargs[key] = str(raw)
            elif key == "internal_dropout":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


# -- parameters -------------------------------------------------------------------------


def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    d, ff, V = config.d, config.d * config.ffn_mult, config.V
    shapes = {"tok_emb": (V, d), "enc_pos": (config.L_enc, d), "dec_pos": (config.L, d)}

    def attn(prefix):
        # no key bias: it shifts every score of a query equally, so softmax cancels it
        for w in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{w}"] = (d, d)
            if w != "k":
                shapes[f"{prefix}.b{w}"] = (d,)

    def norm(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, ff)
        shapes[f"{prefix}.b1"] = (ff,)
        shapes[f"{prefix}.w2"] = (ff, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(config.enc_layers):
        norm(f"enc.{i}.ln1")
        attn(f"enc.{i}.self")
        norm(f"enc.{i}.ln2")
        ffn(f"enc.{i}.ffn")
    norm("enc.ln_f")
    for i in range(config.dec_layers):
        norm(f"dec.{i}.ln1")
        attn(f"dec.{i}.self")
        norm(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross")
        norm(f"dec.{i}.ln3")
        ffn(f"dec.{i}.ffn")
    norm("dec.ln_f")
    shapes["head.w"] = (d, V)
    shapes["head.b"] = (V,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0, dtype=None, std: float = 0.02) -> ModelParams:
    """normal(0, std) for embeddings and projection matrices, zeros for biases,
    ones for layer-norm gains."""
    dtype = np.dtype(dtype or default_dtype())
    root = RngStream(seed).child("init")
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".g"):
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            value = root.child(name).normal(shape, scale=std)
        params[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
    return params


def is_decoder_param(name: str) -> bool:
    return name.startswith(("dec.", "head.", "dec_pos"))


# -- building blocks ------------------------------------------------------------------------


def _linear(x: Tensor, params: ModelParams, w: str, b: str) -> Tensor:
    return matmul(x, params[w]) + params[b]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, n, d = x.shape
    return transpose(reshape(x, (B, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, n, h * dh))


def attention(queries: Tensor, memory: Tensor, params: ModelParams, prefix: str, heads: int,
              key_mask: np.ndarray | None = None) -> Tensor:
    """Projected multi-head attention of ``queries [B, n, d]`` over ``memory [B, m, d]``.

    Returns the sublayer output before any residual connection.
    """
    q = _split_heads(_linear(queries, params, f"{prefix}.wq", f"{prefix}.bq"), heads)
    k = _split_heads(matmul(memory, params[f"{prefix}.wk"]), heads)
    v = _split_heads(_linear(memory, params, f"{prefix}.wv", f"{prefix}.bv"), heads)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(q.shape[-1]))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask)[:, None, None, :] != 0, 0.0, _NEG_INF).astype(scores.dtype)
        scores = scores + bias
    weights = softmax_rows(scores)
    return _linear(_merge_heads(matmul(weights, v)), params, f"{prefix}.wo", f"{prefix}.bo")


def cross_attention(z_x: Tensor, z_y: Tensor, params: ModelParams | None = None,
                    prefix: str | None = None, heads: int = 1) -> Tensor:
    """Attention of target states ``z_y [.., n, d]`` over memory ``z_x [.., m, d]``.

    Without ``params`` this is the bare ``softmax(z_y z_x^T / sqrt(d)) z_x``;
    with them, the layer's query/key/value/output projections are applied.
    """
    if z_x.shape[-1] != z_y.shape[-1]:
        raise InvalidShapeError(f"memory width {z_x.shape[-1]} differs from query width {z_y.shape[-1]}")
    if z_x.shape[-2] < 1 or z_y.shape[-2] < 1:
        raise InvalidShapeError("cross_attention needs at least one key and one query")
    if params is None:
        d = z_x.shape[-1]
        scores = matmul(z_y, transpose(z_x, tuple(range(z_x.ndim - 2)) + (z_x.ndim - 1, z_x.ndim - 2)))
        return matmul(softmax_rows(scores * (1.0 / math.sqrt(d))), z_x)
    squeeze = z_y.ndim == 2
    if squeeze:
        z_x = reshape(z_x, (1,) + z_x.shape)
        z_y = reshape(z_y, (1,) + z_y.shape)
    out = attention(z_y, z_x, params, prefix, heads)
    return reshape(out, out.shape[1:]) if squeeze else out


def _ffn(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return _linear(gelu(_linear(x, params, f"{prefix}.w1", f"{prefix}.b1")), params, f"{prefix}.w2", f"{prefix}.b2")


class _Dropper:
    """Internal (architectural) dropout with one named sub-stream per site."""

    def __init__(self, rate: float, training: bool, rng: RngStream | None):
        self.active = training and rate > 0.0
        if self.active and rng is None:
            raise ContractViolation("training-mode forward pass needs an RngStream")
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor, *site) -> Tensor:
        if not self.active:
            return x
        return dropout(x, self.rate, self.rng.child(*site))[0]


def _ln(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


# -- encoder ------------------------------------------------------------------------------


def wrap_with_template(ids: Sequence[int], vocab: Vocabulary) -> tuple[list[int], int]:
    """``[x_1 .. x_n, means, [MASK], .]`` and the 0-based ``[MASK]`` index."""
    if len(ids) == 0:
        raise EmptyInputError("cannot wrap an empty sequence")
    wrapped = list(ids) + [vocab.token_to_id["means"], MASK_ID, vocab.token_to_id["."]]
    return wrapped, len(ids) + 1


def wrap_batch(batch: SentenceBatch, vocab: Vocabulary) -> tuple[SentenceBatch, np.ndarray]:
    """Template-wrap every row of a padded batch; width grows by 3."""
    rows, positions = [], []
    for row in range(batch.size):
        n = int(batch.lengths[row])
        wrapped, pos = wrap_with_template(batch.ids[row, :n].tolist(), vocab)
        rows.append(wrapped)
        positions.append(pos)
    return make_batch(rows, batch.width + 3), np.asarray(positions, dtype=np.int64)


def encode(batch: SentenceBatch, mask_positions: np.ndarray, params: ModelParams, config: ModelConfig,
           training: bool = False, rng: RngStream | None = None) -> Tensor:
    """Pre-norm Transformer encoder pooled to one ``[B, d]`` vector per row."""
    B, width = batch.ids.shape
    if width > config.L_enc:
        raise InvalidShapeError(f"encoder batch width {width} exceeds L_enc={config.L_enc}")
    mask_positions = np.asarray(mask_positions, dtype=np.int64)
    if mask_positions.shape != (B,) or (mask_positions < 0).any() or (mask_positions >= batch.lengths).any():
        raise ContractViolation("mask_positions must index a real token in every row")
    if config.pooling == "mask" and (batch.ids[np.arange(B), mask_positions] != MASK_ID).any():
        raise ContractViolation("mask_positions do not point at [MASK] tokens")
    drop = _Dropper(config.internal_dropout, training, rng)

    x = embedding(params["tok_emb"], batch.ids) + params["enc_pos"][:width]
    x = drop(x, "enc", "embed")
    for i in range(config.enc_layers):
        normed = _ln(x, params, f"enc.{i}.ln1")
        h = attention(normed, normed, params, f"enc.{i}.self", config.enc_heads, batch.mask)
        x = x + drop(h, "enc", i, "self")
        h = _ffn(_ln(x, params, f"enc.{i}.ln2"), params, f"enc.{i}.ffn")
        x = x + drop(h, "enc", i, "ffn")
    x = _ln(x, params, "enc.ln_f")
    if config.pooling == "mask":
        return take(x, (np.arange(B), mask_positions))
    weights = (batch.mask / batch.mask.sum(axis=1, keepdims=True)).astype(x.dtype)
    return matmul(reshape(Tensor(weights), (B, 1, width)), x).reshape(B, config.d)


# -- decoder ----------------------------------------------------------------------------------


def decode_denoise(rep: Tensor, noisy_batch: SentenceBatch, params: ModelParams, config: ModelConfig,
                   p: float, training: bool = False, rng: RngStream | None = None,
                   corrupt: bool | None = None, corruption_rngs: Sequence[RngStream] | None = None) -> Tensor:
    """Per-position vocabulary logits ``[B, L, V]`` for the noisy batch.

    No causal mask: every position attends to every real token of the noisy
    copy, and to the single pooled vector through cross-attention.

    The continuous corruption follows ``training`` unless ``corrupt`` says
    otherwise (held-out evaluation corrupts without internal dropout).
    ``corruption_rngs`` supplies one stream per row; otherwise the
    ``"continuous"`` child of ``rng`` covers the whole batch.
    """
    corrupt = training if corrupt is None else corrupt
    B, width = noisy_batch.ids.shape
    if rep.shape != (B, config.d):
        raise InvalidShapeError(f"representation dims {rep.shape} do not match [B={B}, d={config.d}]")
    if width > config.L:
        raise InvalidShapeError(f"decoder batch width {width} exceeds L={config.L}")
    if (training or corrupt) and rng is None and corruption_rngs is None:
        raise ContractViolation("a corrupted or training-mode forward pass needs an RngStream")
    drop = _Dropper(config.internal_dropout, training, rng)

    x = embedding(params["tok_emb"], noisy_batch.ids) + params["dec_pos"][:width]
    if corrupt:
        x = continuous_corrupt(x, p, corruption_rngs if corruption_rngs is not None else rng.child("continuous"))
    memory = reshape(rep, (B, 1, config.d))
    for i in range(config.dec_layers):
        normed = _ln(x, params, f"dec.{i}.ln1")
        x = x + drop(attention(normed, normed, params, f"dec.{i}.self", config.dec_heads, noisy_batch.mask),
                     "dec", i, "self")
        h = attention(_ln(x, params, f"dec.{i}.ln2"), memory, params, f"dec.{i}.cross", config.dec_heads)
        x = x + drop(h, "dec", i, "cross")
        x = x + drop(_ffn(_ln(x, params, f"dec.{i}.ln3"), params, f"dec.{i}.ffn"), "dec", i, "ffn")
    x = _ln(x, params, "dec.ln_f")
    return _linear(x, params, "head.w", "head.b")


# -- inference ---------------------------------------------------------------------------------


def encode_texts_batch(texts: Sequence[str], vocab: Vocabulary, L: int) -> tuple[SentenceBatch, np.ndarray]:
    batch = make_batch([tokenize(t, vocab) for t in texts], L)
    return wrap_batch(batch, vocab)


def embed_sentences(texts: Sequence[str], params: ModelParams, config: ModelConfig, vocab: Vocabulary,
                    batch_size: int = 256) -> Tensor:
    """Inference-mode sentence vectors ``[B, d]``; the decoder is never run."""
    if len(texts) == 0:
        raise EmptyInputError("no sentences to embed")
    if len(vocab) != config.V:
        raise InvalidShapeError(f"vocabulary has {len(vocab)} entries but the model expects V={config.V}")
    chunks = []
    with no_grad():
        for start in range(0, len(texts), batch_size):
            wrapped, positions = encode_texts_batch(texts[start:start + batch_size], vocab, config.L)
            chunks.append(encode(wrapped, positions, params, config, training=False).data)
    return Tensor(np.concatenate(chunks, axis=0))

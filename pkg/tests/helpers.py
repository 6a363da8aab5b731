"""Shared toy setups for the test modules."""

import numpy as np

from sentdenoise.model import ModelConfig, init_params
from sentdenoise.noise import NoiseConfig
from sentdenoise.substrate import (
    RngStream,
    Tensor,
    concat,
    cross_entropy_mean,
    dropout,
    embedding,
    exp,
    gelu,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    matmul,
    precision,
    softmax_rows,
    take,
    transpose,
)
from sentdenoise.textdata import count_tokens, vocab_from_counts
from sentdenoise.training import PreparedBatch, TrainConfig, forward_losses, prepare_batch

def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def _rand(rng, *shape):
    return t64(rng.normal(size=shape))


# name -> rng -> (input a, input b, scalar closure over a and b)
OPS = {
    "add_broadcast": lambda r: ((a := _rand(r, 3, 4)), (b := _rand(r, 4)), lambda: ((a + b) * (a + b)).sum()),
    "mul_div": lambda r: ((a := _rand(r, 2, 3)), (b := t64(r.uniform(1, 2, (2, 3)))), lambda: (a * b / (b + a * a + 3.0)).sum()),
    "matmul_batched": lambda r: ((a := _rand(r, 2, 3, 4)), (b := _rand(r, 4, 5)), lambda: (matmul(a, b) * matmul(a, b)).sum()),
    "reshape_transpose": lambda r: ((a := _rand(r, 2, 6)), (b := _rand(r, 3, 2, 2)), lambda: (transpose(a.reshape(2, 3, 2), (1, 0, 2)) * b).sum()),
    "take_fancy": lambda r: ((a := _rand(r, 4, 3)), (b := _rand(r, 3, 3)), lambda: (take(a, (np.array([0, 2, 2]),)) * b).sum()),
    "concat": lambda r: ((a := _rand(r, 2, 3)), (b := _rand(r, 1, 3)), lambda: (concat([a, b], 0) * concat([b, a], 0)).sum()),
    "embedding": lambda r: ((a := _rand(r, 5, 3)), (b := _rand(r, 2, 2, 3)), lambda: (embedding(a, [[0, 4], [4, 1]]) * b).sum()),
    "softmax": lambda r: ((a := _rand(r, 3, 5)), (b := _rand(r, 3, 5)), lambda: (softmax_rows(a) * b).sum()),
    "logsumexp": lambda r: ((a := _rand(r, 3, 5)), (b := _rand(r, 3)), lambda: (logsumexp(a) * b).sum()),
    "layer_norm": lambda r: ((a := _rand(r, 3, 6)), (b := _rand(r, 6)), lambda: (layer_norm(a, b, b * 0.5) * layer_norm(a, b, b)).sum()),
    "l2_normalize": lambda r: ((a := _rand(r, 3, 4)), (b := _rand(r, 3, 4)), lambda: (l2_normalize(a) * b).sum()),
    "gelu": lambda r: ((a := _rand(r, 10)), (b := _rand(r, 10)), lambda: (gelu(a) * b).sum()),
    "exp_log": lambda r: ((a := _rand(r, 6)), (b := t64(r.uniform(0.5, 2, 6))), lambda: (exp(a * 0.3) * log(b)).sum()),
    "dropout_fixed_stream": lambda r: ((a := _rand(r, 8, 8)), (b := _rand(r, 8, 8)), lambda: (dropout(a, 0.5, RngStream(5))[0] * b).sum()),
    "cross_entropy": lambda r: ((a := _rand(r, 2, 3, 5)), (b := _rand(r, 5)), lambda: cross_entropy_mean(a * 2.0 + b, [[1, 0, 4], [2, 2, 3]], [[1, 1, 0], [1, 1, 1]])),
}


GRAD_SENTENCES = ["the big dog saw a cat .", "a man ran ."]


def toy_loss_problem():
    """Float64 params and a deterministic closure for the full training loss.

    Two sentences, d = 16, one encoder and one decoder layer.  Continuous
    corruption at p = 0.825 stays on with per-row streams rebuilt on every
    call.  Internal dropout and discrete noise are off: both are plain masks
    or token edits already covered elsewhere, and leaving them on mostly
    produces elements with gradients near 1e-10 where float64 central
    differences cannot resolve a 1e-4 relative error.
    """
    vocab = vocab_from_counts(count_tokens(GRAD_SENTENCES))
    cfg = ModelConfig(V=len(vocab), d=16, enc_layers=1, dec_layers=1, enc_heads=2, L=16, internal_dropout=0.0)
    train_cfg = TrainConfig(batch_size=2)
    with precision("float64"):
        params = init_params(cfg, seed=0, dtype=np.float64, std=0.1)
        prepared = prepare_batch(GRAD_SENTENCES, vocab, NoiseConfig(discrete_strategy="none"), cfg.L, RngStream(1))
    tags = [(r.seed, r.stream_id) for r in prepared.corruption_rngs]

    def loss():
        batch = PreparedBatch(prepared.original, prepared.augmented, [RngStream(*t) for t in tags])
        return forward_losses(batch, params, cfg, train_cfg, vocab, RngStream(2)).total

    return params, loss

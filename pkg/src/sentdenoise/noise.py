"""Two-stage perturbation: token-level augmentation, then embedding dropout.

The discrete stage rewrites sentence text (paraphrase table lookup or a
conservative rule-based augmenter).  The continuous stage acts only on the
embedded decoder input and only while training.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import EmptySentenceError, FormatError, InvalidParameterError
from .substrate import RngStream, Tensor, apply_dropout_mask, dropout
from .textdata import Vocabulary, split_tokens, tokenize

log = logging.getLogger(__name__)

STRATEGIES = ("table", "rule_based", "none")


@dataclass
class NoiseConfig:
    discrete_strategy: str = "rule_based"
    continuous_rate: float = 0.825
    rule_swap_prob: float = 0.1
    rule_synonym_prob: float = 0.3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.discrete_strategy not in STRATEGIES:
            raise InvalidParameterError(
                f"discrete_strategy must be one of {STRATEGIES}, got {self.discrete_strategy!r}")
        if not 0.0 <= self.continuous_rate < 1.0:
            raise InvalidParameterError(f"continuous_rate must lie in [0, 1), got {self.continuous_rate}")
        for name in ("rule_swap_prob", "rule_synonym_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1], got {value}")


class ParaphraseTable(dict):
    """Maps original sentence text to an externally produced paraphrase."""

    @classmethod
    def load(cls, path) -> "ParaphraseTable":
        table = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                cols = line.rstrip("\r\n").split("\t")
                if len(cols) != 2 or not cols[1].strip():
                    raise FormatError("expected original<TAB>paraphrase", path, lineno)
                key = cols[0].strip()
                if key in table:
                    log.warning("%s:%d: duplicate paraphrase key %r, keeping the later entry", path, lineno, key)
                table[key] = cols[1].strip()
        return table


@functools.lru_cache(maxsize=1)
def _bundled_synonyms_text() -> str:
    return resources.files("sentdenoise").joinpath("data/synonyms.tsv").read_text(encoding="utf-8")


def load_synonyms(path=None) -> dict[str, list[str]]:
    """``token<TAB>synonym`` lines; repeated tokens accumulate alternatives."""
    if path is None:
        text = _bundled_synonyms_text()
        source = "bundled synonyms"
    else:
        text = Path(path).read_text(encoding="utf-8")
        source = str(path)
    synonyms: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise FormatError("expected token<TAB>synonym", source, lineno)
        token, alt = cols[0].strip().lower(), cols[1].strip().lower()
        alts = synonyms.setdefault(token, [])
        if alt not in alts:
            alts.append(alt)
    return synonyms


def _load_stopwords() -> frozenset:
    text = resources.files("sentdenoise").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w for w in text.split() if w)


STOPWORDS = _load_stopwords()


def is_content_word(token: str) -> bool:
    return token.isalpha() and token not in STOPWORDS


def rule_based_augment(tokens: list[str], swap_prob: float, synonym_prob: float,
                       synonyms: Mapping[str, list[str]], rng: RngStream) -> list[str]:
    """Adjacent content-word swaps, then synonym substitutions.

    Draw order is fixed: one uniform per adjacent content-word pair scanned
    left to right (a swapped pair's right member cannot start a new pair),
    then one uniform per token that has synonyms, followed by one integer
    draw choosing the replacement whenever the uniform falls below
    ``synonym_prob``.  Leading and trailing punctuation is never touched.
    """
    out = list(tokens)
    n = len(out)
    editable = [is_content_word(t) for t in out]
    if n and not out[0].isalnum():
        editable[0] = False
    if n and not out[-1].isalnum():
        editable[-1] = False
    i = 0
    while i < n - 1:
        if editable[i] and editable[i + 1]:
            if rng.uniform() < swap_prob:
                out[i], out[i + 1] = out[i + 1], out[i]
                i += 2
                continue
        i += 1
    for i, tok in enumerate(out):
        alts = synonyms.get(tok)
        if editable[i] and alts:
            if rng.uniform() < synonym_prob:
                out[i] = alts[int(rng.integers(len(alts)))]
    return out


def discrete_augment(sentence: str, config: NoiseConfig, table: Mapping[str, str] | None,
                     rng: RngStream, synonyms: Mapping[str, list[str]] | None = None) -> str:
    if not sentence.strip():
        raise EmptySentenceError("cannot augment an empty sentence")
    strategy = config.discrete_strategy
    if strategy == "none":
        return sentence
    if strategy == "table":
        if table is None:
            raise InvalidParameterError("table strategy needs a paraphrase table")
        hit = table.get(sentence.strip())
        if hit:
            return hit
    if synonyms is None:
        synonyms = load_synonyms()
    tokens = rule_based_augment(split_tokens(sentence), config.rule_swap_prob,
                                config.rule_synonym_prob, synonyms, rng)
    return " ".join(tokens)


@dataclass
class NoisyTrainingPair:
    original_ids: list[int]
    augmented_ids: list[int]
    rng_tag: tuple[int, int]  # (seed, stream_id) reserved for the continuous stage


def make_training_pair(sentence: str, vocab: Vocabulary, config: NoiseConfig,
                       table: Mapping[str, str] | None, rng: RngStream,
                       synonyms: Mapping[str, list[str]] | None = None) -> NoisyTrainingPair:
    original = tokenize(sentence, vocab)
    augmented = tokenize(discrete_augment(sentence, config, table, rng.child("discrete"), synonyms), vocab)
    continuous = rng.child("continuous")
    return NoisyTrainingPair(original, augmented, (continuous.seed, continuous.stream_id))


def continuous_corrupt(embedded: Tensor, p: float, rng, training: bool = True) -> Tensor:
    """High-rate dropout over the embedded decoder input; identity at inference.

    ``rng`` is one RngStream for the whole tensor, or a sequence of streams,
    one per leading row, so each example's mask depends only on its own tag.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidParameterError(f"corruption rate must lie in [0, 1), got {p}")
    if not training:
        return embedded
    if isinstance(rng, RngStream):
        return dropout(embedded, p, rng)[0]
    rngs = list(rng)
    if len(rngs) != embedded.shape[0]:
        raise InvalidParameterError(f"{len(rngs)} streams for {embedded.shape[0]} rows")
    keep = np.stack([r.uniform(embedded.shape[1:]) >= p for r in rngs])
    return apply_dropout_mask(embedded, keep, p)

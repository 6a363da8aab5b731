"""Tokenization, vocabularies, corpus/STS ingestion and padded batches."""

from __future__ import annotations

import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, EmptySentenceError, FormatError, InvalidParameterError

log = logging.getLogger(__name__)

PAD, UNK, MASK = "[PAD]", "[UNK]", "[MASK]"
PAD_ID, UNK_ID, MASK_ID = 0, 1, 2
SPECIALS = (PAD, UNK, MASK)
TEMPLATE_TOKENS = ("means", ".")
DEFAULT_MAX_LEN = 32

_PUNCT = set(string.punctuation)


def split_tokens(text: str) -> list[str]:
    """Lowercase, whitespace split, and peel leading/trailing ASCII punctuation.

    Special tokens written verbatim (``[UNK]`` etc.) survive untouched, which
    keeps ``tokenize(detokenize(ids)) == ids``.
    """
    tokens = []
    for raw in text.split():
        if raw in SPECIALS:
            tokens.append(raw)
            continue
        word = raw.lower()
        lead, trail = [], []
        while word and word[0] in _PUNCT:
            lead.append(word[0])
            word = word[1:]
        while word and word[-1] in _PUNCT:
            trail.append(word[-1])
            word = word[:-1]
        tokens.extend(lead)
        if word:
            tokens.append(word)
        tokens.extend(reversed(trail))
    return tokens


@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:3]) != SPECIALS:
            raise FormatError(f"vocabulary must start with {', '.join(SPECIALS)}")
        self.token_to_id = {}
        for i, tok in enumerate(self.id_to_token):
            if tok in self.token_to_id:
                raise FormatError(f"duplicate token {tok!r}", line=i + 1)
            self.token_to_id[tok] = i
        missing = [t for t in TEMPLATE_TOKENS if t not in self.token_to_id]
        if missing:
            raise FormatError(f"vocabulary lacks template tokens {missing}")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def read_corpus(path) -> list[str]:
    """One sentence per line; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def count_tokens(sentences: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for s in sentences:
        counts.update(split_tokens(s))
    return counts


def vocab_from_counts(counts: Counter, min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    if min_count < 1:
        raise InvalidParameterError("min_count must be at least 1")
    head = list(SPECIALS) + list(TEMPLATE_TOKENS)
    if max_size is not None and max_size < len(head):
        raise InvalidParameterError(f"max_size must be at least {len(head)}")
    ranked = sorted(
        (tok for tok, c in counts.items() if c >= min_count and tok not in head),
        key=lambda tok: (-counts[tok], tok),
    )
    tokens = head + ranked
    if max_size is not None:
        tokens = tokens[:max_size]
    return Vocabulary(tokens)


def build_vocab(corpus_path, min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    """Specials, then the template tokens, then tokens by descending count.

    Ties in count break lexicographically, so the id assignment is a pure
    function of the corpus.
    """
    sentences = read_corpus(corpus_path)
    if not sentences:
        raise EmptyInputError(f"corpus {corpus_path} has no sentences")
    return vocab_from_counts(count_tokens(sentences), min_count, max_size)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    tokens = split_tokens(text)
    if not tokens:
        raise EmptySentenceError("cannot tokenize an empty sentence")
    return [vocab.id(t) for t in tokens]


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.id_to_token[i] for i in ids)


@dataclass
class SentenceBatch:
    ids: np.ndarray  # [B, L] int64
    mask: np.ndarray  # [B, L] 0/1
    lengths: np.ndarray  # [B]

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


def make_batch(sequences: Sequence[Sequence[int]], L: int = DEFAULT_MAX_LEN) -> SentenceBatch:
    if not sequences:
        raise EmptyInputError("cannot batch zero sequences")
    if L < 1:
        raise InvalidParameterError("batch width must be positive")
    ids = np.full((len(sequences), L), PAD_ID, dtype=np.int64)
    lengths = np.zeros(len(sequences), dtype=np.int64)
    for row, seq in enumerate(sequences):
        if len(seq) == 0:
            raise EmptySentenceError(f"sequence {row} is empty")
        if len(seq) > L:
            log.debug("truncating sequence %d from %d to %d tokens", row, len(seq), L)
        n = min(len(seq), L)
        ids[row, :n] = seq[:n]
        lengths[row] = n
    mask = (np.arange(L)[None, :] < lengths[:, None]).astype(np.int64)
    return SentenceBatch(ids, mask, lengths)


@dataclass(frozen=True)
class EvalRecord:
    sentence_a: str
    sentence_b: str
    gold_score: float


def parse_sts_line(line: str, lineno: int, path=None) -> EvalRecord:
    cols = line.rstrip("\r\n").split("\t")
    if len(cols) != 3:
        raise FormatError(f"expected 3 tab-separated columns, found {len(cols)}", path, lineno)
    a, b, raw = cols
    try:
        score = float(raw)
    except ValueError:
        raise FormatError(f"unparsable score {raw!r}", path, lineno) from None
    if not 0.0 <= score <= 5.0:
        raise FormatError(f"score {score} outside [0, 5]", path, lineno)
    if not a.strip() or not b.strip():
        raise FormatError("empty sentence", path, lineno)
    return EvalRecord(a, b, score)


def load_sts(path) -> list[EvalRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                records.append(parse_sts_line(line, lineno, path))
    return records

"""Seeded template grammar used for desk-scale training runs and tests.

The grammar is small enough that a 64-wide model can learn to reconstruct
its sentences, and its word lists contain the synonym pairs shipped in the
bundled synonym file so rule-based augmentation has something to act on.
"""

from __future__ import annotations

from .substrate import RngStream
from .textdata import EvalRecord

DETERMINERS = ["the", "a", "this", "every"]
ADJECTIVES = ["big", "large", "small", "little", "happy", "glad", "old", "red", "dark", "cold"]
NOUNS = [
    "cat", "kitten", "dog", "puppy", "man", "guy", "car", "automobile", "house", "home",
    "river", "stream", "tree", "teacher", "book", "horse",
]
TRANSITIVE = ["saw", "watched", "liked", "loved", "found", "discovered", "built", "made", "pushed"]
INTRANSITIVE = ["slept", "ran", "smiled", "grinned", "jumped", "leaped", "waited"]
ADVERBS = ["quickly", "rapidly", "slowly", "often", "today"]
PREPOSITIONS = ["near", "behind", "under", "with"]


def _pick(rng: RngStream, words: list[str]) -> str:
    return words[int(rng.integers(len(words)))]


def _noun_phrase(rng: RngStream, adj_prob: float = 0.5) -> list[str]:
    words = [_pick(rng, DETERMINERS)]
    if rng.uniform() < adj_prob:
        words.append(_pick(rng, ADJECTIVES))
    words.append(_pick(rng, NOUNS))
    return words


def template_sentence(rng: RngStream) -> str:
    """One sentence of 4 to 12 tokens (the final period counts as a token)."""
    kind = int(rng.integers(5))
    subject = _noun_phrase(rng)
    if kind == 0:
        words = subject + [_pick(rng, INTRANSITIVE)]
    elif kind == 1:
        words = subject + [_pick(rng, INTRANSITIVE), _pick(rng, ADVERBS)]
    elif kind == 2:
        words = subject + [_pick(rng, TRANSITIVE)] + _noun_phrase(rng)
    elif kind == 3:
        words = subject + [_pick(rng, INTRANSITIVE), _pick(rng, PREPOSITIONS)] + _noun_phrase(rng)
    else:
        words = (subject + [_pick(rng, TRANSITIVE)] + _noun_phrase(rng)
                 + [_pick(rng, PREPOSITIONS), _pick(rng, DETERMINERS), _pick(rng, NOUNS)])
    return " ".join(words) + " ."


def template_corpus(n: int, seed: int = 0) -> list[str]:
    rng = RngStream(seed).child("template-corpus")
    return [template_sentence(rng) for _ in range(n)]


def random_sts_records(n: int, seed: int = 0) -> list[EvalRecord]:
    """Sentence pairs with gold scores drawn independently of the sentences."""
    rng = RngStream(seed).child("random-sts")
    out = []
    for _ in range(n):
        a, b = template_sentence(rng), template_sentence(rng)
        out.append(EvalRecord(a, b, round(float(rng.uniform()) * 5.0, 3)))
    return out

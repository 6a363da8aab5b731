"""STS scoring, ranking metrics and representation-space diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EmptyInputError,
    FormatError,
    InvalidParameterError,
    InvalidShapeError,
    UndefinedCorrelationError,
    UndefinedSimilarityError,
)
from .model import ModelConfig, embed_sentences
from .textdata import EvalRecord, Vocabulary


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidShapeError(f"cosine of vectors with {a.size} and {b.size} entries")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity with a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise UndefinedSimilarityError("cosine similarity with a zero vector")
    return x / norms


def rowwise_cosine(a, b) -> np.ndarray:
    return np.clip(np.sum(_unit_rows(a) * _unit_rows(b), axis=1), -1.0, 1.0)


def average_ranks(xs) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    xs = np.asarray(xs, dtype=np.float64)
    order = np.argsort(xs, kind="mergesort")
    ranks = np.empty(len(xs), dtype=np.float64)
    sorted_xs = xs[order]
    start = 0
    while start < len(xs):
        stop = start + 1
        while stop < len(xs) and sorted_xs[stop] == sorted_xs[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidShapeError("spearman needs two 1-D series of equal length")
    if len(xs) < 2:
        raise UndefinedCorrelationError("spearman needs at least two points")
    rx, ry = average_ranks(xs), average_ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise UndefinedCorrelationError("spearman of a constant series")
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


def space_diagnostics(z, z_plus) -> dict[str, float]:
    """Alignment of pairs, uniformity and mean off-diagonal cosine of ``z``."""
    u, u_plus = _unit_rows(z), _unit_rows(z_plus)
    if u.shape != u_plus.shape:
        raise InvalidShapeError("paired sets differ in shape")
    n = u.shape[0]
    if n < 2:
        raise EmptyInputError("diagnostics need at least two pairs")
    alignment = float(np.mean(np.sum((u - u_plus) ** 2, axis=1)))
    gram = np.clip(u @ u.T, -1.0, 1.0)
    off = ~np.eye(n, dtype=bool)
    sq_dist = np.maximum(2.0 - 2.0 * gram[off], 0.0)
    uniformity = float(np.log(np.mean(np.exp(-2.0 * sq_dist))))
    return {
        "alignment": alignment,
        "uniformity": uniformity,
        "mean_pairwise_cosine": float(np.mean(gram[off])),
    }


def retrieval_metrics(queries, docs, relevance: Sequence[set], k: int) -> dict[str, float]:
    """MRR@k and MAP@k with docs ranked by cosine to each query.

    Equal scores keep document-index order.  AP@k divides by
    ``min(k, |relevant|)``; queries with no relevant document score 0.
    """
    queries = np.asarray(queries, dtype=np.float64)
    docs = np.asarray(docs, dtype=np.float64)
    if docs.ndim != 2 or docs.shape[0] == 0:
        raise EmptyInputError("retrieval needs at least one document")
    if queries.ndim != 2 or queries.shape[0] == 0:
        raise EmptyInputError("retrieval needs at least one query")
    if k < 1:
        raise InvalidParameterError("k must be at least 1")
    if len(relevance) != queries.shape[0]:
        raise InvalidShapeError("one relevance set per query is required")
    scores = _unit_rows(queries) @ _unit_rows(docs).T
    rr, ap = [], []
    for qi in range(queries.shape[0]):
        ranking = np.argsort(-scores[qi], kind="stable")[:k]
        rel = relevance[qi]
        hits = [int(d) in rel for d in ranking]
        first = next((i for i, h in enumerate(hits) if h), None)
        rr.append(0.0 if first is None else 1.0 / (first + 1))
        if not rel:
            ap.append(0.0)
            continue
        found, total = 0, 0.0
        for i, h in enumerate(hits):
            if h:
                found += 1
                total += found / (i + 1)
        ap.append(total / min(k, len(rel)))
    return {f"MRR@{k}": float(np.mean(rr)), f"MAP@{k}": float(np.mean(ap))}


@dataclass
class EvalReport:
    spearman: float = float("nan")
    n_pairs: int = 0
    diagnostics: dict[str, float] = field(default_factory=dict)
    retrieval: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def spearman_x100(self) -> float:
        return 100.0 * self.spearman

    def to_lines(self) -> list[str]:
        lines = []
        if self.n_pairs:
            lines += [f"spearman={self.spearman!r}", f"spearman_x100={self.spearman_x100:.2f}",
                      f"n_pairs={self.n_pairs}"]
        lines += [f"{k}={v!r}" for k, v in self.diagnostics.items()]
        lines += [f"{k}={v!r}" for k, v in self.retrieval.items()]
        lines += [f"note={n}" for n in self.notes]
        return lines

    def write(self, path) -> None:
        """key=value lines followed by one JSON line prefixed ``json=``."""
        payload = asdict(self)
        payload["spearman_x100"] = self.spearman_x100 if self.n_pairs else None
        if not self.n_pairs:
            payload["spearman"] = None
        lines = self.to_lines() + ["json=" + json.dumps(payload, sort_keys=True)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def read(path) -> dict[str, str]:
        out = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            key, _, value = line.partition("=")
            out[key] = value
        return out


def eval_sts(records: Sequence[EvalRecord], params, config: ModelConfig, vocab: Vocabulary) -> EvalReport:
    if len(records) < 2:
        raise EmptyInputError("STS evaluation needs at least two records")
    a = embed_sentences([r.sentence_a for r in records], params, config, vocab).data
    b = embed_sentences([r.sentence_b for r in records], params, config, vocab).data
    sims = rowwise_cosine(a, b)
    rho = spearman(sims, [r.gold_score for r in records])
    return EvalReport(spearman=rho, n_pairs=len(records))


def load_relevance(path, n_queries: int, n_docs: int) -> list[set]:
    """``query_index<TAB>doc_index`` lines, 0-based."""
    rel = [set() for _ in range(n_queries)]
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.rstrip("\r\n").split("\t")
            if len(cols) != 2:
                raise FormatError("expected query_index<TAB>doc_index", path, lineno)
            try:
                q, d = int(cols[0]), int(cols[1])
            except ValueError:
                raise FormatError("indices must be integers", path, lineno) from None
            if not (0 <= q < n_queries and 0 <= d < n_docs):
                raise FormatError(f"index pair ({q}, {d}) out of range", path, lineno)
            rel[q].add(d)
    return rel


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]


def eval_retrieval(queries: Sequence[str], docs: Sequence[str], relevance: Sequence[set], params,
                   config: ModelConfig, vocab: Vocabulary, k: int = 1) -> EvalReport:
    q = embed_sentences(list(queries), params, config, vocab).data
    d = embed_sentences(list(docs), params, config, vocab).data
    report = EvalReport(retrieval=retrieval_metrics(q, d, relevance, k))
    report.notes.append("ties broken by document index")
    return report


def eval_diagnostics(pairs: Sequence[tuple[str, str]], params, config: ModelConfig,
                     vocab: Vocabulary) -> EvalReport:
    z = embed_sentences([a for a, _ in pairs], params, config, vocab).data
    z_plus = embed_sentences([b for _, b in pairs], params, config, vocab).data
    return EvalReport(diagnostics=space_diagnostics(z, z_plus))


def mean_cosine_gap(original: np.ndarray, augmented: np.ndarray, rng_perm: np.ndarray) -> Mapping[str, float]:
    """Mean cosine of true pairs minus mean cosine of pairs shuffled by ``rng_perm``."""
    paired = float(np.mean(rowwise_cosine(original, augmented)))
    crossed = float(np.mean(rowwise_cosine(original, augmented[rng_perm])))
    return {"paired": paired, "crossed": crossed, "gap": paired - crossed}

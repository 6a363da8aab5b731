import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentdenoise.errors import EmptyInputError, FormatError, UndefinedCorrelationError, UndefinedSimilarityError
from sentdenoise.evaluation import (
    EvalReport,
    average_ranks,
    cosine,
    eval_sts,
    load_relevance,
    mean_cosine_gap,
    retrieval_metrics,
    space_diagnostics,
    spearman,
)
from sentdenoise.model import ModelConfig, embed_sentences, init_params
from sentdenoise.textdata import EvalRecord
from sentdenoise.toydata import random_sts_records, template_corpus


def brute_average_ranks(xs):
    return [sum(1 for y in xs if y < x) + (sum(1 for y in xs if y == x) + 1) / 2 for x in xs]


def brute_spearman(xs, ys):
    rx, ry = brute_average_ranks(xs), brute_average_ranks(ys)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return num / math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))


class TestCosine:
    def test_cases(self):
        assert cosine([1, 2], [1, 2]) == pytest.approx(1.0)
        assert cosine([1, 0], [0, 3]) == 0.0
        assert cosine([1, 2], [3, 4]) == pytest.approx(11 / math.sqrt(5 * 25))
        assert cosine([1, 2], [3, 4]) == pytest.approx(0.98387, abs=1e-5)

    def test_zero_vector(self):
        with pytest.raises(UndefinedSimilarityError):
            cosine([0, 0], [1, 2])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(0.01, 100))
    def test_scale_invariant_and_bounded(self, a, s):
        b = [1.0, -2.0, 0.5]
        if np.linalg.norm(a) < 1e-3:
            return
        c = cosine(a, b)
        assert -1.0 <= c <= 1.0
        assert cosine(np.multiply(a, s), b) == pytest.approx(c, abs=1e-12)


class TestSpearman:
    def test_monotone(self):
        xs = np.arange(10.0)
        assert spearman(xs, xs ** 2 + 1) == 1.0
        assert spearman(xs, -xs) == -1.0

    def test_ties_fixture(self):
        np.testing.assert_array_equal(average_ranks([1, 2, 2, 3]), [1, 2.5, 2.5, 4])
        assert spearman([1, 2, 2, 3], [1, 3, 2, 4]) == pytest.approx(brute_spearman([1, 2, 2, 3], [1, 3, 2, 4]), abs=1e-12)

    def test_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            xs = rng.integers(0, 15, 50).astype(float)
            ys = rng.normal(size=50).round(1)
            assert spearman(xs, ys) == pytest.approx(brute_spearman(xs, ys), abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.1, 50), min_size=3, max_size=20, unique=True))
    def test_increasing_transform_invariance(self, xs):
        ys = list(range(len(xs)))[::-1]
        assert spearman(np.power(xs, 3), ys) == pytest.approx(spearman(xs, ys), abs=1e-12)

    def test_constant(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1, 1, 1], [1, 2, 3])


def ranked_geometry(order):
    """Query and docs in 2-D whose cosine ranking is exactly ``order``."""
    docs = np.zeros((len(order), 2))
    for rank, doc in enumerate(order):
        angle = 0.3 * rank
        docs[doc] = [math.cos(angle), math.sin(angle)]
    return np.array([[1.0, 0.0]]), docs


def oracle_metrics(order, relevant, k):
    rank_of = {doc: r + 1 for r, doc in enumerate(order)}
    ranks = sorted(rank_of[d] for d in relevant)
    rr = 1.0 / ranks[0] if ranks and ranks[0] <= k else 0.0
    ap = sum((i + 1) / r for i, r in enumerate(ranks) if r <= k) / min(k, len(relevant)) if relevant else 0.0
    return rr, ap


class TestRetrieval:
    def test_exhaustive_four_documents(self):
        subsets = [set(c) for n in range(1, 5) for c in itertools.combinations(range(4), n)]
        for order in itertools.permutations(range(4)):
            q, d = ranked_geometry(order)
            for rel in subsets:
                for k in range(1, 5):
                    got = retrieval_metrics(q, d, [rel], k)
                    rr, ap = oracle_metrics(order, rel, k)
                    assert got[f"MRR@{k}"] == pytest.approx(rr, abs=1e-12)
                    assert got[f"MAP@{k}"] == pytest.approx(ap, abs=1e-12)

    def test_relevant_at_rank_two(self):
        q, d = ranked_geometry((2, 0, 1))
        assert retrieval_metrics(q, d, [{0}], 3) == {"MRR@3": 0.5, "MAP@3": 0.5}

    def test_perfect_and_missing(self):
        q, d = ranked_geometry((0, 1, 2))
        assert retrieval_metrics(q, d, [{0}], 1) == {"MRR@1": 1.0, "MAP@1": 1.0}
        assert retrieval_metrics(q, d, [{2}], 2) == {"MRR@2": 0.0, "MAP@2": 0.0}

    def test_moving_relevant_down_never_helps(self):
        for k in (1, 2, 3):
            scores = []
            for pos in range(3):
                order = [1, 2]
                order.insert(pos, 0)
                q, d = ranked_geometry(tuple(order))
                scores.append(retrieval_metrics(q, d, [{0}], k))
            for a, b in zip(scores, scores[1:]):
                assert b[f"MRR@{k}"] <= a[f"MRR@{k}"] and b[f"MAP@{k}"] <= a[f"MAP@{k}"]

    def test_ties_keep_index_order(self):
        q = np.array([[1.0, 0.0]])
        d = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
        assert retrieval_metrics(q, d, [{1}], 1)["MRR@1"] == 0.0
        assert retrieval_metrics(q, d, [{0}], 1)["MRR@1"] == 1.0

    def test_empty_docs(self):
        with pytest.raises(EmptyInputError):
            retrieval_metrics(np.ones((1, 2)), np.zeros((0, 2)), [{0}], 1)

    def test_relevance_file(self, tmp_path):
        path = tmp_path / "rel.tsv"
        path.write_text("0\t1\n1\t0\n0\t2\n", encoding="utf-8")
        assert load_relevance(path, 2, 3) == [{1, 2}, {0}]
        path.write_text("0\t9\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_relevance(path, 2, 3)


class TestDiagnostics:
    def test_identical_pairs(self, np_rng):
        z = np_rng.normal(size=(5, 4))
        assert space_diagnostics(z, z)["alignment"] == pytest.approx(0.0, abs=1e-15)

    def test_collapsed(self):
        z = np.tile([1.0, 2.0, 3.0], (4, 1))
        out = space_diagnostics(z, z)
        assert out["mean_pairwise_cosine"] == pytest.approx(1.0)
        assert out["uniformity"] == pytest.approx(0.0, abs=1e-12)

    def test_oracle(self, np_rng):
        z, zp = np_rng.normal(size=(4, 3)), np_rng.normal(size=(4, 3))
        unit = [v / math.sqrt(sum(x * x for x in v)) for v in z]
        unit_p = [v / math.sqrt(sum(x * x for x in v)) for v in zp]
        align = sum(sum((a - b) ** 2 for a, b in zip(u, w)) for u, w in zip(unit, unit_p)) / 4
        pairs = [(i, j) for i in range(4) for j in range(4) if i != j]
        unif = math.log(sum(math.exp(-2 * sum((a - b) ** 2 for a, b in zip(unit[i], unit[j]))) for i, j in pairs) / len(pairs))
        mpc = sum(sum(a * b for a, b in zip(unit[i], unit[j])) for i, j in pairs) / len(pairs)
        out = space_diagnostics(z, zp)
        assert out["alignment"] == pytest.approx(align, abs=1e-12)
        assert out["uniformity"] == pytest.approx(unif, abs=1e-12)
        assert out["mean_pairwise_cosine"] == pytest.approx(mpc, abs=1e-12)

    def test_cosine_gap(self):
        a = np.eye(3)
        gap = mean_cosine_gap(a, a, np.array([1, 2, 0]))
        assert (gap["paired"], gap["crossed"], gap["gap"]) == (1.0, 0.0, 1.0)


@pytest.fixture(scope="module")
def untrained(toy_vocab):
    cfg = ModelConfig(V=len(toy_vocab))
    return init_params(cfg, seed=0), cfg


class TestEvalSts:
    def test_random_model_uncorrelated(self, untrained, toy_vocab):
        params, cfg = untrained
        records = random_sts_records(1000, seed=4)
        rho = eval_sts(records, params, cfg, toy_vocab).spearman
        # permutation null for the same cosines
        a = embed_sentences([r.sentence_a for r in records], params, cfg, toy_vocab).data
        b = embed_sentences([r.sentence_b for r in records], params, cfg, toy_vocab).data
        sims = np.sum(a * b, axis=1) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
        gold = np.array([r.gold_score for r in records])
        rng = np.random.default_rng(0)
        null = np.array([spearman(sims, rng.permutation(gold)) for _ in range(300)])
        assert abs(rho) < 0.1
        assert np.quantile(np.abs(null), 0.99) < 0.1
        assert np.mean(np.abs(null) >= abs(rho)) > 0.01

    def test_gold_matching_cosines_gives_100(self, untrained, toy_vocab):
        params, cfg = untrained
        sents = template_corpus(40, seed=7)
        a = embed_sentences(sents[:20], params, cfg, toy_vocab).data
        b = embed_sentences(sents[20:], params, cfg, toy_vocab).data
        sims = np.sum(a * b, axis=1) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
        gold = 5 * (sims - sims.min()) / (sims.max() - sims.min())
        records = [EvalRecord(x, y, float(g)) for x, y, g in zip(sents[:20], sents[20:], gold)]
        assert eval_sts(records, params, cfg, toy_vocab).spearman_x100 == pytest.approx(100.0)

    def test_column_swap_and_duplicates(self, untrained, toy_vocab):
        params, cfg = untrained
        records = random_sts_records(30, seed=2)
        records += [records[0], records[0]]
        swapped = [EvalRecord(r.sentence_b, r.sentence_a, r.gold_score) for r in records]
        assert eval_sts(records, params, cfg, toy_vocab).spearman == eval_sts(swapped, params, cfg, toy_vocab).spearman

    def test_too_few_records(self, untrained, toy_vocab):
        params, cfg = untrained
        with pytest.raises(EmptyInputError):
            eval_sts(random_sts_records(1), params, cfg, toy_vocab)


def test_report_file(tmp_path):
    report = EvalReport(spearman=0.25, n_pairs=10, diagnostics={"alignment": 0.5})
    report.write(tmp_path / "r.txt")
    fields = EvalReport.read(tmp_path / "r.txt")
    assert fields["spearman_x100"] == "25.00"
    assert fields["alignment"] == "0.5"
    assert '"n_pairs": 10' in fields["json"]

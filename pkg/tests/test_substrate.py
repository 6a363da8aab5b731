import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from helpers import OPS, t64

from sentdenoise.errors import (
    ContractViolation,
    DegenerateBatchError,
    InvalidParameterError,
    InvalidShapeError,
    InvalidTokenError,
    NonFiniteError,
)
from sentdenoise.substrate import (
    RngStream,
    Tensor,
    cross_entropy_mean,
    dropout,
    grad_check,
    layer_norm,
    no_grad,
    precision,
    softmax_rows,
)


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(softmax_rows(t64([0.0, 0.0])).data, [0.5, 0.5])

    @pytest.mark.parametrize("c", [-50.0, 0.0, 3.5, 700.0])
    def test_constant_row_is_uniform(self, c):
        np.testing.assert_allclose(softmax_rows(t64([c, c, c])).data, [1 / 3] * 3, atol=1e-12)

    def test_against_extended_precision(self):
        mpmath.mp.dps = 40
        xs = [1, 2, 3]
        denom = sum(mpmath.e ** x for x in xs)
        oracle = [float(mpmath.e ** x / denom) for x in xs]
        got = softmax_rows(t64(xs)).data
        np.testing.assert_allclose(got, oracle, rtol=1e-14)
        np.testing.assert_allclose(got, [0.0900, 0.2447, 0.6652], atol=5e-5)

    def test_empty_last_dim(self):
        with pytest.raises(InvalidShapeError):
            softmax_rows(Tensor(np.zeros((2, 0))))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)), st.floats(-100, 100))
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        y = softmax_rows(t64(x)).data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(softmax_rows(t64(x + c)).data, y, atol=1e-6)


class TestLayerNorm:
    def test_constant_row_maps_to_bias(self):
        out = layer_norm(t64([[5.0, 5, 5, 5]]), t64(np.ones(4)), t64(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_standardised_row(self):
        out = layer_norm(t64([1.0, -1.0]), t64(np.ones(2)), t64(np.zeros(2)))
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-5)

    def test_random_row_against_direct_formula(self, np_rng):
        x = np_rng.normal(size=8)
        g, b = np_rng.normal(size=8), np_rng.normal(size=8)
        mu = sum(x) / 8
        var = sum((xi - mu) ** 2 for xi in x) / 8
        oracle = [(xi - mu) / math.sqrt(var + 1e-5) * gi + bi for xi, gi, bi in zip(x, g, b)]
        np.testing.assert_allclose(layer_norm(t64(x), t64(g), t64(b)).data, oracle, rtol=1e-12)

    def test_pre_affine_moments(self, np_rng):
        x = np_rng.normal(3.0, 4.0, size=(6, 32))
        out = layer_norm(t64(x), t64(np.ones(32)), t64(np.zeros(32))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)

    def test_width_mismatch(self):
        with pytest.raises(InvalidShapeError):
            layer_norm(t64(np.zeros((2, 4))), t64(np.ones(3)), t64(np.zeros(3)))


class TestDropout:
    def test_zero_rate_is_identity(self):
        x = t64(np.arange(12.0).reshape(3, 4))
        out, mask = dropout(x, 0.0, RngStream(0))
        np.testing.assert_array_equal(out.data, x.data)
        np.testing.assert_array_equal(mask.data, np.ones((3, 4)))

    def test_zero_fraction_within_binomial_bound(self):
        n, p = 10_000, 0.825
        # probability that the zeroed fraction leaves [0.80, 0.85]
        tail = stats.binom.cdf(int(0.80 * n) - 1, n, p) + stats.binom.sf(int(0.85 * n), n, p)
        assert tail < 1e-3
        _, mask = dropout(Tensor(np.ones(n)), p, RngStream(42))
        assert 0.80 <= 1.0 - mask.data.mean() <= 0.85

    def test_same_stream_same_mask(self):
        x = Tensor(np.ones((50, 50)))
        _, a = dropout(x, 0.5, RngStream(3, 9))
        _, b = dropout(x, 0.5, RngStream(3, 9))
        np.testing.assert_array_equal(a.data, b.data)

    def test_expectation_preserved(self):
        x = Tensor(np.linspace(0.5, 1.5, 1000))
        means = [dropout(x, 0.825, RngStream(s))[0].data.mean() for s in range(100)]
        assert abs(np.mean(means) / x.data.mean() - 1.0) < 0.05

    def test_survivors_scaled(self):
        out, mask = dropout(Tensor(np.ones(1000)), 0.75, RngStream(1))
        kept = out.data[mask.data == 1]
        np.testing.assert_allclose(kept, 4.0)
        assert np.all(out.data[mask.data == 0] == 0)

    @pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
    def test_invalid_rate(self, p):
        with pytest.raises(InvalidParameterError):
            dropout(Tensor(np.ones(3)), p, RngStream(0))


def _ce_oracle(logits, targets, mask):
    total, count = 0.0, 0
    for b in range(logits.shape[0]):
        for j in range(logits.shape[1]):
            if mask[b][j]:
                row = logits[b][j]
                m = max(row)
                lse = m + math.log(sum(math.exp(v - m) for v in row))
                total += lse - row[targets[b][j]]
                count += 1
    return total / count


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = cross_entropy_mean(t64(np.zeros((2, 3, 4))), np.zeros((2, 3), int), np.ones((2, 3)))
        assert loss.item() == pytest.approx(math.log(4), abs=1e-6)

    def test_near_delta(self):
        logits = np.full((1, 2, 5), -20.0)
        targets = np.array([[3, 1]])
        logits[0, 0, 3] = logits[0, 1, 1] = 20.0
        assert cross_entropy_mean(t64(logits), targets, np.ones((1, 2))).item() < 1e-6

    def test_random_case_against_direct_evaluation(self, np_rng):
        logits = np_rng.normal(size=(2, 3, 5)) * 3
        targets = np_rng.integers(0, 5, size=(2, 3))
        mask = np.array([[1, 1, 0], [1, 0, 1]])
        got = cross_entropy_mean(t64(logits), targets, mask).item()
        assert got == pytest.approx(_ce_oracle(logits, targets, mask), abs=1e-12)

    def test_sum_reduction(self, np_rng):
        logits = np_rng.normal(size=(2, 3, 5))
        targets = np_rng.integers(0, 5, size=(2, 3))
        mask = np.ones((2, 3))
        mean = cross_entropy_mean(t64(logits), targets, mask).item()
        total = cross_entropy_mean(t64(logits), targets, mask, reduction="sum").item()
        assert total == pytest.approx(6 * mean)

    def test_all_zero_mask(self):
        with pytest.raises(DegenerateBatchError):
            cross_entropy_mean(t64(np.zeros((1, 2, 3))), np.zeros((1, 2), int), np.zeros((1, 2)))

    def test_target_out_of_range(self):
        with pytest.raises(InvalidTokenError):
            cross_entropy_mean(t64(np.zeros((1, 2, 3))), np.array([[0, 3]]), np.ones((1, 2)))

    def test_masked_out_targets_are_not_validated(self):
        loss = cross_entropy_mean(t64(np.zeros((1, 2, 3))), np.array([[0, 99]]), np.array([[1, 0]]))
        assert loss.item() == pytest.approx(math.log(3))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (2, 3, 6), elements=st.floats(-50, 50)))
    def test_non_negative(self, logits):
        targets = np.arange(6).reshape(2, 3) % 6
        assert cross_entropy_mean(t64(logits), targets, np.ones((2, 3))).item() >= 0.0


class TestGradCheck:
    def test_constant_function(self):
        x = t64(np.ones(4))
        assert grad_check(lambda: t64(2.0) + 0.0 * x.sum(), {"x": x}) == 0.0

    def test_linear_function(self):
        x = t64([0.3, -1.0, 2.0])
        err = grad_check(lambda: (x * 3.0).sum(), {"x": x})
        np.testing.assert_array_equal(x.grad, [3.0, 3.0, 3.0])
        assert err < 1e-8

    def test_nondeterministic_target_rejected(self):
        x = t64(np.ones((4, 4)))
        stream = RngStream(0)
        with pytest.raises(ContractViolation):
            grad_check(lambda: dropout(x, 0.5, stream)[0].sum(), {"x": x})


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(sorted(OPS).index(name))
    a, b, f = OPS[name](rng)
    assert grad_check(f, {"a": a, "b": b}) < 1e-4


class TestTensorPlumbing:
    def test_gradients_accumulate_until_cleared(self):
        x = t64([1.0, 2.0], grad=True)
        (x * 2.0).sum().backward()
        (x * 2.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [4.0, 4.0])
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression(self):
        x = t64([3.0], grad=True)
        y = x * x
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [12.0])

    def test_no_grad_builds_no_graph(self):
        x = t64([1.0], grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_non_finite_forward_raises(self):
        with pytest.raises(NonFiniteError):
            t64([1.0]) / t64([0.0])

    def test_dims_and_values(self):
        t = Tensor(np.zeros((2, 3)))
        assert t.dims == (2, 3)
        assert len(t.values) == 6

    def test_precision_context(self):
        with precision("float64"):
            assert Tensor([1, 2]).dtype == np.float64
        assert Tensor([1, 2]).dtype == np.float32


class TestRngStream:
    def test_replay(self):
        a, b = RngStream(7, 3), RngStream(7, 3)
        np.testing.assert_array_equal(a.uniform(10), b.uniform(10))

    def test_child_streams_differ_and_replay(self):
        root = RngStream(7)
        x, y = root.child("a", 1).uniform(50), root.child("a", 2).uniform(50)
        assert not np.array_equal(x, y)
        np.testing.assert_array_equal(x, RngStream(7).child("a", 1).uniform(50))
        # distinct streams look independent
        assert abs(np.corrcoef(root.child("u").uniform(5000), root.child("v").uniform(5000))[0, 1]) < 0.05

    def test_counter_advances(self):
        r = RngStream(1)
        before = r.counter
        r.uniform(100)
        assert r.counter > before

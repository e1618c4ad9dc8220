import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cxrvae.ensemble import (
    Method, PredictionMatrix, SourceTag, combine, entropy_weighted_average, simple_average,
)
from cxrvae.errors import DomainError, StructuralError

from oracles import entropy_hp

probs = st.floats(0.0, 1.0)


@st.composite
def member_sets(draw, min_members=1, max_members=5):
    n = draw(st.integers(1, 6))
    k = draw(st.integers(1, 4))
    m = draw(st.integers(min_members, max_members))
    return [draw(arrays(np.float64, (n, k), elements=probs)) for _ in range(m)]


def literal_oracle(members):
    """Cell-by-cell weighted sum over the member count, with high-precision entropy."""
    m = len(members)
    out = np.zeros_like(members[0])
    for idx in np.ndindex(out.shape):
        out[idx] = sum((1 - entropy_hp(Y[idx])) * Y[idx] for Y in members) / m
    return out


class TestSimpleAverage:
    def test_identical_members(self):
        Y = np.random.default_rng(0).random((5, 3))
        for m in (1, 2, 5, 7):
            assert np.array_equal(simple_average([Y] * m).values, Y)

    def test_examples(self):
        assert simple_average([[[0.2]], [[0.8]]]).values[0, 0] == pytest.approx(0.5)
        members = [[[0.1]], [[0.5]], [[0.9]]]
        assert simple_average(members).values[0, 0] == pytest.approx(np.mean([0.1, 0.5, 0.9]))
        assert simple_average(members).values[0, 0] == pytest.approx(0.5)

    @given(member_sets())
    def test_bounded_by_members(self, members):
        out = simple_average(members).values
        stack = np.stack(members)
        assert np.all(out >= stack.min(axis=0) - 1e-15)
        assert np.all(out <= stack.max(axis=0) + 1e-15)

    @given(member_sets(min_members=2), st.randoms())
    def test_member_order_free(self, members, rnd):
        shuffled = members[:]
        rnd.shuffle(shuffled)
        for method in Method:
            a = combine(members, method).values
            b = combine(shuffled, method).values
            assert np.allclose(a, b, rtol=0, atol=1e-15)

    def test_errors(self):
        with pytest.raises(StructuralError):
            simple_average([])
        with pytest.raises(StructuralError):
            simple_average([np.zeros((2, 2)), np.zeros((3, 2))])
        with pytest.raises(DomainError):
            PredictionMatrix(np.array([[1.2]]))
        with pytest.raises(StructuralError):
            PredictionMatrix(np.zeros(3))

    def test_row_alignment(self):
        a = PredictionMatrix(np.zeros((2, 1)), row_ids=("a", "b"))
        b = PredictionMatrix(np.zeros((2, 1)), row_ids=("b", "a"))
        with pytest.raises(StructuralError):
            simple_average([a, b])

    def test_tags_are_kept(self):
        tag = SourceTag("mlp-D16-m0", "RF", 16)
        out = simple_average([PredictionMatrix(np.zeros((1, 1)), tag)])
        assert out.members == (tag,) and str(tag) == "mlp-D16-m0-RF-D16"


class TestEntropyAverage:
    def test_certain_members(self):
        ones = np.ones((3, 2))
        assert np.array_equal(entropy_weighted_average([ones, ones]).values, ones)

    def test_half_and_one(self):
        out = entropy_weighted_average([[[0.5]], [[1.0]]]).values[0, 0]
        assert out == 0.5

    def test_single_member_is_attenuated(self):
        out = entropy_weighted_average([[[0.8]]]).values[0, 0]
        assert out == pytest.approx((1 - 0.721928094887362) * 0.8, abs=1e-12)
        assert out == pytest.approx(0.222458, abs=1e-6)

    @given(member_sets())
    @settings(max_examples=60)
    def test_matches_cellwise_oracle(self, members):
        assert np.allclose(entropy_weighted_average(members).values, literal_oracle(members), atol=1e-13)

    @given(member_sets())
    def test_literal_below_simple(self, members):
        lit = entropy_weighted_average(members).values
        assert np.all(lit <= simple_average(members).values + 1e-15)
        assert np.all((lit >= 0) & (lit <= 1))

    @given(member_sets(), st.data())
    def test_binary_members_agree_with_simple(self, members, data):
        binary = [np.round(Y) for Y in members]
        assert np.array_equal(entropy_weighted_average(binary).values, simple_average(binary).values)

    @given(arrays(np.float64, (4, 3), elements=probs), st.integers(1, 5))
    def test_normalized_identical_members(self, Y, m):
        out = entropy_weighted_average([Y] * m, normalized=True).values
        assert np.array_equal(out, Y)

    def test_normalized_falls_back_at_half(self):
        out = entropy_weighted_average([[[0.5, 0.5]], [[0.5, 1.0]]], normalized=True).values
        assert out[0, 0] == 0.5
        assert out[0, 1] == 1.0

    @given(member_sets())
    def test_normalized_within_member_range(self, members):
        out = entropy_weighted_average(members, normalized=True).values
        stack = np.stack(members)
        assert np.all(out >= stack.min(axis=0) - 1e-12)
        assert np.all(out <= stack.max(axis=0) + 1e-12)

    def test_combine_by_name(self):
        members = [np.full((1, 1), 0.8), np.full((1, 1), 0.6)]
        assert combine(members, "simple").method is Method.SIMPLE
        assert combine(members, "entropy").method is Method.ENTROPY
        assert combine(members, "entropy-normalized").method is Method.ENTROPY_NORMALIZED
        with pytest.raises(ValueError):
            combine(members, "median")

import json
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from afrclip.core import (
    DegenerateInputError,
    bilinear_resize,
    cosine_similarity,
    grid_flatten,
    grid_reshape,
    softmax_pair,
)

GOLDEN = Path(__file__).parent / "golden"
finite = st.floats(-50, 50, allow_nan=False)


class TestCosine:
    def test_identical(self):
        assert cosine_similarity([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_diagonal(self):
        assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.70711, abs=1e-5)

    def test_torch_matches_numpy(self):
        rng = np.random.default_rng(0)
        u, v = rng.normal(size=(2, 7, 5))
        t = cosine_similarity(torch.from_numpy(u), torch.from_numpy(v)).numpy()
        np.testing.assert_allclose(t, cosine_similarity(u, v), atol=1e-12)

    @pytest.mark.parametrize("u", [[0.0, 0.0], [[1.0, 2.0], [0.0, 0.0]]])
    def test_zero_vector_raises(self, u):
        with pytest.raises(DegenerateInputError):
            cosine_similarity(u, np.ones_like(np.asarray(u)))
        with pytest.raises(DegenerateInputError):
            cosine_similarity(torch.tensor(u), torch.ones(np.shape(u)))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])

    @given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3),
           st.floats(0.01, 100), st.floats(0.01, 100))
    def test_positive_scale_invariance(self, u, v, a, b):
        u, v = np.array(u), np.array(v)
        if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
            return
        c = cosine_similarity(u, v)
        assert -1.0 <= c <= 1.0
        assert cosine_similarity(a * u, b * v) == pytest.approx(c, abs=1e-9)


class TestSoftmaxPair:
    def test_symmetric(self):
        assert softmax_pair(0.5, 0.5) == 0.5

    def test_closed_forms(self):
        assert softmax_pair(1.0, 0.0) == pytest.approx(0.73106, abs=1e-5)
        assert softmax_pair(-3.0, 3.0) == pytest.approx(0.00247, abs=1e-5)
        assert softmax_pair(1.0, 0.0) == pytest.approx(oracles.two_way_softmax(1.0, 0.0), abs=1e-15)

    def test_large_inputs_stay_finite(self):
        assert softmax_pair(1000.0, 0.0) == 1.0
        assert softmax_pair(-1000.0, 1000.0) == 0.0
        t = softmax_pair(torch.tensor([800.0]), torch.tensor([-800.0]))
        assert torch.isfinite(t).all()

    @given(finite, finite)
    def test_complement(self, a, b):
        assert softmax_pair(a, b) + softmax_pair(b, a) == pytest.approx(1.0, abs=1e-12)

    @given(finite, finite, finite)
    def test_shift_invariance(self, a, b, c):
        assert softmax_pair(a + c, b + c) == pytest.approx(softmax_pair(a, b), abs=1e-12)

    @given(finite, finite, st.floats(1e-3, 5))
    def test_monotone(self, a, b, delta):
        assert softmax_pair(a + delta, b) >= softmax_pair(a, b)
        assert softmax_pair(a, b + delta) <= softmax_pair(a, b)

    def test_torch_and_numpy_agree(self):
        a = np.linspace(-3, 3, 11)
        b = a[::-1].copy()
        t = softmax_pair(torch.from_numpy(a), torch.from_numpy(b)).numpy()
        np.testing.assert_allclose(t, softmax_pair(a, b), atol=1e-15)


class TestBilinear:
    def test_golden_2x2_to_2x4(self):
        g = json.loads((GOLDEN / "bilinear_2x2_to_2x4.json").read_text())
        src = np.array(g["input"], dtype=np.float64)
        out = bilinear_resize(src, tuple(g["target"]))
        np.testing.assert_allclose(out, g["output"], atol=1e-12)
        assert np.all(np.diff(out, axis=1) > 0)
        assert out.min() >= 0 and out.max() <= 1
        t = bilinear_resize(torch.from_numpy(src), (2, 4)).numpy()
        np.testing.assert_allclose(t, g["output"], atol=1e-12)

    @pytest.mark.parametrize("target", [(1, 1), (3, 5), (64, 64), (7, 2)])
    def test_constant_map(self, target):
        src = np.full((4, 4), 0.3)
        np.testing.assert_array_equal(bilinear_resize(src, target), np.full(target, 0.3))
        t = bilinear_resize(torch.full((4, 4), 0.3, dtype=torch.float64), target)
        np.testing.assert_allclose(t.numpy(), 0.3, atol=1e-15)

    def test_identity_is_bit_exact(self):
        src = np.random.default_rng(1).random((5, 5))
        out = bilinear_resize(src, (5, 5))
        assert out is not src and np.array_equal(out, src)
        t = torch.from_numpy(src)
        assert torch.equal(bilinear_resize(t, (5, 5)), t)

    @pytest.mark.parametrize("shape,target", [((2, 2), (9, 9)), ((4, 3), (8, 13)), ((8, 8), (64, 64)), ((1, 3), (4, 4))])
    def test_matches_oracle_and_torch(self, shape, target):
        src = np.random.default_rng(2).random(shape)
        ref = oracles.bilinear_corners(src, *target)
        np.testing.assert_allclose(bilinear_resize(src, target), ref, atol=1e-12)
        np.testing.assert_allclose(bilinear_resize(torch.from_numpy(src), target).numpy(), ref, atol=1e-12)

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 20), st.integers(1, 20), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_range_preserved(self, h, w, H, W, seed):
        src = np.random.default_rng(seed).random((h, w))
        out = bilinear_resize(src, (H, W))
        assert out.min() >= src.min() - 1e-12 and out.max() <= src.max() + 1e-12

    @pytest.mark.parametrize("target", [(0, 4), (4, -1)])
    def test_bad_target(self, target):
        with pytest.raises(ValueError):
            bilinear_resize(np.zeros((2, 2)), target)


class TestGrid:
    def test_row_major(self):
        tokens = np.arange(4 * 3).reshape(4, 3)
        g = grid_reshape(tokens)
        assert g.shape == (2, 2, 3)
        np.testing.assert_array_equal(g[0, 0], tokens[0])
        np.testing.assert_array_equal(g[1, 1], tokens[3])

    def test_round_trip(self):
        x = torch.randn(2, 16, 5)
        assert torch.equal(grid_flatten(grid_reshape(x)), x)

    def test_non_square(self):
        with pytest.raises(ValueError):
            grid_reshape(np.zeros((5, 2)))

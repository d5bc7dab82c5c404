import numpy as np
import pytest
import torch

from afrclip.cmfr import rectify
from afrclip.core import bilinear_resize
from afrclip.model import build_model
from afrclip.mpfa import aggregate_tokens
from afrclip.scoring import fuse_stages, image_score, infer, patch_probabilities, pixel_map
from conftest import tiny_config

E0 = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
E1 = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)


class TestImageScore:
    def test_equidistant(self):
        r = torch.tensor([1.0, 1.0, 0.3], dtype=torch.float64)
        assert float(image_score(r, E0, E1)) == pytest.approx(0.5, abs=1e-12)

    def test_closed_form(self):
        assert float(image_score(E0, E0, E1)) == pytest.approx(0.73106, abs=1e-5)

    def test_swap(self):
        r = torch.randn(3, dtype=torch.float64)
        f_a, f_n = torch.randn(2, 3, dtype=torch.float64)
        assert float(image_score(r, f_a, f_n) + image_score(r, f_n, f_a)) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_abnormal_similarity(self):
        # rotate r towards f_a inside the plane orthogonal to f_n: cos(r, f_n) stays 0
        probs = [float(image_score(torch.tensor([np.cos(a), 0.0, np.sin(a)], dtype=torch.float64), E0, E1))
                 for a in np.linspace(1.5, 0.0, 6)]
        assert all(b > a for a, b in zip(probs, probs[1:]))


class TestPixelMap:
    def test_single_hot_patch(self):
        rect = torch.stack([E1] * 5)  # class token + 2x2 grid
        rect[3] = E0
        grid = pixel_map(rect, E0, E1, 2, (2, 2))
        assert float(grid[1, 0]) == pytest.approx(0.73106, abs=1e-5)
        others = [float(grid[0, 0]), float(grid[0, 1]), float(grid[1, 1])]
        assert others == pytest.approx([0.26894] * 3, abs=1e-5)

    def test_class_token_ignored(self):
        rect = torch.stack([E0] + [E1] * 4)
        grid = pixel_map(rect, E0, E1, 2, (2, 2))
        assert torch.allclose(grid, torch.full((2, 2), 0.26894, dtype=torch.float64), atol=1e-5)

    def test_constant(self):
        rect = torch.randn(1, 3, dtype=torch.float64).expand(10, 3)
        out = pixel_map(rect, E0, E1, 3, (17, 23))
        assert out.shape == (17, 23)
        assert torch.allclose(out, out[0, 0].expand_as(out), atol=1e-15)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            pixel_map(torch.randn(6, 3), E0, E1, 2, (4, 4))


class TestFuse:
    def test_identical(self):
        m = np.random.default_rng(0).random((5, 5))
        np.testing.assert_allclose(fuse_stages([m] * 4), m, atol=1e-15)

    def test_constants(self):
        maps = [np.full((3, 3), v) for v in (0.2, 0.4, 0.6, 0.8)]
        np.testing.assert_allclose(fuse_stages(maps), 0.5, atol=1e-15)

    def test_convex(self):
        maps = np.random.default_rng(1).random((4, 6, 6))
        out = fuse_stages(maps)
        assert (out >= maps.min(0) - 1e-15).all() and (out <= maps.max(0) + 1e-15).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse_stages([np.zeros((2, 2)), np.zeros((3, 3))])

    def test_commutes_with_resize(self):
        maps = np.random.default_rng(2).random((4, 4, 4))
        a = fuse_stages([bilinear_resize(m, (13, 9)) for m in maps])
        b = bilinear_resize(fuse_stages(maps), (13, 9))
        np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.fixture(scope="module")
def tiny_model():
    return build_model(tiny_config("float64"))


def _img(seed, size=32):
    return np.random.default_rng(seed).random((size, size, 3))


class TestInfer:
    def test_ranges_and_shapes(self, tiny_model):
        res = infer(_img(0), "screw", tiny_model)
        assert 0 < res.image_score < 1
        assert res.heatmap.shape == (32, 32)
        assert res.per_stage_maps.shape == (4, 32, 32)
        assert ((res.heatmap > 0) & (res.heatmap < 1)).all()
        np.testing.assert_allclose(res.heatmap, res.per_stage_maps.mean(0), atol=1e-12)

    def test_prototype_swap(self, tiny_model):
        swapped = tiny_model.with_config(**{"prompts__normal": "a photo of a defective {c}",
                                            "prompts__abnormal": "a photo of a normal {c}"})
        a, b = infer(_img(1), "screw", tiny_model), infer(_img(1), "screw", swapped)
        assert a.image_score + b.image_score == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(a.heatmap + b.heatmap, 1.0, atol=1e-12)

    def test_all_disabled_is_constant_per_class(self, tiny_model):
        plain = tiny_model.with_config(cmfr__enabled=False, sp__enabled=False, mpfa__enabled=False)
        scores = {infer(_img(s), "screw", plain).image_score for s in range(3)}
        assert len(scores) == 1
        text = plain.text_embeddings(["screw"])
        with torch.no_grad():
            expected = float(image_score(text.f_s[0], text.f_a[0], text.f_n[0]))
        assert scores.pop() == pytest.approx(expected, abs=1e-12)

    def test_average_image_stages(self, tiny_model):
        avg = tiny_model.with_config(score__average_image_stages=True)
        with torch.no_grad():
            out = avg(torch.from_numpy(_img(2))[None], ["screw"])
        assert float(out.image_score[0]) == pytest.approx(float(out.stage_scores[0].mean()), abs=1e-15)

    def test_locality(self, tiny_model):
        """A change to one patch's adapted feature only moves its MPFA neighbourhood."""
        m = tiny_model.with_config(sp__enabled=False)
        x = torch.from_numpy(_img(3))[None]
        text = m.text_embeddings(["screw"])
        with torch.no_grad():
            base = m.visual_tokens(x)
            raw = m.backbone.encode_image(m.backbone.normalize(x))
            bumped = raw[0].clone()
            j = 1 + 0 * 4 + 1  # grid cell (0, 1)
            bumped[:, j] += 0.5
            f = aggregate_tokens(m.visual_adapters[0](bumped), 3)
            p0 = patch_probabilities(rectify(base[0], text.f_s, m.cmfr["stage1"]).f_ts[:, 1:], text.f_a, text.f_n)
            p1 = patch_probabilities(rectify(f, text.f_s, m.cmfr["stage1"]).f_ts[:, 1:], text.f_a, text.f_n)
        changed = (p0 != p1).reshape(4, 4)
        allowed = np.zeros((4, 4), dtype=bool)
        allowed[0:2, 0:3] = True
        assert changed.numpy()[~allowed].sum() == 0
        assert changed[0, 1]

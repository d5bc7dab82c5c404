"""Frozen values for the seeded surrogate, produced by tests/golden/make_golden.py from the numpy reference."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent / "golden"))
import make_golden  # noqa: E402
from afrclip.cmfr import rectify  # noqa: E402
from afrclip.scoring import infer  # noqa: E402

GOLDEN = json.loads((Path(__file__).parent / "golden" / "surrogate_pipeline.json").read_text())
TOL = 1e-10


@pytest.fixture(scope="module")
def model():
    return make_golden.golden_model()


@pytest.fixture(scope="module")
def image():
    return torch.from_numpy(make_golden.golden_image())


def test_prompt_embedding(model):
    f_s = model.text_embeddings([GOLDEN["class_name"]]).f_s[0]
    np.testing.assert_allclose(f_s.detach().numpy(), GOLDEN["f_s"], atol=TOL, rtol=0)


def test_self_prompt_matrix(model, image):
    with torch.no_grad():
        f_cnn = model.backbone.extract_cnn_features(model.backbone.normalize(image))
        prompts = model.sp.prompts(f_cnn)
    assert prompts.shape == (5, 32)
    np.testing.assert_allclose(prompts.numpy(), GOLDEN["sp_prompts"], atol=TOL, rtol=0)


def test_class_token_rectification(model, image):
    with torch.no_grad():
        f_v = model.visual_tokens(image[None])[3]
        f_s = model.text_embeddings([GOLDEN["class_name"]]).f_s
        row = rectify(f_v, f_s, model.cmfr["stage4"]).f_ts[0, 0]
    np.testing.assert_allclose(row.numpy(), GOLDEN["cls_rect_stage4"], atol=TOL, rtol=0)


def test_score_and_heatmap(model, image):
    res = infer(image.numpy(), GOLDEN["class_name"], model)
    assert res.image_score == pytest.approx(GOLDEN["image_score"], abs=TOL)
    assert float(res.heatmap.sum()) == pytest.approx(GOLDEN["heatmap_sum"], abs=1e-8)
    h = res.heatmap
    np.testing.assert_allclose([h[0, 0], h[0, -1], h[-1, 0], h[-1, -1]], GOLDEN["heatmap_corners"], atol=TOL, rtol=0)

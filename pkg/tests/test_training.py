import json
import math

import numpy as np
import pytest
import torch

from afrclip.dataio import ProtocolViolation
from afrclip.model import AFRCLIP, build_model
from afrclip.training import (
    NumericError,
    bce_loss,
    compute_loss,
    dice_loss,
    focal_loss,
    lr_at,
    stratified_split,
    train,
)
from conftest import tiny_config


class TestSchedule:
    @pytest.mark.parametrize("epoch,lr", [(0, 0.001), (1, 0.0005), (99, 1e-5)])
    def test_values(self, epoch, lr):
        assert lr_at(epoch) == lr

    def test_negative(self):
        with pytest.raises(ValueError):
            lr_at(-1)


class TestLoss:
    def test_half_everywhere(self):
        hm = torch.full((1, 4, 4), 0.5, dtype=torch.float64)
        total, parts = compute_loss(torch.tensor([0.5], dtype=torch.float64), hm, torch.tensor([0.0]),
                                    torch.zeros(1, 4, 4))
        assert parts["bce"] == pytest.approx(-math.log(0.5), abs=1e-12)
        assert parts["focal"] == pytest.approx(0.25 * math.log(2), abs=1e-12)
        assert parts["dice"] == pytest.approx(1 - 1 / 9, abs=1e-12)
        assert float(total) == pytest.approx(sum(parts.values()), abs=1e-12)

    def test_perfect_prediction(self):
        mask = torch.zeros(2, 4, 4, dtype=torch.float64)
        mask[1, :2, :2] = 1
        total, _ = compute_loss(torch.tensor([0.0, 1.0], dtype=torch.float64), mask.clone(),
                                torch.tensor([0.0, 1.0]), mask)
        assert float(total) < 1e-6

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_finite_at_boundaries(self, p):
        x = torch.full((3,), p, dtype=torch.float64)
        y = torch.tensor([0.0, 1.0, 1.0], dtype=torch.float64)
        assert torch.isfinite(bce_loss(x, y)) and torch.isfinite(focal_loss(x, y))

    def test_dice_empty(self):
        assert float(dice_loss(torch.zeros(1, 3, 3), torch.zeros(1, 3, 3))) == 0.0

    def test_nan_aborts(self):
        with pytest.raises(NumericError, match="non-finite"):
            compute_loss(torch.tensor([float("nan")]), torch.zeros(1, 2, 2), torch.tensor([0.0]), torch.zeros(1, 2, 2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compute_loss(torch.tensor([0.5]), torch.zeros(1, 2, 2), torch.tensor([0.0]), torch.zeros(1, 3, 3))

    def test_loss_gradcheck(self):
        s = torch.rand(2, dtype=torch.float64).mul(0.8).add(0.1).requires_grad_()
        h = torch.rand(2, 3, 3, dtype=torch.float64).mul(0.8).add(0.1).requires_grad_()
        y = torch.tensor([0.0, 1.0], dtype=torch.float64)
        m = (torch.rand(2, 3, 3) > 0.5).double()
        assert torch.autograd.gradcheck(lambda a, b: compute_loss(a, b, y, m)[0], (s, h))


def test_stratified_split(synthetic_pair):
    recs = synthetic_pair[0].records
    tr, va = stratified_split(recs, 0.25, seed=0)
    assert len(tr) + len(va) == len(recs)
    assert sum(r.label for r in va) == 2 and len(va) == 4
    assert stratified_split(recs, 0.25, seed=0) == (tr, va)


def _tiny_run_cfg(**kw):
    return tiny_config(**{"backbone__image_size": 64, "train__epochs": 2, "train__batch_size": 4,
                          "train__save_every": 1, **kw})


def test_smoke_loss_decreases(synthetic_pair, tmp_path):
    cfg = _tiny_run_cfg(train__epochs=3, train__val_fraction=0.0, train__lr0=0.01)
    model = build_model(cfg)
    res = train(cfg, synthetic_pair[0], model, tmp_path)
    losses = [h["train_loss"] for h in res.history]
    assert losses[-1] < losses[0]
    for name in ("epoch_000", "epoch_002", "best", "last"):
        assert (tmp_path / name / "manifest.txt").is_file()
    lines = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert {"epoch", "step", "lr", "loss", "bce", "focal", "dice"} <= set(lines[0])


def test_deterministic_checkpoints(synthetic_pair, tmp_path):
    cfg = _tiny_run_cfg()
    for run in ("a", "b"):
        train(cfg, synthetic_pair[0], build_model(cfg), tmp_path / run)
    for name in ("best", "last", "epoch_001"):
        for f in ("tensors.bin", "manifest.txt", "config.txt"):
            assert (tmp_path / "a" / name / f).read_bytes() == (tmp_path / "b" / name / f).read_bytes()


def test_backbone_frozen_and_excluded(synthetic_pair, tmp_path):
    cfg = _tiny_run_cfg(train__epochs=1)
    model = build_model(cfg)
    before = {k: v.clone() for k, v in model.backbone.state_dict().items()}
    train(cfg, synthetic_pair[0], model, tmp_path)
    assert all(torch.equal(v, before[k]) for k, v in model.backbone.state_dict().items())
    assert not any(k.startswith("backbone.") for k in model.trainable_parameters())
    # registry size does not depend on the backbone depth
    deeper = build_model(cfg.replace(backbone__layers=12))
    assert sum(p.numel() for p in deeper.trainable_parameters().values()) == \
        sum(p.numel() for p in model.trainable_parameters().values())


def test_checkpoint_reload(synthetic_pair, tmp_path):
    cfg = _tiny_run_cfg(train__epochs=1)
    model = build_model(cfg)
    res = train(cfg, synthetic_pair[0], model, tmp_path)
    again = AFRCLIP.load(res.last_checkpoint)
    for k, v in model.trainable_state().items():
        assert torch.equal(v, again.trainable_state()[k])


def test_rejects_bad_datasets(synthetic_pair, tmp_path):
    cfg = _tiny_run_cfg(train__epochs=1)
    man = synthetic_pair[0]
    with pytest.raises(ValueError, match="empty"):
        train(cfg, man.subset(records=[]), build_model(cfg), tmp_path)
    with pytest.raises(ValueError, match="both"):
        train(cfg, man.subset(records=[r for r in man.records if r.label == 0]), build_model(cfg), tmp_path)
    with pytest.raises(ProtocolViolation):
        train(cfg.replace(data__test_id=man.dataset_id), man, build_model(cfg), tmp_path)

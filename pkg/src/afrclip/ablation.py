"""Toggle grids for component, self-prompting stage, window size and prompt-part sweeps."""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

from afrclip.backbone import Backbone, load_weights
from afrclip.config import RunConfig
from afrclip.dataio import DatasetManifest
from afrclip.evaluate import evaluate
from afrclip.model import build_model
from afrclip.training import train

log = logging.getLogger(__name__)


def _components(cmfr: bool, sp: bool, mpfa: bool) -> dict:
    return {"cmfr__enabled": cmfr, "sp__enabled": sp, "mpfa__enabled": mpfa}


# cell name -> config overrides
SWEEPS: dict[str, list[tuple[str, dict]]] = {
    "components": [
        ("baseline", _components(False, False, False)),
        ("sp+mpfa", _components(False, True, True)),
        ("cmfr", _components(True, False, False)),
        ("cmfr+sp", _components(True, True, False)),
        ("cmfr+mpfa", _components(True, False, True)),
        ("full", _components(True, True, True)),
    ],
    "sp_stages": [
        ("1", {"sp__stages": (1,)}),
        ("1-2", {"sp__stages": (1, 2)}),
        ("1-3", {"sp__stages": (1, 2, 3)}),
        ("1-4", {"sp__stages": (1, 2, 3, 4)}),
    ],
    "m": [
        ("1x1", {"mpfa__m": 1}),
        ("3x3", {"mpfa__m": 3}),
        ("5x5", {"mpfa__m": 5}),
    ],
    "pv_pl": [
        ("none", {"sp__use_pv": False, "sp__use_pl": False}),
        ("p_v", {"sp__use_pv": True, "sp__use_pl": False}),
        ("p_l", {"sp__use_pv": False, "sp__use_pl": True}),
        ("p_v+p_l", {"sp__use_pv": True, "sp__use_pl": True}),
    ],
}

CSV_HEADER = ("sweep", "cell", "dataset", "level", "auroc", "max_f1")


def train_and_evaluate(cfg: RunConfig, train_set: DatasetManifest, test_set: DatasetManifest, out_dir: str | Path,
                       backbone: Backbone | None = None, workers: int = 1) -> list[tuple[str, str, float, float]]:
    """Train from scratch with ``cfg`` and score the final-epoch model on ``test_set``."""
    model = build_model(cfg, backbone)
    train(cfg, train_set, model, out_dir)
    return evaluate(model, test_set, per_image_pixel=cfg.eval.per_image_pixel, workers=workers)


def run_sweep(cfg: RunConfig, sweep: str, train_set: DatasetManifest, test_set: DatasetManifest,
              out_dir: str | Path, workers: int = 1) -> list[tuple]:
    if sweep not in SWEEPS:
        raise ValueError(f"unknown sweep {sweep!r}; choose from {sorted(SWEEPS)}")
    out_dir = Path(out_dir)
    backbone = load_weights(cfg.backbone.source, cfg.backbone)
    rows = []
    for cell, overrides in SWEEPS[sweep]:
        log.info("sweep %s: cell %s", sweep, cell)
        cell_cfg = cfg.replace(**overrides)
        slug = cell.replace("+", "_")
        for name, level, auc, f1 in train_and_evaluate(cell_cfg, train_set, test_set, out_dir / slug,
                                                        backbone, workers):
            rows.append((sweep, cell, name, level, auc, f1))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for sweep, cell, name, level, auc, f1 in rows:
        writer.writerow([sweep, cell, name, level, f"{100 * auc:.4f}", f"{100 * f1:.4f}"])
    return buf.getvalue()

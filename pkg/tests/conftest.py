import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from afrclip.backbone import surrogate  # noqa: E402
from afrclip.config import BackboneConfig, RunConfig  # noqa: E402
from afrclip.dataio import make_synthetic_dataset  # noqa: E402

torch.set_num_threads(1)


def tiny_config(dtype="float32", **overrides) -> RunConfig:
    """D = 8, 4 x 4 patch grid, K = 2, m = 3."""
    cfg = RunConfig(backbone=BackboneConfig.surrogate(
        image_size=32, patch_size=8, layers=8, width=16, heads=2, text_width=16, text_layers=1,
        text_heads=2, embed_dim=16, shared_dim=8, cnn_dim=8, dtype=dtype,
    ))
    cfg.sp.k = 2
    cfg.mpfa.m = 3
    return cfg.replace(**overrides) if overrides else cfg


@pytest.fixture(scope="session")
def backbone():
    return surrogate()


@pytest.fixture(scope="session")
def synthetic_pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    a = make_synthetic_dataset(root / "a", seed=0, n_classes=2, n_per_class=8, image_size=64,
                               first_class=0, dataset_id="synth-a")
    b = make_synthetic_dataset(root / "b", seed=1, n_classes=2, n_per_class=8, image_size=64,
                               first_class=2, dataset_id="synth-b")
    return a, b


# acceptance reporting: one line per criterion, repeated in the terminal summary
CRITERIA: list[str] = []


def record_criterion(number: int, ok: bool, detail: str, skipped: bool = False) -> None:
    status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
    line = f"criterion {number}: {status}  {detail}"
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)

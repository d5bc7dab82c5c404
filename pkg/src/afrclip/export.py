"""Heat map files: 8-bit grayscale PNG and raw float32 tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from afrclip import checkpoint


def to_uint8(heatmap) -> np.ndarray:
    """Probabilities to 0..255, rounding halves up."""
    p = np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0)
    return np.floor(p * 255.0 + 0.5).astype(np.uint8)


def write_heatmap_png(heatmap, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings keep the bytes reproducible
    Image.fromarray(to_uint8(heatmap), "L").save(path, format="PNG", optimize=False, compress_level=6)
    return path


def write_heatmap_raw(heatmap, directory: str | Path) -> Path:
    """Store the map as one float32 tensor named ``heatmap`` in the checkpoint layout."""
    return checkpoint.save_tensors(directory, {"heatmap": np.asarray(heatmap)}, dtype="float32")


def write_score(score: float, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"{score:.6f}\n")
    return path

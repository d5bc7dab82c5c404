"""Tensor checkpoint directories: ``manifest.txt`` plus one ``tensors.bin`` blob.

Manifest lines are ``name<TAB>shape<TAB>dtype<TAB>offset<TAB>nbytes`` with the
shape written as comma-separated ints (empty for scalars). Data is stored
little-endian, tensors sorted by name so identical contents give identical
bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MANIFEST = "manifest.txt"
BLOB = "tensors.bin"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def _as_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    return np.asarray(t)


def save_tensors(directory: str | Path, tensors: Mapping[str, object], dtype: str = "float32") -> Path:
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    offset = 0
    with open(directory / BLOB, "wb") as blob:
        for name in sorted(tensors):
            if any(c.isspace() for c in name):
                raise CheckpointError(f"tensor name contains whitespace: {name!r}")
            arr = np.asarray(_as_numpy(tensors[name]), dtype=_DTYPES[dtype], order="C")  # keeps 0-d shapes
            data = arr.tobytes()
            blob.write(data)
            shape = ",".join(str(s) for s in arr.shape)
            lines.append(f"{name}\t{shape}\t{dtype}\t{offset}\t{len(data)}")
            offset += len(data)
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    return directory


def read_manifest(directory: str | Path) -> dict[str, tuple[tuple[int, ...], str, int, int]]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no manifest at {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise CheckpointError(f"{path}:{lineno}: malformed manifest line")
        name, shape, dtype, offset, nbytes = parts
        if dtype not in _DTYPES:
            raise CheckpointError(f"{path}:{lineno}: unsupported dtype {dtype!r}")
        dims = tuple(int(s) for s in shape.split(",") if s)
        entries[name] = (dims, dtype, int(offset), int(nbytes))
    return entries


def load_tensors(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    entries = read_manifest(directory)
    raw = (directory / BLOB).read_bytes()
    out = {}
    for name, (dims, dtype, offset, nbytes) in entries.items():
        if offset + nbytes > len(raw):
            raise CheckpointError(f"tensor {name} runs past the end of {BLOB}")
        le = np.dtype(_DTYPES[dtype])
        arr = np.frombuffer(raw, dtype=le, count=nbytes // le.itemsize, offset=offset)
        out[name] = arr.reshape(dims).astype(dtype)
    return out


def assign_state(module: torch.nn.Module, tensors: Mapping[str, np.ndarray], prefix: str = "",
                 strict: bool = True) -> None:
    """Copy ``tensors`` into ``module``'s parameters and buffers.

    Shape mismatches are collected and reported together.
    """
    state = module.state_dict()
    wanted = {prefix + k: k for k in state}
    problems = []
    missing = [k for k in wanted if k not in tensors]
    if strict and missing:
        problems.extend(f"missing {k} {tuple(state[wanted[k]].shape)}" for k in missing)
    for full, local in wanted.items():
        if full not in tensors:
            continue
        src = tensors[full]
        if tuple(src.shape) != tuple(state[local].shape):
            problems.append(f"{full}: checkpoint {tuple(src.shape)} vs model {tuple(state[local].shape)}")
    if problems:
        raise CheckpointError("checkpoint does not match model:\n  " + "\n  ".join(problems))
    with torch.no_grad():
        for full, local in wanted.items():
            if full in tensors:
                state[local].copy_(torch.from_numpy(np.array(tensors[full])))

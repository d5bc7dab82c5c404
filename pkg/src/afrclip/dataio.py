"""MVTec-style dataset trees, synthetic desk-scale datasets and the cross-dataset protocol.

Tree layout (one directory per class)::

    <root>/<class>/<split>/good/*.png
    <root>/<class>/<split>/<defect_type>/*.png
    <root>/<class>/ground_truth/<defect_type>/<stem>_mask.png

Manifests are written as JSON lines: a header record followed by one record
per sample.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
MASK_THRESHOLD = 127.5


class DatasetError(ValueError):
    pass


class ProtocolViolation(ValueError):
    """Training and test data come from the same dataset."""


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    class_name: str
    split: str
    image: str  # relative to the manifest root
    mask: str | None
    label: int
    defect: str = "good"


@dataclass
class DatasetManifest:
    dataset_id: str
    root: str
    records: list[SampleRecord] = field(default_factory=list)

    @property
    def classes(self) -> list[str]:
        return sorted({r.class_name for r in self.records})

    @property
    def has_masks(self) -> bool:
        return any(r.mask is not None for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, classes=None, records=None) -> "DatasetManifest":
        recs = self.records if records is None else records
        if classes is not None:
            keep = set(classes)
            recs = [r for r in recs if r.class_name in keep]
        return DatasetManifest(self.dataset_id, self.root, list(recs))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        lines = [json.dumps({"dataset_id": self.dataset_id, "root": self.root}, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        path.write_text("\n".join(lines) + "\n")
        return path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    if not rows or "dataset_id" not in rows[0]:
        raise DatasetError(f"{path}: missing manifest header")
    head = rows[0]
    root = head["root"]
    if not Path(root).is_absolute():
        root = str((path.parent / root).resolve())
    manifest = DatasetManifest(head["dataset_id"], root, [SampleRecord(**r) for r in rows[1:]])
    ids = [r.sample_id for r in manifest.records]
    if len(ids) != len(set(ids)):
        raise DatasetError(f"{path}: duplicate sample ids")
    return manifest


def _images_in(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(root: str | Path, dataset_id: str | None = None, split: str = "test") -> DatasetManifest:
    """Index an MVTec-style tree. ``good`` folders are normal, all others defective.

    A class without a ``ground_truth`` directory is indexed without masks
    (image-level labels only); inside an annotated class every defect image
    needs its mask.

    A ``manifest.jsonl`` path is read directly instead.
    """
    root = Path(root)
    if root.is_file():
        return read_manifest(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    dataset_id = dataset_id or root.name
    records = []
    classes = sorted(p for p in root.iterdir() if p.is_dir() and (p / split).is_dir())
    if not classes:
        raise DatasetError(f"{root}: no <class>/{split}/ directories found")
    for cdir in classes:
        annotated = (cdir / "ground_truth").is_dir()
        if not annotated:
            log.warning("%s has no ground_truth/ directory; its defect images carry labels only", cdir)
        for ddir in sorted(p for p in (cdir / split).iterdir() if p.is_dir()):
            defect = ddir.name
            for img in _images_in(ddir):
                rel = img.relative_to(root).as_posix()
                mask = None
                if defect != "good" and annotated:
                    mpath = cdir / "ground_truth" / defect / f"{img.stem}_mask.png"
                    if not mpath.is_file():
                        raise DatasetError(f"defect image {img} has no mask at {mpath}")
                    mask = mpath.relative_to(root).as_posix()
                records.append(SampleRecord(
                    sample_id=f"{cdir.name}/{split}/{defect}/{img.stem}",
                    class_name=cdir.name, split=split, image=rel, mask=mask,
                    label=int(defect != "good"), defect=defect,
                ))
    return DatasetManifest(dataset_id, str(root.resolve()), records)


@dataclass
class LabeledSample:
    image: np.ndarray  # [H, W, 3] float32 in [0, 1]
    mask: np.ndarray  # [H, W] uint8 in {0, 1}
    label: int
    class_name: str
    dataset_id: str
    sample_id: str


def read_image(path: str | Path, size: int | None = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def read_mask(path: str | Path, size: int | None = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.NEAREST)
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read mask {path}: {exc}") from exc
    if not np.isin(arr, (0, 255)).all():
        log.warning("mask %s is not binary; thresholding at %.1f", path, MASK_THRESHOLD)
    return (arr > MASK_THRESHOLD).astype(np.uint8)


def load_sample(manifest: DatasetManifest, record: SampleRecord, size: int | None = None) -> LabeledSample:
    root = Path(manifest.root)
    image = read_image(root / record.image, size)
    if record.mask is not None:
        mask = read_mask(root / record.mask, size)
        if mask.shape != image.shape[:2]:
            raise DatasetError(f"mask {record.mask} is {mask.shape}, image is {image.shape[:2]}")
    else:
        mask = np.zeros(image.shape[:2], dtype=np.uint8)
    return LabeledSample(image, mask, record.label, record.class_name, manifest.dataset_id, record.sample_id)


# synthetic data -----------------------------------------------------------

TEXTURE_NAMES = ("tile", "fabric", "leather", "wood", "marble", "mesh", "panel", "carpet")


def synthetic_class_name(index: int) -> str:
    base = TEXTURE_NAMES[index % len(TEXTURE_NAMES)]
    return base if index < len(TEXTURE_NAMES) else f"{base}{index // len(TEXTURE_NAMES)}"


def _texture(rng: np.random.Generator, params: dict, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    # per-image jitter around the class parameters
    theta = params["theta"] + rng.normal(0.0, 0.15)
    freq = params["freq"] * rng.uniform(0.85, 1.15)
    base = params["base"] + rng.uniform(-0.05, 0.05, size=3)
    u = np.cos(theta) * xx + np.sin(theta) * yy
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * u + phase)
    img = base[None, None, :] + params["amp"] * (wave[..., None] - 0.5) * params["tint"][None, None, :]
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return img


def _defect(rng: np.random.Generator, img: np.ndarray) -> tuple[np.ndarray, np.ndarray, str]:
    size = img.shape[0]
    mask = np.zeros((size, size), dtype=bool)
    kind = ("patch", "scratch", "blob")[rng.integers(3)]
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "patch":
        h, w = rng.integers(size // 6, size // 3, size=2)
        y0, x0 = rng.integers(0, size - h), rng.integers(0, size - w)
        mask[y0:y0 + h, x0:x0 + w] = True
    elif kind == "scratch":
        length = rng.uniform(size / 3, size / 1.6)
        ang = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(size * 0.25, size * 0.75, size=2)
        dy, dx = np.sin(ang), np.cos(ang)
        t = (yy - cy) * dy + (xx - cx) * dx
        dist = np.abs((yy - cy) * dx - (xx - cx) * dy)
        mask = (np.abs(t) <= length / 2) & (dist <= max(size / 32, 1.5))
    else:
        ry, rx = rng.uniform(size / 12, size / 6, size=2)
        cy, cx = rng.uniform(size * 0.2, size * 0.8, size=2)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    # defects are dark and grainy regardless of the class texture
    colour = rng.uniform(0.0, 0.1, size=3)
    noise = rng.normal(0.0, 0.05, size=img.shape)
    out = img.copy()
    out[mask] = colour + noise[mask]
    return out, mask, kind


def make_synthetic_dataset(root: str | Path, seed: int = 0, n_classes: int = 4, n_per_class: int = 32,
                           image_size: int = 64, first_class: int = 0,
                           dataset_id: str | None = None) -> DatasetManifest:
    """Write a procedurally generated dataset tree and its manifest.

    Every class is a striped texture; odd-numbered samples get one dark,
    grainy defect (rectangle, scratch or ellipse). Masks are exactly the modified
    pixels. Output depends only on the arguments.
    """
    if min(n_classes, n_per_class, image_size) < 1:
        raise ValueError("sizes must be >= 1")
    root = Path(root)
    dataset_id = dataset_id or f"synthetic-{seed}-{first_class}"
    for ci in range(first_class, first_class + n_classes):
        name = synthetic_class_name(ci)
        crng = np.random.default_rng([1234, ci])
        params = {
            "theta": crng.uniform(0, np.pi),
            "freq": crng.uniform(2.0, 6.0),
            "base": crng.uniform(0.4, 0.75, size=3),
            "tint": crng.uniform(0.5, 1.0, size=3),
            "amp": crng.uniform(0.1, 0.25),
        }
        rng = np.random.default_rng([seed, ci])
        for j in range(n_per_class):
            img = _texture(rng, params, image_size)
            if j % 2:
                img, mask, kind = _defect(rng, img)
            else:
                mask, kind = None, "good"
            img8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
            out = root / name / "test" / kind / f"{j:03d}.png"
            out.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(img8, "RGB").save(out)
            if mask is not None:
                mpath = root / name / "ground_truth" / kind / f"{j:03d}_mask.png"
                mpath.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(mask.astype(np.uint8) * 255, "L").save(mpath)
    manifest = load_dataset(root, dataset_id)
    manifest.save(root / "manifest.jsonl")
    return manifest


def class_split(manifest: DatasetManifest, train_classes) -> tuple[DatasetManifest, DatasetManifest]:
    """Split by class into an auxiliary part and a disjoint held-out part with distinct ids."""
    keep = set(train_classes)
    unknown = keep - set(manifest.classes)
    if unknown:
        raise DatasetError(f"classes not in {manifest.dataset_id}: {sorted(unknown)}")
    aux = [r for r in manifest.records if r.class_name in keep]
    held = [r for r in manifest.records if r.class_name not in keep]
    if not aux or not held:
        raise DatasetError("class split leaves one side empty")
    return (DatasetManifest(f"{manifest.dataset_id}-aux", manifest.root, aux),
            DatasetManifest(f"{manifest.dataset_id}-heldout", manifest.root, held))


# protocol -----------------------------------------------------------------

def _canon(dataset_id: str) -> str:
    return "".join(ch for ch in dataset_id.lower() if ch.isalnum())


def default_train_dataset(test_id: str) -> str:
    """Auxiliary dataset used for a given test set: MVTec AD for VisA, VisA otherwise."""
    return "mvtec" if _canon(test_id) == "visa" else "visa"


def check_protocol(train_id: str, test_id: str) -> None:
    """Raise :class:`ProtocolViolation` when training and test data coincide."""
    if not train_id or not test_id:
        raise ValueError("dataset ids must be non-empty")
    if _canon(train_id) == _canon(test_id):
        raise ProtocolViolation(f"training and test dataset are both {test_id!r}")

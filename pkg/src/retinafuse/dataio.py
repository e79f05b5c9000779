"""Image decoding, color conversion, resizing, manifests and splits.

Images are plain numpy arrays of float64 in [0, 1]: gray images are
``(H, W)``, RGB images ``(H, W, 3)``. Masks are ``(H, W)`` uint8 in {0, 1}.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError, RetinaFuseError
from .seeding import make_rng

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
SPLIT_SCHEMA_VERSION = 1
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_PNM_MAGICS = (b"P5", b"P6")


def _sniff(path: Path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(_PNG_MAGIC):
        return "png"
    if head[:2] in _PNM_MAGICS:
        return "pnm"
    raise ImageError(path, "unsupported format (expected PNG or binary PGM/PPM)")


def load_image(path) -> np.ndarray:
    """Decode a PNG or binary PGM/PPM file into an ``(H, W, 3)`` RGB array.

    Gray sources are promoted to three equal channels. 8-bit data is scaled
    by 1/255 and 16-bit data by 1/65535.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(path, "no such file")
    try:
        _sniff(path)
    except OSError as exc:
        raise ImageError(path, f"unreadable file ({exc})") from exc
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode in ("L", "RGB"):
                arr = np.asarray(im, dtype=np.float64) / 255.0
            elif mode == "1":
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as exc:
        raise ImageError(path, f"corrupt or truncated file ({exc})") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return np.clip(arr, 0.0, 1.0)


def load_gray(path) -> np.ndarray:
    return to_gray(load_image(path))


def save_image(img: np.ndarray, path) -> None:
    """Write a gray or RGB image in [0, 1] as 8-bit PNG, PGM or PPM.

    The format follows the file suffix. Values are quantized with
    ``round(v * 255)``.
    """
    path = Path(path)
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    q = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm"):
        if q.ndim == 2 and suffix == ".ppm":
            q = np.repeat(q[:, :, None], 3, axis=2)
        if q.ndim == 3 and suffix == ".pgm":
            raise ValueError("PGM output needs a gray image")
        magic = b"P5" if q.ndim == 2 else b"P6"
        h, w = q.shape[:2]
        with open(path, "wb") as fh:
            fh.write(magic + f"\n{w} {h}\n255\n".encode())
            fh.write(q.tobytes())
        return
    if suffix != ".png":
        raise ValueError(f"unsupported output format: {path}")
    Image.fromarray(q).save(path, format="PNG", compress_level=6)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a {0,1} mask as a black/white 8-bit PNG."""
    q = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(q).save(Path(path), format="PNG", compress_level=6)


def load_mask(path) -> np.ndarray:
    return (to_gray(load_image(path)) >= 0.5).astype(np.uint8)


def to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance of an RGB image; gray input is returned as a copy."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img.copy()
    wr, _, wb = LUMA_WEIGHTS
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    # same weights, written relative to G so equal channels map exactly to themselves
    out = g + wr * (r - g) + wb * (b - g)
    return np.clip(out, 0.0, 1.0)


def _axis_samples(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment and edge clamping."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (w, h) == (out_w, out_h):
        return img.copy()
    y0, y1, fy = _axis_samples(h, out_h)
    x0, x1, fx = _axis_samples(w, out_w)
    rows = img[y0] * (1.0 - fy)[:, None] + img[y1] * fy[:, None]
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class Manifest:
    """Labelled image list. Relative paths resolve against ``root``."""

    entries: tuple  # of (path, label)
    root: Path = Path(".")

    def __post_init__(self):
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise RetinaFuseError("manifest contains duplicate paths")

    @property
    def classes(self) -> list:
        return sorted({label for _, label in self.entries})

    @property
    def class_index(self) -> dict:
        return {label: i for i, label in enumerate(self.classes)}

    def label_ids(self) -> np.ndarray:
        idx = self.class_index
        return np.array([idx[label] for _, label in self.entries], dtype=np.intp)

    def resolve(self, i: int) -> Path:
        p = Path(self.entries[i][0])
        return p if p.is_absolute() else self.root / p

    def __len__(self):
        return len(self.entries)


def save_manifest(m: Manifest, path) -> None:
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "entries": [{"path": str(p), "label": label} for p, label in m.entries],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise RetinaFuseError(f"{path}: manifest not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RetinaFuseError(f"{path}: malformed manifest ({exc})") from exc
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise RetinaFuseError(
            f"{path}: unsupported manifest schema {doc.get('schema_version')!r}"
        )
    entries = tuple((str(e["path"]), str(e["label"])) for e in doc["entries"])
    return Manifest(entries, root=path.parent)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": SPLIT_SCHEMA_VERSION,
                "seed": self.seed,
                "train": self.train,
                "validation": self.validation,
                "test": self.test,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        doc = json.loads(text)
        if doc.get("schema_version") != SPLIT_SCHEMA_VERSION:
            raise RetinaFuseError("unsupported split schema")
        return cls(doc["train"], doc["validation"], doc["test"], doc["seed"])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_manifest(m: Manifest, seed: int, ratios=(0.7, 0.1, 0.2)) -> DatasetSplit:
    """Stratified, seeded train/validation/test split.

    Within each class the entries are shuffled and the validation and test
    counts are rounded from the ratios; train takes the remainder. Classes
    with fewer than 3 entries go entirely to train.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    labels = [label for _, label in m.entries]
    train, val, test, warnings = [], [], [], []
    for label in m.classes:
        members = [i for i, lab in enumerate(labels) if lab == label]
        if len(members) < 3:
            msg = f"class {label!r} has {len(members)} entries; placed in train only"
            log.warning(msg)
            warnings.append(msg)
            train.extend(members)
            continue
        order = make_rng(seed, "split", label).permutation(len(members))
        shuffled = [members[k] for k in order]
        n_val = _round_half_up(len(members) * ratios[1])
        n_test = _round_half_up(len(members) * ratios[2])
        n_train = len(members) - n_val - n_test
        train.extend(shuffled[:n_train])
        val.extend(shuffled[n_train : n_train + n_val])
        test.extend(shuffled[n_train + n_val :])
    return DatasetSplit(sorted(train), sorted(val), sorted(test), int(seed), warnings)


def list_image_files(directory) -> list:
    exts = {".png", ".pgm", ".ppm"}
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in exts)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)

"""Synthetic fundus images with exact vessel masks, and a labelled
multi-class lesion dataset built on top of them.

Every sample draws from its own Philox stream keyed by (seed, labels), so
outputs do not depend on generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataio import Manifest, save_image, save_manifest, save_mask
from .seeding import derive_seed, make_rng

OPTIC_DISC = (0.72, 0.5)
# preferred lesion regions, as (x, y) fractions of the image size
REGIONS = ((0.35, 0.28), (0.62, 0.24), (0.35, 0.72), (0.62, 0.76), (0.40, 0.50))


@dataclass(frozen=True)
class VesselParams:
    seed: int = 0
    size: int = 64
    branches: int = 4
    step: float = 0.03  # walk step as a fraction of size
    turn_sd: float = 0.22  # radians per step
    child_prob: float = 0.06
    radius: tuple = (1.0, 1.8)  # (tip, root) radius in pixels
    contrast: float = 0.28
    texture: float = 0.05
    noise: float = 0.015

    def __post_init__(self):
        if self.size < 32:
            raise ValueError("size must be at least 32")
        if min(self.radius) < 1.0:
            raise ValueError("vessel radius must be at least 1 pixel")
        if self.branches < 0:
            raise ValueError("branch count must be nonnegative")


def _walk_segments(p: VesselParams, rng: np.random.Generator):
    size = p.size
    cx = cy = size / 2.0
    disk_r = 0.46 * size
    ox = OPTIC_DISC[0] * size + rng.normal(0, 0.01 * size)
    oy = OPTIC_DISC[1] * size + rng.normal(0, 0.01 * size)
    r_tip, r_root = min(p.radius), max(p.radius)
    step = p.step * size
    segs = []
    base = rng.uniform(0, 2 * math.pi)
    # (x, y, heading, radius, may_branch)
    stack = [
        (ox, oy, base + 2 * math.pi * k / max(p.branches, 1) + rng.normal(0, 0.3), r_root, True)
        for k in range(p.branches)
    ]
    while stack:
        x, y, heading, r, may_branch = stack.pop(0)
        drift = rng.normal(0, 0.04)
        for _ in range(80):
            heading += drift + rng.normal(0, p.turn_sd)
            nx, ny = x + step * math.cos(heading), y + step * math.sin(heading)
            segs.append((x, y, nx, ny, r))
            x, y = nx, ny
            if math.hypot(x - cx, y - cy) > disk_r:
                break
            r = max(r_tip, r * 0.97)
            if may_branch and rng.random() < p.child_prob:
                side = 1.0 if rng.random() < 0.5 else -1.0
                stack.append(
                    (x, y, heading + side * rng.uniform(0.5, 1.1), max(r_tip, 0.75 * r), False)
                )
    return np.array(segs, dtype=np.float64).reshape(-1, 5)


def _vessel_depth(segs: np.ndarray, size: int) -> np.ndarray:
    """1 - min(d / r) over segments, clipped at 0; positive inside vessels.

    Each segment is only evaluated on the pixels of its bounding box grown
    by its radius; every pixel outside that box has d / r >= 1 and would
    clip to 0 anyway.
    """
    best = np.full((size, size), np.inf)
    for ax, ay, bx, by, r in segs:
        x0 = max(int(math.floor(min(ax, bx) - r)) - 1, 0)
        x1 = min(int(math.ceil(max(ax, bx) + r)) + 1, size)
        y0 = max(int(math.floor(min(ay, by) - r)) - 1, 0)
        y1 = min(int(math.ceil(max(ay, by) + r)) + 1, size)
        if x0 >= x1 or y0 >= y1:
            continue
        px = np.arange(x0, x1)[None, :] + 0.5
        py = np.arange(y0, y1)[:, None] + 0.5
        dx, dy = bx - ax, by - ay
        L2 = max(dx * dx + dy * dy, 1e-12)
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
        d = np.hypot(px - (ax + t * dx), py - (ay + t * dy)) / r
        np.minimum(best[y0:y1, x0:x1], d, out=best[y0:y1, x0:x1])
    return np.clip(1.0 - best, 0.0, None)


def _disk(size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return np.hypot(xx - size / 2.0, yy - size / 2.0) <= 0.46 * size


def _background(p: VesselParams, rng: np.random.Generator) -> np.ndarray:
    size = p.size
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size
    img = 0.45 + 0.12 * xx
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        img = img + p.texture / 3.0 * np.sin(2 * math.pi * (fx * xx + fy * yy) + phase)
    ox, oy = OPTIC_DISC
    img = img + 0.3 * np.exp(-((xx - ox) ** 2 + (yy - oy) ** 2) / (2 * 0.05**2))
    return img


def gen_vessel(params: VesselParams | None = None):
    """Fundus-like gray image and its exact vessel mask."""
    p = params or VesselParams()
    rng = make_rng(p.seed, "vessel")
    disk = _disk(p.size)
    img = _background(p, rng)
    segs = _walk_segments(p, rng)
    if len(segs):
        depth = _vessel_depth(segs, p.size)
    else:
        depth = np.zeros((p.size, p.size))
    mask = (depth > 0) & disk
    img = img - np.where(mask, p.contrast * (0.5 + 0.5 * depth), 0.0)
    img = img + rng.normal(0.0, p.noise, img.shape)
    img = np.where(disk, img, 0.03)
    return np.clip(img, 0.0, 1.0), mask.astype(np.uint8)


@dataclass(frozen=True)
class LesionSignature:
    region: int
    dense_vessels: bool
    bright: bool
    magnitude: float
    blob_count: tuple = (2, 4)
    blob_radius: tuple = (6.0, 11.0)


def class_signature(c: int) -> LesionSignature:
    """Lesion and vessel traits of class ``c``; injective in ``c``.

    Digits of ``c`` select the lesion region (c % 5), the vessel density
    ((c // 5) % 2), the lesion polarity ((c // 10) % 2) and the intensity
    level (c // 20).
    """
    return LesionSignature(
        region=c % 5,
        dense_vessels=bool((c // 5) % 2),
        bright=(c // 10) % 2 == 0,
        magnitude=0.22 + 0.06 * (c // 20),
    )


@dataclass(frozen=True)
class DiseaseParams:
    seed: int = 0
    n_classes: int = 10
    per_class: int = 200
    size: int = 128

    def __post_init__(self):
        if self.n_classes < 1 or self.per_class < 1:
            raise ValueError("need at least one class and one sample per class")


def _sample_vessel_params(sig: LesionSignature, size: int, seed: int) -> VesselParams:
    if sig.dense_vessels:
        return VesselParams(seed=seed, size=size, branches=12, radius=(1.6, 3.6), contrast=0.34)
    return VesselParams(seed=seed, size=size, branches=3, radius=(1.0, 1.4), contrast=0.22)


def _add_lesions(img, sig: LesionSignature, rng: np.random.Generator):
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    rx, ry = REGIONS[sig.region]
    sign = 1.0 if sig.bright else -1.0
    out = img.copy()
    for _ in range(int(rng.integers(sig.blob_count[0], sig.blob_count[1] + 1))):
        bx = (rx + rng.normal(0, 0.03)) * size
        by = (ry + rng.normal(0, 0.03)) * size
        r = rng.uniform(*sig.blob_radius) * size / 128.0
        d = np.hypot(xx - bx, yy - by)
        edge = 1.0 / (1.0 + np.exp(np.clip((d - r) / 0.8, -50, 50)))
        out = out + sign * sig.magnitude * rng.uniform(0.8, 1.2) * edge
    return out


def gen_disease_sample(c: int, index: int, params: DiseaseParams):
    """Image of class ``c`` (sample ``index``) plus its vessel mask."""
    sig = class_signature(c)
    rng = make_rng(params.seed, "disease", c, index)
    vseed = int(rng.integers(2**63))
    img, mask = gen_vessel(_sample_vessel_params(sig, params.size, vseed))
    img = _add_lesions(img, sig, rng)
    img = np.where(_disk(params.size), img, 0.03)
    return np.clip(img, 0.0, 1.0), mask


def class_label(c: int) -> str:
    return f"class_{c:02d}"


def gen_disease_dataset(params: DiseaseParams, out_dir) -> Manifest:
    """Write a balanced labelled PNG dataset and its ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for c in range(params.n_classes):
        label = class_label(c)
        (out_dir / "images" / label).mkdir(parents=True, exist_ok=True)
        for i in range(params.per_class):
            img, _ = gen_disease_sample(c, i, params)
            rel = Path("images") / label / f"{label}_{i:04d}.png"
            save_image(img, out_dir / rel)
            entries.append((rel.as_posix(), label))
    manifest = Manifest(tuple(entries), root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def vessel_patches(seed: int, count: int, size: int = 64, **overrides):
    """``count`` independent (image, mask) vessel samples."""
    out = []
    for i in range(count):
        p = replace(VesselParams(size=size, **overrides), seed=derive_seed(seed, "patch", i))
        out.append(gen_vessel(p))
    return out


def write_vessel_set(seed: int, count: int, out_dir, size: int = 64) -> list:
    """Write ``images/NNNN.png`` and ``masks/NNNN.png`` pairs."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    names = []
    for i, (img, mask) in enumerate(vessel_patches(seed, count, size)):
        name = f"{i:04d}.png"
        save_image(img, out_dir / "images" / name)
        save_mask(mask, out_dir / "masks" / name)
        names.append(name)
    return names

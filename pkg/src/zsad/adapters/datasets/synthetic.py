from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image

from zsad.core.dto import DatasetManifest, ManifestEntry
from zsad.core.errors import ParameterError
from zsad.adapters.datasets.manifest import save_manifest

MANIFEST_FILE = "manifest.json"

# background intensities stay below the normalization mean, defects above it
_BACKGROUND = (0.25, 0.42)
_STRIPE_AMPLITUDE = 0.03
_NOISE_STD = 0.02
_DEFECT = (0.95, 1.0)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(*_BACKGROUND)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    freq = rng.uniform(2.0, 6.0) * 2.0 * np.pi / size
    angle = rng.uniform(0.0, np.pi)
    stripes = _STRIPE_AMPLITUDE * np.sin(freq * (xx * np.cos(angle) + yy * np.sin(angle)))
    img = base + stripes + rng.normal(0.0, _NOISE_STD, size=(size, size))
    return np.clip(img, 0.0, 0.49)


def _rectangles(rng: np.random.Generator, size: int) -> List[Tuple[int, int, int, int]]:
    lo, hi = max(2, size // 8), max(3, size // 4)
    rects = []
    for _ in range(int(rng.integers(1, 4))):
        h = int(rng.integers(lo, hi + 1))
        w = int(rng.integers(lo, hi + 1))
        y0 = int(rng.integers(0, size - h + 1))
        x0 = int(rng.integers(0, size - w + 1))
        rects.append((y0, x0, h, w))
    return rects


def _save_gray(arr: np.ndarray, path: Path, mode: str = "RGB") -> None:
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    img = Image.fromarray(u8)
    if mode == "RGB":
        img = img.convert("RGB")
    img.save(path, format="PNG")


def generate_synthetic_dataset(
    out_dir: str | Path,
    n_normal: int,
    n_anomalous: int,
    image_size: int = 128,
    seed: int = 111,
    name: str = "synthetic",
    category: str = "synthetic",
) -> DatasetManifest:
    """
    Writes textured grey images, anomalous ones carrying 1-3 bright axis-aligned
    rectangles with exact masks, plus manifest.json. Deterministic under `seed`.
    """
    if n_normal < 1 or n_anomalous < 1 or image_size < 8:
        raise ParameterError("n_normal and n_anomalous must be >= 1 and image_size >= 8")

    root = Path(out_dir).resolve()
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    entries: List[ManifestEntry] = []
    labels = [0] * n_normal + [1] * n_anomalous
    for idx, label in enumerate(labels):
        sid = f"{category}_{idx:04d}"
        img = _background(rng, image_size)
        mask_path = None
        if label == 1:
            mask = np.zeros((image_size, image_size), dtype=np.float64)
            for y0, x0, h, w in _rectangles(rng, image_size):
                img[y0:y0 + h, x0:x0 + w] = rng.uniform(*_DEFECT)
                mask[y0:y0 + h, x0:x0 + w] = 1.0
            mask_path = root / "masks" / f"{sid}.png"
            _save_gray(mask, mask_path, mode="L")
        image_path = root / "images" / f"{sid}.png"
        _save_gray(img, image_path)
        entries.append(ManifestEntry(id=sid, category=category, image_path=image_path, label=label, mask_path=mask_path))

    manifest = DatasetManifest(
        name=name,
        domain_tag="industrial",
        annotation_level="both",
        categories=(category,),
        samples=tuple(entries),
        root=root,
        notes=f"synthetic: seed={seed} size={image_size} normal={n_normal} anomalous={n_anomalous}",
    )
    save_manifest(manifest, root / MANIFEST_FILE)
    return manifest

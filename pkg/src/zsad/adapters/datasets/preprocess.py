from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image, UnidentifiedImageError

from zsad.core.dto import ManifestEntry, Sample
from zsad.core.errors import DataError
from zsad.core.models import BackboneConfig

_RESAMPLE = {
    "bilinear": Image.Resampling.BILINEAR,
    "nearest": Image.Resampling.NEAREST,
    "bicubic": Image.Resampling.BICUBIC,
}


@dataclass(frozen=True)
class Preprocessor:
    """
    The one transform used for training and evaluation. Its fingerprint travels in
    the checkpoint so evaluation can refuse a mismatched pipeline.
    """

    resolution: int
    mean: Tuple[float, float, float]
    std: Tuple[float, float, float]
    image_interpolation: str = "bilinear"
    mask_interpolation: str = "nearest"
    mask_threshold: float = 0.5

    @classmethod
    def from_backbone(cls, config: BackboneConfig) -> "Preprocessor":
        return cls(
            resolution=config.input_resolution,
            mean=tuple(float(m) for m in config.normalization_mean),
            std=tuple(float(s) for s in config.normalization_std),
        )

    def fingerprint(self) -> str:
        canonical = json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def _open(self, path: Path, mode: str) -> Image.Image:
        try:
            with Image.open(path) as img:
                return img.convert(mode)
        except (UnidentifiedImageError, OSError) as exc:
            raise DataError(f"cannot decode image {path}: {exc}") from exc

    def image(self, path: Path) -> torch.Tensor:
        img = self._open(path, "RGB")
        size = (self.resolution, self.resolution)
        img = img.resize(size, _RESAMPLE[self.image_interpolation])
        return TF.normalize(TF.to_tensor(img), mean=list(self.mean), std=list(self.std))

    def mask(self, path: Path) -> torch.Tensor:
        img = self._open(path, "L")
        size = (self.resolution, self.resolution)
        img = img.resize(size, _RESAMPLE[self.mask_interpolation])
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return torch.from_numpy((arr > self.mask_threshold).astype(np.float32))

    def zero_mask(self) -> torch.Tensor:
        return torch.zeros(self.resolution, self.resolution, dtype=torch.float32)


def load_sample(
    entry: ManifestEntry,
    pre: Union[Preprocessor, BackboneConfig],
    hide_label: bool = False,
) -> Sample:
    """
    Decodes and preprocesses one manifest entry. Normal samples without a mask get an
    all-zero mask; anomalous samples without one keep mask=None.
    hide_label=True drops the image label (label=None) for consumers that must not see it.
    """
    if isinstance(pre, BackboneConfig):
        pre = Preprocessor.from_backbone(pre)
    image = pre.image(entry.image_path)
    if entry.mask_path is not None:
        mask = pre.mask(entry.mask_path)
    elif entry.label == 0:
        mask = pre.zero_mask()
    else:
        mask = None
    return Sample(
        image=image,
        label=None if hide_label else entry.label,
        mask=mask,
        id=entry.id,
        category=entry.category,
    )

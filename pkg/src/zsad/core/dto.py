from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import torch


ANNOTATION_LEVELS = ("image_only", "pixel_only", "both")
DOMAIN_TAGS = ("industrial", "medical")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    category: str
    image_path: Path          # resolved against the manifest location
    label: int
    mask_path: Optional[Path] = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    domain_tag: str
    annotation_level: str
    categories: Tuple[str, ...]
    samples: Tuple[ManifestEntry, ...]
    root: Path
    notes: Optional[str] = None

    @property
    def has_image_labels(self) -> bool:
        return self.annotation_level in ("image_only", "both")

    @property
    def has_pixel_masks(self) -> bool:
        return self.annotation_level in ("pixel_only", "both")

    def for_category(self, category: str) -> Tuple[ManifestEntry, ...]:
        return tuple(s for s in self.samples if s.category == category)


@dataclass(frozen=True)
class Sample:
    image: torch.Tensor              # (C, H, W), normalized
    label: Optional[int]             # None when the split carries no image labels
    mask: Optional[torch.Tensor]     # (H, W) float {0, 1}
    id: str
    category: str = field(default="")

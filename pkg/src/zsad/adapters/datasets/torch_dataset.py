from __future__ import annotations

from typing import Optional, Sequence

from torch.utils.data import Dataset

from zsad.core.dto import DatasetManifest, ManifestEntry, Sample
from zsad.adapters.datasets.preprocess import Preprocessor, load_sample


class ManifestDataset(Dataset):
    """Lazily decoded samples of a manifest, optionally limited to some categories."""

    def __init__(
        self,
        manifest: DatasetManifest,
        preprocessor: Preprocessor,
        categories: Optional[Sequence[str]] = None,
        hide_labels: bool = False,
    ) -> None:
        wanted = set(categories) if categories is not None else None
        self.manifest = manifest
        self.preprocessor = preprocessor
        self.hide_labels = hide_labels
        self.entries: Sequence[ManifestEntry] = tuple(
            e for e in manifest.samples if wanted is None or e.category in wanted
        )

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> Sample:
        return load_sample(self.entries[index], self.preprocessor, hide_label=self.hide_labels)

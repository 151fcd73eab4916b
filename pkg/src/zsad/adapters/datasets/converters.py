from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional

from zsad.core.dto import DOMAIN_TAGS, DatasetManifest, ManifestEntry
from zsad.core.errors import AssetError, ParameterError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
NORMAL_DIR = "good"


def _images(folder: Path) -> List[Path]:
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _check_domain(domain_tag: str) -> None:
    if domain_tag not in DOMAIN_TAGS:
        raise ParameterError(f"domain_tag {domain_tag!r} not in {list(DOMAIN_TAGS)}")


def _mask_for(folder: Path, stem: str) -> Optional[Path]:
    for candidate_stem in (f"{stem}_mask", stem):
        for suffix in IMAGE_SUFFIXES:
            p = folder / f"{candidate_stem}{suffix}"
            if p.is_file():
                return p
    return None


def convert_mvtec(
    dataset_root: str | Path,
    name: str,
    domain_tag: str = "industrial",
    include_train_good: bool = False,
) -> DatasetManifest:
    """
    MVTec-style tree: <category>/test/<defect>/*, masks under
    <category>/ground_truth/<defect>/<stem>_mask.*, normals in test/good.
    """
    _check_domain(domain_tag)
    root = Path(dataset_root).resolve()
    if not root.is_dir():
        raise AssetError(f"dataset root not found: {root}")

    categories = sorted(d.name for d in root.iterdir() if d.is_dir() and (d / "test").is_dir())
    if not categories:
        raise AssetError(f"no <category>/test directories under {root}")

    entries: List[ManifestEntry] = []
    unmasked = 0
    for category in categories:
        cat_dir = root / category
        splits: Dict[str, Path] = {"test": cat_dir / "test"}
        if include_train_good:
            splits["train"] = cat_dir / "train"
        for split, split_dir in splits.items():
            defect_dirs = sorted(d for d in split_dir.iterdir() if d.is_dir()) if split_dir.is_dir() else []
            for defect_dir in defect_dirs:
                defect = defect_dir.name
                if split == "train" and defect != NORMAL_DIR:
                    continue
                label = 0 if defect == NORMAL_DIR else 1
                for img in _images(defect_dir):
                    mask = None
                    if label == 1:
                        mask = _mask_for(cat_dir / "ground_truth" / defect, img.stem)
                        if mask is None:
                            unmasked += 1
                    entries.append(
                        ManifestEntry(
                            id=f"{category}/{split}/{defect}/{img.stem}",
                            category=category,
                            image_path=img,
                            label=label,
                            mask_path=mask,
                        )
                    )

    notes = (
        "mvtec layout: test split"
        + (" plus train/good" if include_train_good else "")
        + "; label 1 for every non-'good' defect folder; masks from ground_truth/<defect>/<stem>_mask"
        + (f"; {unmasked} anomalous image(s) without a mask" if unmasked else "")
    )
    return DatasetManifest(
        name=name,
        domain_tag=domain_tag,
        annotation_level="both",
        categories=tuple(categories),
        samples=tuple(entries),
        root=root,
        notes=notes,
    )


def convert_flat(
    dataset_root: str | Path,
    name: str,
    domain_tag: str = "industrial",
    category: Optional[str] = None,
    annotation_level: str = "both",
) -> DatasetManifest:
    """
    Flat tree: images/* with optional masks/<stem>[_mask].*; an image with a mask is
    anomalous, one without is normal.
    """
    _check_domain(domain_tag)
    root = Path(dataset_root).resolve()
    images = _images(root / "images")
    if not images:
        raise AssetError(f"no images under {root / 'images'}")
    category = category or root.name

    entries = []
    for img in images:
        mask = _mask_for(root / "masks", img.stem)
        entries.append(
            ManifestEntry(
                id=img.stem,
                category=category,
                image_path=img,
                label=0 if mask is None else 1,
                mask_path=mask,
            )
        )
    return DatasetManifest(
        name=name,
        domain_tag=domain_tag,
        annotation_level=annotation_level,
        categories=(category,),
        samples=tuple(entries),
        root=root,
        notes="flat layout: images/ + masks/ with matching stems; label 1 iff a mask file exists",
    )

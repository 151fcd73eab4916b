from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from zsad.config import settings
from zsad.core.dto import ANNOTATION_LEVELS, DOMAIN_TAGS, DatasetManifest, ManifestEntry
from zsad.core.errors import AssetError, ValidationError

_REQUIRED_KEYS = ("manifest_version", "name", "domain_tag", "annotation_level", "categories", "samples")


def manifest_from_dict(data: Dict[str, Any], root: Path, check_files: bool = True) -> DatasetManifest:
    """
    Validates a parsed manifest. Every problem is collected and raised together;
    paths resolve against `root`.
    """
    issues: List[str] = []
    for key in _REQUIRED_KEYS:
        if key not in data:
            issues.append(f"missing key {key!r}")
    if issues:
        raise ValidationError(issues, subject="manifest")

    if data["manifest_version"] != settings.MANIFEST_VERSION:
        issues.append(f"manifest_version {data['manifest_version']!r} is not supported (expected {settings.MANIFEST_VERSION})")
    domain = data["domain_tag"]
    if domain not in DOMAIN_TAGS:
        issues.append(f"domain_tag {domain!r} not in {list(DOMAIN_TAGS)}")
    level = data["annotation_level"]
    if level not in ANNOTATION_LEVELS:
        issues.append(f"annotation_level {level!r} not in {list(ANNOTATION_LEVELS)}")
    categories = data["categories"]
    if not isinstance(categories, list) or not categories:
        issues.append("categories must be a non-empty list")
        categories = []
    needs_masks = level in ("pixel_only", "both")

    entries: List[ManifestEntry] = []
    seen_ids = set()
    raw_samples = data["samples"] if isinstance(data["samples"], list) else []
    if not raw_samples:
        issues.append("samples must be a non-empty list")

    for i, raw in enumerate(raw_samples):
        sid = str(raw.get("id", f"#{i}")) if isinstance(raw, dict) else f"#{i}"
        if not isinstance(raw, dict):
            issues.append(f"sample {sid}: not an object")
            continue
        if "id" not in raw:
            issues.append(f"sample {sid}: missing id")
        elif sid in seen_ids:
            issues.append(f"sample {sid}: duplicate id")
        seen_ids.add(sid)

        category = raw.get("category")
        if category not in categories:
            issues.append(f"sample {sid}: category {category!r} not declared")

        label = raw.get("label")
        if label not in (0, 1) or isinstance(label, bool):
            issues.append(f"sample {sid}: label must be 0 or 1, got {label!r}")

        image_rel = raw.get("image_path")
        image_path: Optional[Path] = None
        if not image_rel:
            issues.append(f"sample {sid}: missing image_path")
        else:
            image_path = (root / image_rel).resolve()
            if check_files and not image_path.is_file():
                issues.append(f"sample {sid}: image not found at {image_path}")

        mask_rel = raw.get("mask_path")
        mask_path: Optional[Path] = None
        if mask_rel:
            mask_path = (root / mask_rel).resolve()
            if check_files and not mask_path.is_file():
                issues.append(f"sample {sid}: mask not found at {mask_path}")
        elif needs_masks and label == 1:
            issues.append(f"sample {sid}: anomalous sample has no mask_path under annotation_level {level!r}")

        if image_path is not None:
            entries.append(
                ManifestEntry(
                    id=sid,
                    category=str(category),
                    image_path=image_path,
                    label=int(label) if label in (0, 1) else 0,
                    mask_path=mask_path,
                )
            )

    if issues:
        raise ValidationError(issues, subject=f"manifest {data.get('name', '?')!r}")

    return DatasetManifest(
        name=str(data["name"]),
        domain_tag=domain,
        annotation_level=level,
        categories=tuple(str(c) for c in categories),
        samples=tuple(entries),
        root=root,
        notes=data.get("notes"),
    )


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    p = Path(path)
    if not p.is_file():
        raise AssetError(f"manifest not found: {p}")
    try:
        with p.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"invalid JSON: {exc}"], subject=f"manifest {p}") from exc
    if not isinstance(data, dict):
        raise ValidationError(["top level must be an object"], subject=f"manifest {p}")
    return manifest_from_dict(data, root=p.parent.resolve(), check_files=check_files)


def manifest_to_dict(manifest: DatasetManifest, base: Optional[Path] = None) -> Dict[str, Any]:
    """Paths are written relative to `base` (default: the manifest root)."""
    base_dir = Path(base or manifest.root).resolve()

    def _rel(path: Optional[Path]) -> Optional[str]:
        if path is None:
            return None
        return Path(os.path.relpath(Path(path).resolve(), base_dir)).as_posix()

    samples = []
    for s in manifest.samples:
        item: Dict[str, Any] = {
            "id": s.id,
            "category": s.category,
            "image_path": _rel(s.image_path),
            "label": s.label,
        }
        if s.mask_path is not None:
            item["mask_path"] = _rel(s.mask_path)
        samples.append(item)

    out: Dict[str, Any] = {
        "manifest_version": settings.MANIFEST_VERSION,
        "name": manifest.name,
        "domain_tag": manifest.domain_tag,
        "annotation_level": manifest.annotation_level,
        "categories": list(manifest.categories),
        "samples": samples,
    }
    if manifest.notes:
        out["notes"] = manifest.notes
    return out


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as f:
        json.dump(manifest_to_dict(manifest, base=p.parent), f, indent=2)
    return p

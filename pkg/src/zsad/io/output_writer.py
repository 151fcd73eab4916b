from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import yaml
from matplotlib import colormaps
from PIL import Image

from zsad.config import settings
from zsad.core.models import AnomalyMap, EvalReport, ImageScore, TrainLogEntry
from zsad.io.schemas import report_to_dict, score_to_dict, train_entry_to_dict


def _dir(out_dir: str | Path) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_report_json(report: EvalReport, out_dir: str | Path, filename: str = settings.REPORT_JSON_FILE) -> str:
    out_path = _dir(out_dir) / filename
    with out_path.open("w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, indent=2, sort_keys=True)
        f.write("\n")
    return str(out_path)


def _pct(x: Optional[float]) -> str:
    return "-" if x is None else f"{100.0 * x:.1f}"


def _triple(values: Optional[Tuple[Optional[float], ...]]) -> str:
    if values is None:
        return "n/a"
    return "(" + ", ".join(_pct(v) for v in values) + ")"


def format_report_table(report: EvalReport) -> str:
    """
    Aligned text table, one row per category plus the mean row:
    image (AUROC, AP, F1-max) and pixel (AUROC, AUPRO, F1-max), in percent.
    """
    header = ("category", "n", "anomalous", "image (AUROC, AP, F1-max)", "pixel (AUROC, AUPRO, F1-max)")
    rows: List[Tuple[str, ...]] = []
    for name, c in report.per_category.items():
        rows.append(
            (
                name,
                str(c.n_samples),
                str(c.n_anomalous),
                _triple(None if c.image is None else (c.image.auroc, c.image.ap, c.image.f1max)),
                _triple(None if c.pixel is None else (c.pixel.auroc, c.pixel.aupro, c.pixel.f1max)),
            )
        )
    mi, mp = report.mean_image, report.mean_pixel
    rows.append(
        (
            "mean",
            str(sum(c.n_samples for c in report.per_category.values())),
            str(sum(c.n_anomalous for c in report.per_category.values())),
            _triple(None if mi is None else (mi.auroc, mi.ap, mi.f1max)),
            _triple(None if mp is None else (mp.auroc, mp.aupro, mp.f1max)),
        )
    )

    widths = [max(len(r[i]) for r in (header, *rows)) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    if report.flags:
        lines.append("")
        lines.append("flags:")
        lines.extend(f"  - {f}" for f in report.flags)
    return "\n".join(lines) + "\n"


def write_report_table(report: EvalReport, out_dir: str | Path, filename: str = settings.REPORT_TABLE_FILE) -> str:
    out_path = _dir(out_dir) / filename
    out_path.write_text(format_report_table(report), encoding="utf-8")
    return str(out_path)


def write_train_log(entries: Iterable[TrainLogEntry], out_dir: str | Path, filename: str = settings.TRAIN_LOG_FILE) -> str:
    out_path = _dir(out_dir) / filename
    with out_path.open("w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps(train_entry_to_dict(e), sort_keys=True) + "\n")
    return str(out_path)


def write_config_snapshot(resolved: Dict[str, Any], out_dir: str | Path, filename: str = settings.CONFIG_SNAPSHOT_FILE) -> str:
    out_path = _dir(out_dir) / filename
    with out_path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(resolved, f, sort_keys=True, default_flow_style=False)
    return str(out_path)


def write_scores_jsonl(scores: Iterable[Tuple[str, ImageScore]], out_dir: str | Path, filename: str = "scores.jsonl") -> str:
    out_path = _dir(out_dir) / filename
    with out_path.open("w", encoding="utf-8") as f:
        for sample_id, s in scores:
            f.write(json.dumps(score_to_dict(sample_id, s), sort_keys=True) + "\n")
    return str(out_path)


# -------------------------
# Heatmaps
# -------------------------

def safe_stem(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", sample_id).strip("_") or "sample"


def colorize(values: np.ndarray, cmap: str = "viridis") -> np.ndarray:
    """[0, 1] map -> (H, W, 3) uint8."""
    rgba = colormaps[cmap](np.clip(values, 0.0, 1.0))
    return np.round(rgba[..., :3] * 255.0).astype(np.uint8)


def write_heatmap(
    amap: AnomalyMap,
    out_dir: str | Path,
    sample_id: str,
    overlay: Optional[np.ndarray] = None,
    alpha: float = 0.5,
) -> Tuple[str, str]:
    """
    Writes <id>.png (viridis, optionally blended over an (H, W, 3) uint8 image) and
    <id>.npy (raw float32 values). Returns both paths.
    """
    p = _dir(out_dir)
    stem = safe_stem(sample_id)
    values = amap.values.detach().cpu().numpy().astype(np.float32)

    rgb = colorize(values)
    if overlay is not None:
        base = np.asarray(overlay, dtype=np.float64)
        rgb = np.round((1.0 - alpha) * base + alpha * rgb.astype(np.float64)).astype(np.uint8)

    png_path = p / f"{stem}.png"
    Image.fromarray(rgb).save(png_path, format="PNG")
    npy_path = p / f"{stem}.npy"
    np.save(npy_path, values)
    return str(png_path), str(npy_path)

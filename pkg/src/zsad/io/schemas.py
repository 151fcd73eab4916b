from __future__ import annotations

from typing import Any, Dict, Optional

from zsad.core.models import (
    CategoryReport,
    EvalReport,
    ImageMetrics,
    ImageScore,
    PixelMetrics,
    TrainLogEntry,
)


def _image(m: Optional[ImageMetrics]) -> Optional[Dict[str, Any]]:
    if m is None:
        return None
    return {"auroc": m.auroc, "ap": m.ap, "f1max": m.f1max}


def _pixel(m: Optional[PixelMetrics]) -> Optional[Dict[str, Any]]:
    if m is None:
        return None
    return {"auroc": m.auroc, "aupro": m.aupro, "f1max": m.f1max}


def category_to_dict(c: CategoryReport) -> Dict[str, Any]:
    return {
        "n_samples": c.n_samples,
        "n_anomalous": c.n_anomalous,
        "image": _image(c.image),
        "pixel": _pixel(c.pixel),
        "flags": list(c.flags),
    }


def report_to_dict(r: EvalReport) -> Dict[str, Any]:
    return {
        "per_category": {name: category_to_dict(c) for name, c in r.per_category.items()},
        "mean": {
            "image": _image(r.mean_image),
            "pixel": _pixel(r.mean_pixel),
        },
        "flags": list(r.flags),
        "metadata": dict(r.metadata),
    }


def train_entry_to_dict(e: TrainLogEntry) -> Dict[str, Any]:
    return {
        "epoch": e.epoch,
        "step": e.step,
        "focal": e.focal,
        "dice": e.dice,
        "global_ce": e.global_ce,
        "total": e.total,
        "wall_time": round(e.wall_time, 6),
    }


def score_to_dict(sample_id: str, s: ImageScore) -> Dict[str, Any]:
    return {
        "id": sample_id,
        "score": s.value,
        "strategy": s.strategy.value,
        "global_term": s.global_term,
        "local_term": s.local_term,
    }

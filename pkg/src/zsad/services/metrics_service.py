from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid
from sklearn.metrics import average_precision_score, roc_auc_score

from zsad.core import constants
from zsad.core.errors import InputError, ParameterError
from zsad.core.models import CategoryReport, EvalReport, ImageMetrics, PixelMetrics

ArrayLike = Sequence[float] | np.ndarray


@dataclass(frozen=True)
class CategoryScores:
    """
    Everything needed to score one category. Either block may be None when the
    dataset carries no annotation at that level.
    """

    category: str
    image_scores: Optional[np.ndarray] = None
    image_labels: Optional[np.ndarray] = None
    pixel_maps: Optional[Sequence[np.ndarray]] = None
    pixel_masks: Optional[Sequence[np.ndarray]] = None


def _as_scored(scores: ArrayLike, labels: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise InputError(f"{s.size} scores for {y.size} labels")
    if not np.isfinite(s).all():
        raise InputError("scores contain non-finite values")
    return s, y


# -------------------------
# Threshold-free metrics
# -------------------------

def auroc(scores: ArrayLike, labels: ArrayLike) -> Optional[float]:
    """Mann-Whitney AUROC (ties count 0.5); None when only one class is present."""
    s, y = _as_scored(scores, labels)
    if y.all() or not y.any():
        return None
    return float(roc_auc_score(y, s))


def average_precision(scores: ArrayLike, labels: ArrayLike) -> Optional[float]:
    """Step-wise AP over descending score groups; None without positives."""
    s, y = _as_scored(scores, labels)
    if not y.any():
        return None
    return float(average_precision_score(y, s))


def f1_max(scores: ArrayLike, labels: ArrayLike) -> Optional[Tuple[float, float]]:
    """
    Best F1 over thresholds at every unique score (predict score >= t).
    Returns (f1, threshold); equal F1 values resolve to the larger threshold.
    """
    s, y = _as_scored(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    s_desc = s[order]
    y_desc = y[order]
    tp = np.cumsum(y_desc)
    fp = np.cumsum(~y_desc)
    # last position of every tie group
    ends = np.r_[np.flatnonzero(np.diff(s_desc)), s_desc.size - 1]
    f1 = 2.0 * tp[ends] / (tp[ends] + fp[ends] + n_pos)
    k = int(np.argmax(f1))
    return float(f1[k]), float(s_desc[ends[k]])


# -------------------------
# AUPRO
# -------------------------

def _structure(connectivity: int) -> np.ndarray:
    if connectivity not in (4, 8):
        raise ParameterError("connectivity must be 4 or 8")
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def label_regions(mask: np.ndarray, connectivity: int = 4) -> Tuple[np.ndarray, int]:
    """Connected components of a binary mask; labels 1..n, background 0."""
    labeled, n = ndimage.label(np.asarray(mask) > 0.5, structure=_structure(connectivity))
    return labeled, int(n)


def pro_curve(
    maps: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    connectivity: int = 4,
    max_exact_pixels: int = constants.AUPRO_MAX_EXACT_PIXELS,
    quantile_thresholds: int = constants.AUPRO_QUANTILE_THRESHOLDS,
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """
    (fpr, pro) for a descending threshold sweep, starting at (0, 0).
    Regions and normal pixels are pooled over all images. None without any region
    or without any normal pixel.
    """
    if len(maps) != len(masks):
        raise InputError(f"{len(maps)} maps for {len(masks)} masks")
    if not maps:
        return None

    score_parts: List[np.ndarray] = []
    region_ids: List[np.ndarray] = []
    sizes: List[np.ndarray] = []
    offset = 0
    for amap, mask in zip(maps, masks):
        amap = np.asarray(amap, dtype=np.float64)
        if amap.shape != np.asarray(mask).shape:
            raise InputError(f"map shape {amap.shape} does not match mask shape {np.asarray(mask).shape}")
        labeled, n = label_regions(mask, connectivity)
        score_parts.append(amap.ravel())
        region_ids.append(np.where(labeled.ravel() > 0, labeled.ravel() + offset, 0))
        sizes.append(np.bincount(labeled.ravel(), minlength=n + 1)[1:])
        offset += n

    n_regions = offset
    scores = np.concatenate(score_parts)
    regions = np.concatenate(region_ids)
    normal = regions == 0
    n_normal = int(normal.sum())
    if n_regions == 0 or n_normal == 0:
        return None
    if not np.isfinite(scores).all():
        raise InputError("anomaly maps contain non-finite values")

    region_size = np.r_[0, np.concatenate(sizes)].astype(np.float64)
    pro_w = np.zeros_like(scores)
    pro_w[~normal] = 1.0 / (n_regions * region_size[regions[~normal]])
    fpr_w = normal / float(n_normal)

    order = np.argsort(-scores, kind="mergesort")
    s_desc = scores[order]
    cum_pro = np.cumsum(pro_w[order])
    cum_fpr = np.cumsum(fpr_w[order])

    if scores.size <= max_exact_pixels:
        ends = np.r_[np.flatnonzero(np.diff(s_desc)), s_desc.size - 1]
    else:
        thresholds = np.unique(np.quantile(scores, np.linspace(0.0, 1.0, quantile_thresholds)))[::-1]
        # count of scores >= t
        counts = np.searchsorted(-s_desc, -thresholds, side="right")
        ends = counts[counts > 0] - 1

    fpr = np.r_[0.0, cum_fpr[ends]]
    pro = np.r_[0.0, cum_pro[ends]]
    return np.clip(fpr, 0.0, 1.0), np.clip(pro, 0.0, 1.0)


def partial_area(fpr: np.ndarray, pro: np.ndarray, fpr_limit: float) -> float:
    """Trapezoid area up to fpr_limit, interpolating at the limit, normalized by it."""
    keep = fpr <= fpr_limit
    x = fpr[keep]
    y = pro[keep]
    if x[-1] < fpr_limit and np.any(fpr > fpr_limit):
        j = int(np.argmax(fpr > fpr_limit))
        x0, x1, y0, y1 = fpr[j - 1], fpr[j], pro[j - 1], pro[j]
        y_lim = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
        x = np.r_[x, fpr_limit]
        y = np.r_[y, y_lim]
    return float(trapezoid(y, x) / fpr_limit)


def aupro(
    maps: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    fpr_limit: float = constants.DEFAULT_FPR_LIMIT,
    connectivity: int = 4,
    max_exact_pixels: int = constants.AUPRO_MAX_EXACT_PIXELS,
    quantile_thresholds: int = constants.AUPRO_QUANTILE_THRESHOLDS,
) -> Optional[float]:
    if not 0 < fpr_limit <= 1:
        raise ParameterError(f"fpr_limit must lie in (0, 1], got {fpr_limit}")
    curve = pro_curve(maps, masks, connectivity, max_exact_pixels, quantile_thresholds)
    if curve is None:
        return None
    fpr, pro = curve
    return partial_area(fpr, pro, fpr_limit)


# -------------------------
# Reports
# -------------------------

def _image_block(c: CategoryScores, flags: List[str]) -> ImageMetrics:
    scores, labels = c.image_scores, c.image_labels
    if len(scores) == 0:
        flags.append("image metrics undefined: no samples")
        return ImageMetrics(None, None, None)
    au = auroc(scores, labels)
    ap = average_precision(scores, labels)
    f1 = f1_max(scores, labels)
    if au is None:
        flags.append("image.auroc undefined: single class")
    if ap is None:
        flags.append("image.ap undefined: no anomalous images")
    if f1 is None:
        flags.append("image.f1max undefined: no anomalous images")
    return ImageMetrics(auroc=au, ap=ap, f1max=None if f1 is None else f1[0])


def _pixel_block(
    c: CategoryScores,
    flags: List[str],
    fpr_limit: float,
    connectivity: int,
    max_exact_pixels: int,
    quantile_thresholds: int,
) -> PixelMetrics:
    if not c.pixel_maps:
        flags.append("pixel metrics undefined: no samples")
        return PixelMetrics(None, None, None)
    pooled_scores = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in c.pixel_maps])
    pooled_labels = np.concatenate([(np.asarray(m) > 0.5).ravel() for m in c.pixel_masks])
    au = auroc(pooled_scores, pooled_labels)
    f1 = f1_max(pooled_scores, pooled_labels)
    pro = aupro(c.pixel_maps, c.pixel_masks, fpr_limit, connectivity, max_exact_pixels, quantile_thresholds)
    if au is None:
        flags.append("pixel.auroc undefined: single class")
    if f1 is None:
        flags.append("pixel.f1max undefined: no anomalous pixels")
    if pro is None:
        flags.append("pixel.aupro undefined: no anomalous region or no normal pixel")
    return PixelMetrics(auroc=au, aupro=pro, f1max=None if f1 is None else f1[0])


def category_report(
    c: CategoryScores,
    fpr_limit: float = constants.DEFAULT_FPR_LIMIT,
    connectivity: int = 4,
    max_exact_pixels: int = constants.AUPRO_MAX_EXACT_PIXELS,
    quantile_thresholds: int = constants.AUPRO_QUANTILE_THRESHOLDS,
) -> CategoryReport:
    flags: List[str] = []
    image = _image_block(c, flags) if c.image_scores is not None else None
    pixel = (
        _pixel_block(c, flags, fpr_limit, connectivity, max_exact_pixels, quantile_thresholds)
        if c.pixel_maps is not None
        else None
    )

    if c.image_labels is not None:
        n_samples = int(np.asarray(c.image_labels).size)
        n_anomalous = int(np.asarray(c.image_labels).astype(bool).sum())
    elif c.pixel_masks is not None:
        n_samples = len(c.pixel_masks)
        n_anomalous = sum(1 for m in c.pixel_masks if (np.asarray(m) > 0.5).any())
    else:
        n_samples, n_anomalous = 0, 0

    return CategoryReport(
        category=c.category,
        n_samples=n_samples,
        n_anomalous=n_anomalous,
        image=image,
        pixel=pixel,
        flags=tuple(flags),
    )


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def aggregate_report(
    categories: Sequence[CategoryScores],
    fpr_limit: float = constants.DEFAULT_FPR_LIMIT,
    connectivity: int = 4,
    max_exact_pixels: int = constants.AUPRO_MAX_EXACT_PIXELS,
    quantile_thresholds: int = constants.AUPRO_QUANTILE_THRESHOLDS,
    metadata: Optional[Dict[str, object]] = None,
) -> EvalReport:
    """
    Per-category metrics plus unweighted means over the categories where each
    metric is defined.
    """
    if not categories:
        raise ParameterError("at least one category is required")
    if not 0 < fpr_limit <= 1:
        raise ParameterError(f"fpr_limit must lie in (0, 1], got {fpr_limit}")

    per_category: Dict[str, CategoryReport] = {}
    for c in categories:
        per_category[c.category] = category_report(c, fpr_limit, connectivity, max_exact_pixels, quantile_thresholds)

    per_category = dict(sorted(per_category.items()))
    reports = list(per_category.values())
    images = [r.image for r in reports if r.image is not None]
    pixels = [r.pixel for r in reports if r.pixel is not None]

    mean_image = (
        ImageMetrics(
            auroc=_mean([m.auroc for m in images]),
            ap=_mean([m.ap for m in images]),
            f1max=_mean([m.f1max for m in images]),
        )
        if images
        else None
    )
    mean_pixel = (
        PixelMetrics(
            auroc=_mean([m.auroc for m in pixels]),
            aupro=_mean([m.aupro for m in pixels]),
            f1max=_mean([m.f1max for m in pixels]),
        )
        if pixels
        else None
    )

    flags = tuple(f"{r.category}: {f}" for r in reports for f in r.flags)
    meta: Dict[str, object] = {
        "fpr_limit": fpr_limit,
        "connectivity": connectivity,
        "pixel_pooling": "per category",
        "aupro_exact_max_pixels": max_exact_pixels,
        "aupro_quantile_thresholds": quantile_thresholds,
    }
    meta.update(metadata or {})
    return EvalReport(
        per_category=per_category,
        mean_image=mean_image,
        mean_pixel=mean_pixel,
        flags=flags,
        metadata=meta,
    )

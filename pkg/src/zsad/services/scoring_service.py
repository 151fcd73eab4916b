from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from zsad.core.errors import InputError, ParameterError
from zsad.core.models import (
    AnomalyMap,
    ImageScore,
    InferenceResult,
    ResolutionStage,
    Strategy,
    TextPrototypes,
    VisualFeatures,
)
from zsad.ports.encoder_port import VisionLanguageEncoder


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")


# -------------------------
# Likelihood
# -------------------------

def likelihood_from_similarities(
    sim_n: torch.Tensor,
    sim_a: torch.Tensor,
    tau: float,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Two-way softmax over (sim_n, sim_a) / tau; torch.softmax subtracts the max internally."""
    _check_tau(tau)
    probs = torch.softmax(torch.stack([sim_n, sim_a], dim=-1) / tau, dim=-1)
    return probs[..., 0], probs[..., 1]


def class_likelihood(
    e: torch.Tensor,
    prototypes: TextPrototypes,
    tau: float,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    (p_n, p_a) for embedding(s) `e` of shape (..., D). `e` is L2-normalized here;
    prototypes are expected unit-norm already.
    """
    _check_tau(tau)
    if not torch.isfinite(e).all():
        raise InputError("embedding contains non-finite values")
    dtype = torch.promote_types(e.dtype, prototypes.g_n.dtype)
    e_hat = F.normalize(e.to(dtype), dim=-1)
    g_n = prototypes.g_n.to(device=e.device, dtype=dtype)
    g_a = prototypes.g_a.to(device=e.device, dtype=dtype)
    return likelihood_from_similarities(e_hat @ g_n, e_hat @ g_a, tau)


# -------------------------
# Maps
# -------------------------

def patch_probability_maps(features: VisualFeatures, prototypes: TextPrototypes, tau: float) -> torch.Tensor:
    """Stacked (Ŝ_n, Ŝ_a) on the patch grid: (2, h, w), or (B, 2, h, w) for batched features."""
    h, w = features.grid_shape
    p_n, p_a = class_likelihood(features.patch_features, prototypes, tau)
    maps = torch.stack([p_n, p_a], dim=-2)          # (..., 2, N)
    return maps.reshape(*maps.shape[:-1], h, w)


def patch_anomaly_maps(
    features: VisualFeatures,
    prototypes: TextPrototypes,
    tau: float,
) -> Tuple[AnomalyMap, AnomalyMap]:
    if features.batch_size is not None:
        raise InputError("patch_anomaly_maps takes single-image features; use patch_probability_maps for batches")
    maps = patch_probability_maps(features, prototypes, tau)
    return (
        AnomalyMap(values=maps[0], stage=ResolutionStage.PATCH_GRID),
        AnomalyMap(values=maps[1], stage=ResolutionStage.PATCH_GRID),
    )


def upsample_tensor(maps: torch.Tensor, target: Tuple[int, int]) -> torch.Tensor:
    """Bilinear (align_corners=False) upsampling of (B, C, h, w) maps; differentiable."""
    h, w = int(maps.shape[-2]), int(maps.shape[-1])
    th, tw = int(target[0]), int(target[1])
    if th < h or tw < w:
        raise ParameterError(f"target {(th, tw)} is smaller than source {(h, w)}; downsampling is not supported")
    if (th, tw) == (h, w):
        return maps
    return F.interpolate(maps, size=(th, tw), mode="bilinear", align_corners=False)


def upsample_bilinear(amap: AnomalyMap, target: Tuple[int, int]) -> AnomalyMap:
    values = upsample_tensor(amap.values[None, None], target)[0, 0]
    return AnomalyMap(values=values, stage=ResolutionStage.UPSAMPLED)


def gaussian_smooth(amap: AnomalyMap, sigma: float) -> AnomalyMap:
    """Separable Gaussian, radius ceil(4σ), reflect padding, computed in float64."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    arr = amap.values.detach().cpu().to(torch.float64).numpy()
    out = ndimage.gaussian_filter(arr, sigma=float(sigma), mode="reflect", radius=int(math.ceil(4.0 * sigma)))
    return AnomalyMap(values=torch.from_numpy(np.ascontiguousarray(out)), stage=ResolutionStage.SMOOTHED)


# -------------------------
# Image-level scores
# -------------------------

def image_score(
    features: VisualFeatures,
    G_f: TextPrototypes,
    anomaly_map: Optional[AnomalyMap],
    strategy: Strategy,
    tau: float,
) -> ImageScore:
    strategy = Strategy(strategy)
    if features.batch_size is not None:
        raise InputError("image_score takes single-image features")

    if strategy is Strategy.S5:
        if anomaly_map is None:
            raise ParameterError("strategy S5 needs the patch-grid anomaly map")
        if anomaly_map.stage is not ResolutionStage.PATCH_GRID:
            raise ParameterError(f"strategy S5 uses the patch-grid map, got stage {anomaly_map.stage.value}")

    _, s1 = class_likelihood(features.object_token, G_f, tau)
    _, s2 = class_likelihood(features.spatial_token, G_f, tau)
    s1, s2 = float(s1), float(s2)

    if strategy is Strategy.S1:
        return ImageScore(value=s1, strategy=strategy, global_term=s1)
    if strategy is Strategy.S2:
        return ImageScore(value=s2, strategy=strategy, global_term=s2)
    if strategy is Strategy.S3:
        v = max(s1, s2)
        return ImageScore(value=v, strategy=strategy, global_term=v)
    if strategy is Strategy.S4:
        v = (s1 + s2) / 2.0
        return ImageScore(value=v, strategy=strategy, global_term=v)

    local = float(anomaly_map.values.max())
    return ImageScore(value=s2 + local, strategy=strategy, global_term=s2, local_term=local)


# -------------------------
# Inference
# -------------------------

def infer_features(
    features: VisualFeatures,
    G_f: TextPrototypes,
    G_l: TextPrototypes,
    tau: float,
    sigma: float,
    output_size: Tuple[int, int],
    strategy: Strategy = Strategy.S5,
) -> InferenceResult:
    """Score and map from already-encoded single-image features."""
    _, patch_map = patch_anomaly_maps(features, G_l, tau)
    score = image_score(features, G_f, patch_map, strategy, tau)
    smoothed = gaussian_smooth(upsample_bilinear(patch_map, output_size), sigma)
    return InferenceResult(score=score, anomaly_map=smoothed, patch_map=patch_map)


def run_inference(
    image: torch.Tensor,
    encoder: VisionLanguageEncoder,
    G_f: TextPrototypes,
    G_l: TextPrototypes,
    tau: float,
    sigma: float,
    strategy: Strategy = Strategy.S5,
) -> Tuple[ImageScore, AnomalyMap]:
    with torch.no_grad():
        features = encoder.encode_image(image)
        result = infer_features(
            features, G_f, G_l, tau, sigma,
            output_size=(int(image.shape[-2]), int(image.shape[-1])),
            strategy=strategy,
        )
    return result.score, result.anomaly_map

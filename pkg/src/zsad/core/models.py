from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import torch

from zsad.core.constants import (
    AUPRO_MAX_EXACT_PIXELS,
    AUPRO_QUANTILE_THRESHOLDS,
    DEFAULT_FPR_LIMIT,
    DEFAULT_N_TOKENS,
    DEFAULT_SIGMA,
    TIPS_TEMPERATURE,
)
from zsad.core.errors import InputError, ParameterError


# Enumerations

class PromptSource(str, Enum):
    FIXED = "fixed"
    LEARNABLE = "learnable"


class ResolutionStage(str, Enum):
    PATCH_GRID = "patch_grid"
    UPSAMPLED = "upsampled"
    SMOOTHED = "smoothed"


class Strategy(str, Enum):
    S1 = "S1"   # p_a(object token, G_f)
    S2 = "S2"   # p_a(spatial token, G_f)
    S3 = "S3"   # max(S1, S2)
    S4 = "S4"   # mean(S1, S2)
    S5 = "S5"   # S2 + max(patch-grid anomaly map)


class LossMode(str, Enum):
    LOCAL = "local"
    GLOBAL = "global"
    BOTH = "both"


class PromptingMode(str, Enum):
    DECOUPLED = "decoupled"
    FIXED = "fixed"
    LEARNED = "learned"


class Provenance(str, Enum):
    LEARNED = "learned"
    WORD = "word-lookup"



# Configuration models

@dataclass(frozen=True)
class BackboneConfig:
    """
    Vision-language backbone description. Block indices in `patch_layers` are 1-based,
    so the default `(num_layers,)` is the last block.
    """

    name: str
    patch_size: int = 14
    input_resolution: int = 518
    embed_dim: int = 1024
    text_token_dim: int = 1024
    temperature: float = TIPS_TEMPERATURE
    num_layers: int = 24
    patch_layers: Tuple[int, ...] = (24,)
    context_length: int = 77
    normalization_mean: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    normalization_std: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    weights_path: Optional[str] = None
    model_arch: Optional[str] = None   # open_clip architecture name for real backbones

    def __post_init__(self) -> None:
        if self.patch_size <= 0 or self.input_resolution <= 0:
            raise ParameterError("patch_size and input_resolution must be positive")
        if self.input_resolution % self.patch_size != 0:
            raise ParameterError(
                f"input_resolution {self.input_resolution} is not a multiple of patch_size {self.patch_size}"
            )
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if not self.patch_layers:
            raise ParameterError("patch_layers must not be empty")
        bad = [i for i in self.patch_layers if not 1 <= int(i) <= self.num_layers]
        if bad:
            raise ParameterError(f"patch_layers {bad} outside 1..{self.num_layers}")
        if len(self.normalization_mean) != 3 or len(self.normalization_std) != 3:
            raise ParameterError("normalization_mean/std need one value per channel")
        if any(s <= 0 for s in self.normalization_std):
            raise ParameterError("normalization_std values must be > 0")

    @property
    def grid_size(self) -> int:
        return self.input_resolution // self.patch_size


@dataclass(frozen=True)
class TrainConfig:

    learning_rate: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 2
    batch_size: int = 8
    seed: int = 111
    loss_mode: LossMode = LossMode.LOCAL
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_epsilon: float = 1.0
    n_tokens: int = DEFAULT_N_TOKENS
    local_weight: float = 1.0
    global_weight: float = 1.0
    shuffle: bool = True
    num_workers: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ParameterError("beta1 and beta2 must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.n_tokens < 1:
            raise ParameterError("epochs, batch_size and n_tokens must be >= 1")
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))


@dataclass(frozen=True)
class EvalConfig:

    strategy: Strategy = Strategy.S5
    sigma: float = DEFAULT_SIGMA
    fpr_limit: float = DEFAULT_FPR_LIMIT
    prompting: PromptingMode = PromptingMode.DECOUPLED
    connectivity: int = 4
    lexicon: Optional[str] = None          # None = pick from the manifest domain
    override_same_domain: bool = False
    batch_size: int = 8
    num_workers: int = 0
    max_exact_pixels: int = AUPRO_MAX_EXACT_PIXELS
    quantile_thresholds: int = AUPRO_QUANTILE_THRESHOLDS

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "prompting", PromptingMode(self.prompting))
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.fpr_limit <= 1:
            raise ParameterError(f"fpr_limit must lie in (0, 1], got {self.fpr_limit}")
        if self.connectivity not in (4, 8):
            raise ParameterError("connectivity must be 4 or 8")
        if self.lexicon not in (None, "generic", "medical"):
            raise ParameterError(f"unknown lexicon {self.lexicon!r}")



# Encoder outputs

@dataclass(frozen=True)
class VisualFeatures:
    """
    Dense patch features plus the object and spatial global tokens.
    Tensors may carry a leading batch dimension (see `batch_size`).
    """

    patch_features: torch.Tensor    # (N, D) or (B, N, D)
    object_token: torch.Tensor      # (D,) or (B, D)
    spatial_token: torch.Tensor     # (D,) or (B, D)
    grid_shape: Tuple[int, int]

    def __post_init__(self) -> None:
        h, w = self.grid_shape
        if self.patch_features.shape[-2] != h * w:
            raise InputError(
                f"patch count {self.patch_features.shape[-2]} does not match grid {self.grid_shape}"
            )

    @property
    def batch_size(self) -> Optional[int]:
        return self.patch_features.shape[0] if self.patch_features.dim() == 3 else None

    def select(self, index: int) -> "VisualFeatures":
        return VisualFeatures(
            patch_features=self.patch_features[index],
            object_token=self.object_token[index],
            spatial_token=self.spatial_token[index],
            grid_shape=self.grid_shape,
        )


@dataclass(frozen=True)
class TextEmbedding:
    vector: torch.Tensor
    normalized: bool = True


@dataclass(frozen=True)
class TokenEmbeddingSequence:
    tokens: torch.Tensor                 # (L, D_t)
    provenance: Tuple[Provenance, ...]

    def __post_init__(self) -> None:
        if self.tokens.dim() != 2 or self.tokens.shape[0] < 1:
            raise InputError(f"token sequence must be a non-empty L x D_t matrix, got {tuple(self.tokens.shape)}")
        if len(self.provenance) != self.tokens.shape[0]:
            raise InputError(
                f"{len(self.provenance)} provenance tags for {self.tokens.shape[0]} rows"
            )

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])



# Prompt models

@dataclass(frozen=True)
class StateLexicon:
    normal_states: Tuple[str, ...]
    abnormal_states: Tuple[str, ...]
    domain_tag: str = "generic"


@dataclass(frozen=True)
class FixedPromptSet:
    normal_prompts: Tuple[str, ...]
    abnormal_prompts: Tuple[str, ...]
    class_name: str


@dataclass(frozen=True)
class TextPrototypes:
    g_n: torch.Tensor
    g_a: torch.Tensor
    source: PromptSource

    def swapped(self) -> "TextPrototypes":
        return TextPrototypes(g_n=self.g_a, g_a=self.g_n, source=self.source)


@dataclass(frozen=True)
class LearnablePromptState:
    T_n: torch.Tensor     # (E, D_t)
    T_a: torch.Tensor     # (E, D_t)
    seed: int
    version: int = 1

    def __post_init__(self) -> None:
        if self.T_n.dim() != 2 or self.T_n.shape != self.T_a.shape:
            raise InputError(
                f"T_n {tuple(self.T_n.shape)} and T_a {tuple(self.T_a.shape)} must be equal E x D_t matrices"
            )
        if self.T_n.shape[0] < 1:
            raise InputError("E must be >= 1")
        if not (torch.isfinite(self.T_n).all() and torch.isfinite(self.T_a).all()):
            raise InputError("learnable prompt tokens must be finite")

    @property
    def n_tokens(self) -> int:
        return int(self.T_n.shape[0])

    @property
    def token_dim(self) -> int:
        return int(self.T_n.shape[1])



# Scoring models

@dataclass(frozen=True)
class AnomalyMap:
    values: torch.Tensor    # (h, w)
    stage: ResolutionStage

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.values.shape[-2]), int(self.values.shape[-1])


@dataclass(frozen=True)
class ImageScore:
    value: float
    strategy: Strategy
    global_term: float
    local_term: Optional[float] = None


@dataclass(frozen=True)
class InferenceResult:
    score: ImageScore
    anomaly_map: AnomalyMap     # smoothed, image resolution
    patch_map: AnomalyMap       # patch grid



# Training log

@dataclass(frozen=True)
class TrainLogEntry:
    epoch: int
    step: int
    focal: Optional[float]
    dice: Optional[float]
    global_ce: Optional[float]
    total: float
    wall_time: float



# Evaluation models

@dataclass(frozen=True)
class ImageMetrics:
    auroc: Optional[float]
    ap: Optional[float]
    f1max: Optional[float]


@dataclass(frozen=True)
class PixelMetrics:
    auroc: Optional[float]
    aupro: Optional[float]
    f1max: Optional[float]


@dataclass(frozen=True)
class CategoryReport:
    category: str
    n_samples: int
    n_anomalous: int
    image: Optional[ImageMetrics] = None
    pixel: Optional[PixelMetrics] = None
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    per_category: Dict[str, CategoryReport]
    mean_image: Optional[ImageMetrics]
    mean_pixel: Optional[PixelMetrics]
    flags: Tuple[str, ...] = ()
    metadata: Dict[str, object] = field(default_factory=dict)

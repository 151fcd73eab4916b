from __future__ import annotations

from typing import Dict, Tuple

# ---- Fixed detection prompts ----

GENERIC_TEMPLATES: Tuple[str, ...] = (
    "a cropped photo of a {}",
    "a close-up photo of a {}",
    "a photo of a {} for visual inspection",
    "a photo of the {}",
    "a bright photo of a {}",
    "a dark photo of a {}",
    "a blurry photo of a {}",
)

GENERIC_NORMAL_STATES: Tuple[str, ...] = (
    "flawless {}",
    "perfect {}",
    "{} without defect",
    "{} without damage",
)

GENERIC_ABNORMAL_STATES: Tuple[str, ...] = (
    "damaged {}",
    "broken {}",
    "{} with defect",
    "{} with flaw",
)

MEDICAL_TEMPLATES: Tuple[str, ...] = (
    "a medical image of a {}",
    "a diagnostic scan of a {}",
)

MEDICAL_NORMAL_STATES: Tuple[str, ...] = (
    "normal {}",
    "intact {}",
    "{} with uniform structure",
    "{} showing clear tissue",
    "{} with normal anatomy",
    "{} showing no distortion",
    "{} with symmetric appearance",
    "{} looking normal",
    "{} with even texture",
    "{} with regular shape",
)

MEDICAL_ABNORMAL_STATES: Tuple[str, ...] = (
    "abnormal {}",
    "{} with spot",
    "{} with abnormality",
    "diseased {}",
    "{} showing distortion",
    "{} with irregular area",
    "{} with irregular shape",
    "{} with uneven texture",
)

# ---- Learnable localization prompts ----

NORMAL_SUFFIX_WORDS: Tuple[str, ...] = ("object",)
ABNORMAL_SUFFIX_WORDS: Tuple[str, ...] = ("damaged", "object")

DEFAULT_N_TOKENS = 8
PROMPT_INIT_STD = 0.02

# ---- Backbones ----

TIPS_TEMPERATURE = 0.0042
CLIP_TEMPERATURE = 0.01

# name -> (embed_dim, parameter count, family)
BACKBONE_VARIANTS: Dict[str, Tuple[int, str, str]] = {
    "tips-s14-hr": (384, "55.2M", "tips"),
    "tips-b14-hr": (768, "195.3M", "tips"),
    "tips-l14-hr": (1024, "487.1M", "tips"),
    "tips-so14-hr": (1152, "860.8M", "tips"),
    "tips-g14-lr": (1536, "1.5B", "tips"),
    "tips-g14-hr": (1536, "1.5B", "tips"),
    "clip-vit-b16": (512, "150M", "clip"),
    "clip-vit-b32": (512, "151M", "clip"),
    "clip-vit-l14": (768, "428M", "clip"),
    "clip-vit-h14": (1024, "986M", "clip"),
    "clip-vit-g14": (1024, "1.37B", "clip"),
    "clip-vit-bigg14": (1280, "2.54B", "clip"),
}

MOCK_BACKBONE = "mock"

# ---- Scoring / metrics defaults ----

DEFAULT_SIGMA = 4.0
DEFAULT_FPR_LIMIT = 0.3
AUPRO_MAX_EXACT_PIXELS = 100_000
AUPRO_QUANTILE_THRESHOLDS = 200

# ---- Exit codes ----

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_ASSET_MISSING = 3
EXIT_NUMERIC = 4

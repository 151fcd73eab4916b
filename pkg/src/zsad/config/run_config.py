from __future__ import annotations

import argparse
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from zsad.config import settings
from zsad.core.constants import BACKBONE_VARIANTS, CLIP_TEMPERATURE, MOCK_BACKBONE, TIPS_TEMPERATURE
from zsad.core.errors import AssetError, ParameterError, ValidationError
from zsad.core.models import BackboneConfig, EvalConfig, TrainConfig

# open_clip architecture names for the CLIP comparison rows
_OPEN_CLIP_ARCH = {
    "clip-vit-b16": "ViT-B-16",
    "clip-vit-b32": "ViT-B-32",
    "clip-vit-l14": "ViT-L-14",
    "clip-vit-h14": "ViT-H-14",
    "clip-vit-g14": "ViT-g-14",
    "clip-vit-bigg14": "ViT-bigG-14",
}
_CLIP_TEXT_WIDTH = {
    "clip-vit-b16": 512,
    "clip-vit-b32": 512,
    "clip-vit-l14": 768,
    "clip-vit-h14": 1024,
    "clip-vit-g14": 1024,
    "clip-vit-bigg14": 1280,
}
# (patch size, input resolution); the resolution must be a multiple of the patch
_CLIP_PATCH = {
    "clip-vit-b16": (16, 512),
    "clip-vit-b32": (32, 512),
    "clip-vit-l14": (14, 518),
    "clip-vit-h14": (14, 518),
    "clip-vit-g14": (14, 518),
    "clip-vit-bigg14": (14, 518),
}
_CLIP_BLOCKS = {
    "clip-vit-b16": 12,
    "clip-vit-b32": 12,
    "clip-vit-l14": 24,
    "clip-vit-h14": 32,
    "clip-vit-g14": 40,
    "clip-vit-bigg14": 48,
}
_TIPS_BLOCKS = {
    "tips-s14-hr": 12,
    "tips-b14-hr": 12,
    "tips-l14-hr": 24,
    "tips-so14-hr": 27,
    "tips-g14-lr": 40,
    "tips-g14-hr": 40,
}


def backbone_preset(name: str) -> BackboneConfig:
    if name == MOCK_BACKBONE:
        return BackboneConfig(
            name=MOCK_BACKBONE,
            patch_size=14,
            input_resolution=settings.MOCK_RESOLUTION,
            embed_dim=settings.MOCK_EMBED_DIM,
            text_token_dim=settings.MOCK_EMBED_DIM,
            temperature=settings.MOCK_TEMPERATURE,
            num_layers=24,
            patch_layers=(24,),
            normalization_mean=(0.5, 0.5, 0.5),
            normalization_std=(0.25, 0.25, 0.25),
        )
    if name not in BACKBONE_VARIANTS:
        known = ", ".join([MOCK_BACKBONE, *BACKBONE_VARIANTS])
        raise ParameterError(f"unknown backbone {name!r}; known: {known}")

    embed_dim, _, family = BACKBONE_VARIANTS[name]
    if family == "clip":
        blocks = _CLIP_BLOCKS[name]
        patch, resolution = _CLIP_PATCH[name]
        return BackboneConfig(
            name=name,
            patch_size=patch,
            input_resolution=resolution,
            embed_dim=embed_dim,
            text_token_dim=_CLIP_TEXT_WIDTH[name],
            temperature=CLIP_TEMPERATURE,
            num_layers=blocks,
            patch_layers=(blocks,),
            normalization_mean=(0.48145466, 0.4578275, 0.40821073),
            normalization_std=(0.26862954, 0.26130258, 0.27577711),
            weights_path=settings.ZSAD_WEIGHTS_PATH,
            model_arch=_OPEN_CLIP_ARCH[name],
        )
    blocks = _TIPS_BLOCKS[name]
    return BackboneConfig(
        name=name,
        input_resolution=518,
        embed_dim=embed_dim,
        text_token_dim=embed_dim,
        temperature=TIPS_TEMPERATURE,
        num_layers=blocks,
        patch_layers=(blocks,),
        weights_path=settings.ZSAD_WEIGHTS_PATH,
    )


@dataclass(frozen=True)
class PromptConfig:
    """Overrides for the fixed prompt inventory; None keeps the lexicon defaults."""

    templates: Optional[Tuple[str, ...]] = None
    normal_states: Optional[Tuple[str, ...]] = None
    abnormal_states: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)

    def resolved_dict(self) -> Dict[str, Any]:
        return {
            "backbone": _plain(dataclasses.asdict(self.backbone)),
            "train": _plain(dataclasses.asdict(self.train)),
            "eval": _plain(dataclasses.asdict(self.eval)),
            "prompts": _plain(dataclasses.asdict(self.prompts)),
        }


def _plain(obj: Any) -> Any:
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_TUPLE_FIELDS = {
    "patch_layers", "normalization_mean", "normalization_std",
    "templates", "normal_states", "abnormal_states",
}


def _build_section(cls, base, data: Dict[str, Any], section: str, issues: List[str]):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    for key in unknown:
        issues.append(f"{section}: unknown key {key!r}")
    kwargs = {k: (tuple(v) if k in _TUPLE_FIELDS and v is not None else v) for k, v in data.items() if k in names}
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (ParameterError, TypeError, ValueError) as exc:
        issues.append(f"{section}: {exc}")
        return base if base is not None else cls()


def run_config_from_dict(data: Dict[str, Any], backbone: Optional[str] = None) -> RunConfig:
    issues: List[str] = []
    for key in sorted(set(data) - {"backbone", "train", "eval", "prompts"}):
        issues.append(f"unknown section {key!r}")

    bb_data = dict(data.get("backbone") or {})
    name = backbone or bb_data.pop("name", None) or MOCK_BACKBONE
    bb_data.pop("name", None)
    try:
        base = backbone_preset(name)
    except ParameterError as exc:
        raise ValidationError([str(exc)], subject="run config") from exc

    bb = _build_section(BackboneConfig, base, bb_data, "backbone", issues)
    workers = settings.ZSAD_NUM_WORKERS
    train = _build_section(TrainConfig, TrainConfig(num_workers=workers), dict(data.get("train") or {}), "train", issues)
    ev = _build_section(EvalConfig, EvalConfig(num_workers=workers), dict(data.get("eval") or {}), "eval", issues)
    prompts = _build_section(PromptConfig, PromptConfig(), dict(data.get("prompts") or {}), "prompts", issues)
    if issues:
        raise ValidationError(issues, subject="run config")
    return RunConfig(backbone=bb, train=train, eval=ev, prompts=prompts)


def load_run_config(path: Optional[str], backbone: Optional[str] = None) -> RunConfig:
    if path is None:
        return run_config_from_dict({}, backbone=backbone)
    p = Path(path)
    if not p.is_file():
        raise AssetError(f"config file not found: {p}")
    try:
        with p.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ValidationError([str(exc)], subject=f"config {p}") from exc
    if not isinstance(data, dict):
        raise ValidationError(["top level must be a mapping"], subject=f"config {p}")
    return run_config_from_dict(data, backbone=backbone)


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags win over the config file."""
    train_kw: Dict[str, Any] = {}
    eval_kw: Dict[str, Any] = {}
    bb_kw: Dict[str, Any] = {}

    if getattr(args, "seed", None) is not None:
        train_kw["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        train_kw["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        train_kw["batch_size"] = args.batch_size
    if getattr(args, "loss_mode", None) is not None:
        train_kw["loss_mode"] = args.loss_mode
    if getattr(args, "n_tokens", None) is not None:
        train_kw["n_tokens"] = args.n_tokens
    if getattr(args, "strategy", None) is not None:
        eval_kw["strategy"] = args.strategy
    if getattr(args, "sigma", None) is not None:
        eval_kw["sigma"] = args.sigma
    if getattr(args, "fpr_limit", None) is not None:
        eval_kw["fpr_limit"] = args.fpr_limit
    if getattr(args, "lexicon", None) is not None:
        eval_kw["lexicon"] = args.lexicon
    if getattr(args, "prompting", None) is not None:
        eval_kw["prompting"] = args.prompting
    if getattr(args, "override_same_domain", False):
        eval_kw["override_same_domain"] = True
    if getattr(args, "weights", None) is not None:
        bb_kw["weights_path"] = args.weights
    if getattr(args, "num_workers", None) is not None:
        train_kw["num_workers"] = args.num_workers
        eval_kw["num_workers"] = args.num_workers

    return RunConfig(
        backbone=dataclasses.replace(cfg.backbone, **bb_kw),
        train=dataclasses.replace(cfg.train, **train_kw),
        eval=dataclasses.replace(cfg.eval, **eval_kw),
        prompts=cfg.prompts,
    )

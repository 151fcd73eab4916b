from __future__ import annotations

from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader

from zsad.adapters.datasets.preprocess import Preprocessor
from zsad.adapters.datasets.torch_dataset import ManifestDataset
from zsad.config import settings
from zsad.config.run_config import PromptConfig
from zsad.core.dto import DatasetManifest, Sample
from zsad.core.errors import ValidationError
from zsad.core.models import (
    EvalConfig,
    EvalReport,
    InferenceResult,
    LearnablePromptState,
    PromptingMode,
    TextPrototypes,
)
from zsad.io.checkpoint import PromptCheckpoint
from zsad.ports.encoder_port import VisionLanguageEncoder
from zsad.services.metrics_service import CategoryScores, aggregate_report
from zsad.services.prompt_service import (
    build_detection_prototypes,
    build_localization_prototypes,
    compose_fixed_prompts,
    resolve_fixed_inventory,
)
from zsad.services.scoring_service import infer_features

ProgressFn = Callable[[str, Dict[str, object]], None]
ResultSink = Callable[[Sample, InferenceResult], None]


def class_name_for(category: str) -> str:
    return category.replace("_", " ").strip() or "object"


def check_protocol(
    manifest: DatasetManifest,
    checkpoint: PromptCheckpoint,
    preprocessor: Preprocessor,
    override_same_domain: bool = False,
) -> None:
    """
    Refuses evaluation on the training manifest (unless overridden) and on a
    preprocessing pipeline other than the one the prompts were trained with.
    """
    issues: List[str] = []
    trained_on = checkpoint.meta.get("train_manifest")
    if trained_on is not None and trained_on == manifest.name and not override_same_domain:
        issues.append(
            f"manifest {manifest.name!r} is the training manifest of this checkpoint; "
            "pass --override-same-domain to evaluate in-domain"
        )
    trained_fp = checkpoint.meta.get("preprocess_fingerprint")
    if trained_fp is not None and trained_fp != preprocessor.fingerprint():
        issues.append("preprocessing pipeline differs from the one used in training (fingerprint mismatch)")
    if issues:
        raise ValidationError(issues, subject="evaluation protocol")


class EvaluationService:
    """
    Runs inference over a manifest and turns the results into an EvalReport.

    - Image scores use the fixed prototypes G_f (per category class name)
    - Maps use the learned prototypes G_l
    - The prompting mode can route either pair to both roles
    """

    def __init__(self, encoder: VisionLanguageEncoder, device: Optional[str] = None) -> None:
        self.encoder = encoder
        self.device = torch.device(device or settings.ZSAD_DEVICE)

    # ---------- prototypes ----------

    def detection_prototypes(
        self,
        manifest: DatasetManifest,
        cfg: EvalConfig,
        prompts: Optional[PromptConfig] = None,
    ) -> Dict[str, TextPrototypes]:
        prompts = prompts or PromptConfig()
        templates, lexicon = resolve_fixed_inventory(
            manifest.domain_tag,
            cfg.lexicon,
            prompts.templates,
            prompts.normal_states,
            prompts.abnormal_states,
        )
        out: Dict[str, TextPrototypes] = {}
        with torch.no_grad():
            for category in manifest.categories:
                fixed = compose_fixed_prompts(class_name_for(category), templates, lexicon)
                out[category] = build_detection_prototypes(fixed, self.encoder)
        return out

    def localization_prototypes(self, state: LearnablePromptState) -> TextPrototypes:
        with torch.no_grad():
            return build_localization_prototypes(state, self.encoder)

    @staticmethod
    def route(mode: PromptingMode, G_f: TextPrototypes, G_l: TextPrototypes) -> Tuple[TextPrototypes, TextPrototypes]:
        """(prototypes for image scores, prototypes for maps)."""
        mode = PromptingMode(mode)
        if mode is PromptingMode.FIXED:
            return G_f, G_f
        if mode is PromptingMode.LEARNED:
            return G_l, G_l
        return G_f, G_l

    # ---------- inference ----------

    def iter_results(
        self,
        manifest: DatasetManifest,
        preprocessor: Preprocessor,
        G_f: Mapping[str, TextPrototypes],
        G_l: TextPrototypes,
        cfg: EvalConfig,
        categories: Optional[List[str]] = None,
    ) -> Iterator[Tuple[Sample, InferenceResult]]:
        tau = self.encoder.config.temperature
        size = (preprocessor.resolution, preprocessor.resolution)
        for category in categories or list(manifest.categories):
            score_protos, map_protos = self.route(cfg.prompting, G_f[category], G_l)
            loader = DataLoader(
                ManifestDataset(manifest, preprocessor, categories=[category]),
                batch_size=cfg.batch_size,
                shuffle=False,
                num_workers=cfg.num_workers,
                collate_fn=list,
            )
            for batch in loader:
                images = torch.stack([s.image for s in batch]).to(self.device)
                with torch.no_grad():
                    feats = self.encoder.encode_batch(images)
                    for i, sample in enumerate(batch):
                        result = infer_features(
                            feats.select(i), score_protos, map_protos, tau, cfg.sigma, size, cfg.strategy
                        )
                        yield sample, result

    def evaluate(
        self,
        manifest: DatasetManifest,
        preprocessor: Preprocessor,
        G_f: Mapping[str, TextPrototypes],
        checkpoint: PromptCheckpoint,
        cfg: EvalConfig,
        on_progress: Optional[ProgressFn] = None,
        sink: Optional[ResultSink] = None,
    ) -> EvalReport:

        def _emit(event: str, data: Dict[str, object]) -> None:
            if on_progress is None:
                return
            try:
                on_progress(event, data)
            except Exception:
                # Progress is best-effort; evaluation must not fail on UI issues.
                return

        check_protocol(manifest, checkpoint, preprocessor, cfg.override_same_domain)
        G_l = self.localization_prototypes(checkpoint.state)

        _emit(
            "start",
            {
                "manifest": manifest.name,
                "categories": len(manifest.categories),
                "samples": len(manifest.samples),
                "strategy": cfg.strategy.value,
                "prompting": cfg.prompting.value,
            },
        )

        inputs: List[CategoryScores] = []
        processed = 0
        for category in manifest.categories:
            scores: List[float] = []
            labels: List[int] = []
            maps: List[np.ndarray] = []
            masks: List[np.ndarray] = []
            missing_masks: List[str] = []
            for sample, result in self.iter_results(manifest, preprocessor, G_f, G_l, cfg, [category]):
                processed += 1
                scores.append(result.score.value)
                labels.append(int(sample.label))
                if manifest.has_pixel_masks:
                    if sample.mask is None:
                        missing_masks.append(sample.id)
                    else:
                        maps.append(result.anomaly_map.values.numpy().astype(np.float32))
                        masks.append(sample.mask.numpy() > 0.5)
                if sink is not None:
                    sink(sample, result)
                _emit("sample", {"category": category, "id": sample.id, "processed": processed})

            inputs.append(
                CategoryScores(
                    category=category,
                    image_scores=np.asarray(scores) if manifest.has_image_labels else None,
                    image_labels=np.asarray(labels) if manifest.has_image_labels else None,
                    pixel_maps=maps if manifest.has_pixel_masks else None,
                    pixel_masks=masks if manifest.has_pixel_masks else None,
                )
            )
            _emit("category_done", {"category": category, "samples": len(scores), "missing_masks": missing_masks})

        report = aggregate_report(
            inputs,
            fpr_limit=cfg.fpr_limit,
            connectivity=cfg.connectivity,
            max_exact_pixels=cfg.max_exact_pixels,
            quantile_thresholds=cfg.quantile_thresholds,
            metadata={
                "manifest": manifest.name,
                "annotation_level": manifest.annotation_level,
                "domain_tag": manifest.domain_tag,
                "backbone": self.encoder.config.name,
                "temperature": self.encoder.config.temperature,
                "strategy": cfg.strategy.value,
                "sigma": cfg.sigma,
                "prompting": cfg.prompting.value,
                "lexicon": cfg.lexicon or ("medical" if manifest.domain_tag == "medical" else "generic"),
                "train_manifest": checkpoint.meta.get("train_manifest"),
                "n_tokens": checkpoint.state.n_tokens,
            },
        )
        _emit("done", {"categories": len(report.per_category), "samples": processed})
        return report


def run_evaluation(
    manifest: DatasetManifest,
    encoder: VisionLanguageEncoder,
    G_f: Optional[Mapping[str, TextPrototypes]],
    checkpoint: PromptCheckpoint,
    cfg: EvalConfig,
    preprocessor: Optional[Preprocessor] = None,
    prompts: Optional[PromptConfig] = None,
    on_progress: Optional[ProgressFn] = None,
    sink: Optional[ResultSink] = None,
) -> EvalReport:
    """G_f=None builds the fixed prototypes from the manifest's categories and domain."""
    service = EvaluationService(encoder)
    pre = preprocessor or Preprocessor.from_backbone(encoder.config)
    protos = G_f if G_f is not None else service.detection_prototypes(manifest, cfg, prompts)
    return service.evaluate(manifest, pre, protos, checkpoint, cfg, on_progress=on_progress, sink=sink)

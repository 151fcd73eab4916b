from __future__ import annotations

import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.utils.data import DataLoader, Dataset

from zsad.config import settings
from zsad.core.dto import Sample
from zsad.core.errors import DataError, NumericError
from zsad.core.models import (
    LearnablePromptState,
    LossMode,
    TextPrototypes,
    TrainConfig,
    TrainLogEntry,
)
from zsad.ports.encoder_port import VisionLanguageEncoder
from zsad.services.prompt_service import build_localization_prototypes
from zsad.services.scoring_service import class_likelihood, patch_probability_maps, upsample_tensor

ProgressFn = Callable[[str, Dict[str, object]], None]


# -------------------------
# Loss terms
# -------------------------

def focal_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> torch.Tensor:
    """
    pred: (2, H, W) or (B, 2, H, W) probabilities (normal, anomalous); target: (H, W) or (B, H, W) in {0, 1}.
    Mean over pixels of -alpha_t (1 - p_t)^gamma log(p_t); p_t is clamped at 1e-7.
    """
    if pred.shape[-3] != 2 or pred.shape[:-3] + pred.shape[-2:] != target.shape:
        raise DataError(f"prediction {tuple(pred.shape)} does not match target {tuple(target.shape)}")
    positive = target.to(pred.dtype) > 0.5
    p_t = torch.where(positive, pred[..., 1, :, :], pred[..., 0, :, :])
    alpha_t = torch.where(positive, torch.full_like(p_t, alpha), torch.full_like(p_t, 1.0 - alpha))
    log_p = torch.log(p_t.clamp(min=settings.PROBABILITY_CLAMP))
    return (-alpha_t * (1.0 - p_t) ** gamma * log_p).mean()


def dice_loss(pred_anomaly: torch.Tensor, target: torch.Tensor, epsilon: float = 1.0) -> torch.Tensor:
    """1 - (2 Σ p·t + ε) / (Σ p + Σ t + ε), per sample, averaged over the batch."""
    if pred_anomaly.shape != target.shape:
        raise DataError(f"prediction {tuple(pred_anomaly.shape)} does not match target {tuple(target.shape)}")
    p = pred_anomaly.reshape(-1, *pred_anomaly.shape[-2:])
    t = target.to(pred_anomaly.dtype).reshape(p.shape)
    inter = (p * t).sum(dim=(-2, -1))
    denom = p.sum(dim=(-2, -1)) + t.sum(dim=(-2, -1))
    return (1.0 - (2.0 * inter + epsilon) / (denom + epsilon)).mean()


def global_ce_loss(
    g_s: torch.Tensor,
    prototypes: TextPrototypes,
    tau: float,
    labels: torch.Tensor,
) -> torch.Tensor:
    """Cross-entropy of the two-way likelihood of the spatial token against the image label."""
    p_n, p_a = class_likelihood(g_s, prototypes, tau)
    y = torch.as_tensor(labels, device=p_a.device).reshape(p_a.shape) > 0
    p_y = torch.where(y, p_a, p_n)
    return -torch.log(p_y.clamp(min=settings.PROBABILITY_CLAMP)).mean()


# -------------------------
# Trainer
# -------------------------

class TrainingService:
    """
    Learns the localization prompt tokens T_n, T_a against a frozen encoder.

    - Updates: Adam on T_n, T_a only
    - Objective: focal + dice on upsampled maps (local), CE on the spatial token (global), or both
    - Local mode reads masks only; global mode reads labels only
    """

    def __init__(self, encoder: VisionLanguageEncoder, device: Optional[str] = None) -> None:
        self.encoder = encoder
        self.device = torch.device(device or settings.ZSAD_DEVICE)

    def train(
        self,
        dataset: Dataset,
        state: LearnablePromptState,
        cfg: TrainConfig,
        on_progress: Optional[ProgressFn] = None,
    ) -> Tuple[LearnablePromptState, List[TrainLogEntry]]:

        def _emit(event: str, data: Dict[str, object]) -> None:
            if on_progress is None:
                return
            try:
                on_progress(event, data)
            except Exception:
                # Progress is best-effort; training must not fail on UI issues.
                return

        n_samples = len(dataset)
        if n_samples == 0:
            raise DataError("training split is empty")

        tau = self.encoder.config.temperature
        mode = LossMode(cfg.loss_mode)
        use_local = mode in (LossMode.LOCAL, LossMode.BOTH)
        use_global = mode in (LossMode.GLOBAL, LossMode.BOTH)

        T_n = nn.Parameter(state.T_n.detach().clone().to(self.device))
        T_a = nn.Parameter(state.T_a.detach().clone().to(self.device))
        optimizer = torch.optim.Adam([T_n, T_a], lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))

        gen = torch.Generator().manual_seed(int(cfg.seed))
        loader = DataLoader(
            dataset,
            batch_size=cfg.batch_size,
            shuffle=cfg.shuffle,
            generator=gen,
            num_workers=cfg.num_workers,
            collate_fn=list,
        )

        _emit(
            "start",
            {
                "samples": n_samples,
                "epochs": cfg.epochs,
                "batch_size": cfg.batch_size,
                "loss_mode": mode.value,
                "n_tokens": state.n_tokens,
            },
        )

        log: List[TrainLogEntry] = []
        step = 0
        t0 = time.perf_counter()
        for epoch in range(1, int(cfg.epochs) + 1):
            epoch_totals: List[float] = []
            for batch in loader:
                step += 1
                G_l = build_localization_prototypes(
                    LearnablePromptState(T_n=T_n, T_a=T_a, seed=state.seed), self.encoder
                )
                terms = self._batch_terms(batch, G_l, tau, cfg, use_local, use_global)

                total = terms["total"]
                entry = TrainLogEntry(
                    epoch=epoch,
                    step=step,
                    focal=_item(terms.get("focal")),
                    dice=_item(terms.get("dice")),
                    global_ce=_item(terms.get("global_ce")),
                    total=float(total.detach()),
                    wall_time=time.perf_counter() - t0,
                )
                log.append(entry)

                if not math.isfinite(entry.total):
                    message = (
                        f"non-finite loss at epoch {epoch} step {step}: "
                        f"focal={entry.focal} dice={entry.dice} global_ce={entry.global_ce}"
                    )
                    _emit("error", {"message": message, "entry": entry})
                    raise NumericError(message, log=log)

                optimizer.zero_grad(set_to_none=True)
                total.backward()
                optimizer.step()

                epoch_totals.append(entry.total)
                _emit("step", {"epoch": epoch, "step": step, "total": entry.total})

            _emit(
                "epoch_done",
                {"epoch": epoch, "steps": len(epoch_totals), "mean_total": sum(epoch_totals) / max(len(epoch_totals), 1)},
            )

        trained = LearnablePromptState(
            T_n=T_n.detach().cpu().clone(),
            T_a=T_a.detach().cpu().clone(),
            seed=state.seed,
            version=state.version,
        )
        _emit("done", {"steps": step, "epochs": cfg.epochs, "wall_time": time.perf_counter() - t0})
        return trained, log

    def _batch_terms(
        self,
        batch: Sequence[Sample],
        G_l: TextPrototypes,
        tau: float,
        cfg: TrainConfig,
        use_local: bool,
        use_global: bool,
    ) -> Dict[str, torch.Tensor]:
        images = torch.stack([s.image for s in batch]).to(self.device)
        # encoded once; features are reused by every active term
        with torch.no_grad():
            feats = self.encoder.encode_batch(images)

        terms: Dict[str, torch.Tensor] = {}
        total = torch.zeros((), device=self.device)

        if use_local:
            missing = [s.id for s in batch if s.mask is None]
            if missing:
                raise DataError(f"local loss needs masks; missing for sample(s): {', '.join(missing)}")
            masks = torch.stack([s.mask for s in batch]).to(self.device)
            maps = patch_probability_maps(feats, G_l, tau)
            maps = upsample_tensor(maps, tuple(masks.shape[-2:]))
            masks = masks.to(maps.dtype)
            terms["focal"] = focal_loss(maps, masks, cfg.focal_gamma, cfg.focal_alpha)
            terms["dice"] = dice_loss(maps[:, 1], masks, cfg.dice_epsilon)
            total = total + cfg.local_weight * (terms["focal"] + terms["dice"])

        if use_global:
            missing = [s.id for s in batch if s.label is None]
            if missing:
                raise DataError(f"global loss needs image labels; missing for sample(s): {', '.join(missing)}")
            labels = torch.tensor([int(s.label) for s in batch], device=self.device)
            terms["global_ce"] = global_ce_loss(feats.spatial_token, G_l, tau, labels)
            total = total + cfg.global_weight * terms["global_ce"]

        terms["total"] = total
        return terms


def _item(t: Optional[torch.Tensor]) -> Optional[float]:
    return None if t is None else float(t.detach())


def train_localization_prompts(
    dataset: Dataset,
    encoder: VisionLanguageEncoder,
    state: LearnablePromptState,
    cfg: TrainConfig,
    on_progress: Optional[ProgressFn] = None,
) -> Tuple[LearnablePromptState, List[TrainLogEntry]]:
    return TrainingService(encoder).train(dataset, state, cfg, on_progress=on_progress)

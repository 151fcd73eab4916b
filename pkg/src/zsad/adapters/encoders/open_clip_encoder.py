from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Dict, List

import torch
import torch.nn.functional as F
from torch import nn

from zsad.core.errors import AssetError, InputError, ParameterError
from zsad.core.models import BackboneConfig, TextEmbedding, TokenEmbeddingSequence, VisualFeatures
from zsad.ports.encoder_port import VisionLanguageEncoder


class OpenClipEncoder(VisionLanguageEncoder, nn.Module):
    """
    Real-backbone adapter over an open_clip model loaded from a local weights file.

    g_o is the pooled image embedding; g_s is the mean of the projected final-block
    patch tokens. Intermediate blocks are read with forward hooks and pushed through
    the same ln_post + projection as the final block.
    """

    def __init__(self, config: BackboneConfig, device: str = "cpu") -> None:
        nn.Module.__init__(self)
        if not config.model_arch:
            raise AssetError(
                f"backbone {config.name!r} has no open_clip architecture; set backbone.model_arch"
            )
        weights = Path(config.weights_path) if config.weights_path else None
        if weights is None or not weights.is_file():
            raise AssetError(
                f"backbone weights not found: {config.weights_path!r} "
                "(set backbone.weights_path or ZSAD_WEIGHTS_PATH)"
            )
        try:
            import open_clip
        except ImportError as exc:
            raise AssetError(
                "open_clip_torch is required for real backbones (pip install 'zsad-toolkit[backbone]')"
            ) from exc

        model = open_clip.create_model(
            config.model_arch,
            pretrained=str(weights),
            device=device,
            force_image_size=config.input_resolution,
        )
        model.eval()
        model.requires_grad_(False)
        self.model = model
        self.tokenizer = open_clip.get_tokenizer(config.model_arch)
        self._device = torch.device(device)

        grid = getattr(model.visual, "grid_size", None)
        if grid is not None and tuple(grid) != (config.grid_size, config.grid_size):
            raise ParameterError(
                f"backbone {config.name!r} builds a {tuple(grid)} patch grid, config expects "
                f"{config.grid_size}x{config.grid_size}; check patch_size and input_resolution"
            )

        n_blocks = len(model.visual.transformer.resblocks)
        self._config = dataclasses.replace(
            config,
            num_layers=n_blocks,
            text_token_dim=int(model.token_embedding.embedding_dim),
            context_length=int(model.context_length),
        )

    @property
    def config(self) -> BackboneConfig:
        return self._config

    # ---------- vision ----------

    def _project_patches(self, hidden: torch.Tensor, n_patches: int) -> torch.Tensor:
        visual = self.model.visual
        if not getattr(visual.transformer, "batch_first", True):
            hidden = hidden.permute(1, 0, 2)
        tokens = visual.ln_post(hidden[:, -n_patches:, :])
        if visual.proj is not None:
            tokens = tokens @ visual.proj
        return tokens

    def encode_batch(self, images: torch.Tensor) -> VisualFeatures:
        self.check_image_shape(images, batched=True)
        g = self._config.grid_size
        blocks = self.model.visual.transformer.resblocks
        captured: Dict[int, torch.Tensor] = {}
        handles = []

        def _hook(idx: int):
            def fn(module, inputs, output):
                captured[idx] = output[0] if isinstance(output, tuple) else output
            return fn

        wanted = sorted(set(self._config.patch_layers) | {self._config.num_layers})
        for idx in wanted:
            handles.append(blocks[idx - 1].register_forward_hook(_hook(idx)))
        try:
            with torch.no_grad():
                pooled = self.model.encode_image(images.to(self._device))
                maps = [self._project_patches(captured[i], g * g) for i in self._config.patch_layers]
                final = self._project_patches(captured[self._config.num_layers], g * g)
        finally:
            for h in handles:
                h.remove()

        return VisualFeatures(
            patch_features=torch.stack(maps).mean(dim=0).float(),
            object_token=pooled.float(),
            spatial_token=final.mean(dim=1).float(),
            grid_shape=(g, g),
        )

    # ---------- text ----------

    def _special_ids(self) -> List[int]:
        sot = getattr(self.tokenizer, "sot_token_id", None)
        eot = getattr(self.tokenizer, "eot_token_id", None)
        if sot is None or eot is None:
            empty_ids = self.tokenizer([""])[0]
            sot, eot = int(empty_ids[0]), int(empty_ids[1])
        return [int(sot), int(eot)]

    def lookup_word_embedding(self, word: str) -> torch.Tensor:
        ids = self.tokenizer([word])[0]
        ids = ids[ids != 0][1:-1]      # strip start/end markers and padding
        if ids.numel() == 0:
            raise InputError(f"word {word!r} produced no tokens")
        table = self.model.token_embedding.weight
        return table[ids.to(table.device)].detach().clone()

    def encode_text(self, prompt: str) -> TextEmbedding:
        self.check_prompt(prompt)
        ids = self.tokenizer([prompt]).to(self._device)
        with torch.no_grad():
            vec = self.model.encode_text(ids)[0]
        return TextEmbedding(vector=F.normalize(vec.float(), dim=-1), normalized=True)

    def encode_token_sequence(self, tokens: TokenEmbeddingSequence) -> TextEmbedding:
        ctx = self._config.context_length
        self.check_token_sequence(tokens, ctx - 2)
        model = self.model
        n = tokens.length
        sot, eot = self._special_ids()

        ids = torch.zeros(ctx, dtype=torch.long, device=self._device)
        ids[0] = sot
        ids[n + 1] = eot
        base = model.token_embedding(ids)
        rows = tokens.tokens.to(device=base.device, dtype=base.dtype)
        x = torch.cat([base[:1], rows, base[n + 1:]], dim=0).unsqueeze(0)
        x = x + model.positional_embedding.to(x.dtype)
        if getattr(model.transformer, "batch_first", True):
            x = model.transformer(x, attn_mask=model.attn_mask)
        else:
            x = model.transformer(x.permute(1, 0, 2), attn_mask=model.attn_mask).permute(1, 0, 2)
        x = model.ln_final(x)
        pooled = x[0, n + 1]
        proj = model.text_projection
        if isinstance(proj, nn.Linear):
            pooled = proj(pooled)
        elif proj is not None:
            pooled = pooled @ proj
        return TextEmbedding(vector=F.normalize(pooled.float(), dim=-1), normalized=True)

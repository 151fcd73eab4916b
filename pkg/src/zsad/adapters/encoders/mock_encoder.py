from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from typing import List

import torch
import torch.nn.functional as F
from torch import nn

from zsad.core.constants import PROMPT_INIT_STD
from zsad.core.models import (
    BackboneConfig,
    Provenance,
    TextEmbedding,
    TokenEmbeddingSequence,
    VisualFeatures,
)
from zsad.ports.encoder_port import VisionLanguageEncoder

_WORD_RE = re.compile(r"[a-z0-9]+")


@lru_cache(maxsize=4096)
def _hashed_row(seed: int, token: str, dim: int) -> torch.Tensor:
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    gen = torch.Generator().manual_seed(int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF)
    return torch.randn(dim, generator=gen) * PROMPT_INIT_STD


class MockEncoder(VisionLanguageEncoder, nn.Module):
    """
    Deterministic CPU backbone for tests and desk-scale runs.

    Vision: every block is a fixed seeded linear map of each flattened patch to D;
    selected blocks are averaged, g_s is the mean patch feature and g_o projects the
    mean patch through a separate map. Text: words hash into a seeded embedding table,
    rows are mean-pooled, projected to D and normalized.
    """

    def __init__(self, config: BackboneConfig, seed: int = 0) -> None:
        nn.Module.__init__(self)
        self._config = config
        self._seed = int(seed)
        channels = len(config.normalization_mean)
        patch_dim = channels * config.patch_size * config.patch_size

        gen = torch.Generator().manual_seed(self._seed)
        self.register_buffer(
            "block_proj",
            torch.randn(config.num_layers, patch_dim, config.embed_dim, generator=gen) / patch_dim ** 0.5,
        )
        self.register_buffer(
            "object_proj",
            torch.randn(patch_dim, config.embed_dim, generator=gen) / patch_dim ** 0.5,
        )
        self.register_buffer(
            "text_proj",
            torch.randn(config.text_token_dim, config.embed_dim, generator=gen) / config.text_token_dim ** 0.5,
        )
        self.requires_grad_(False)

    @property
    def config(self) -> BackboneConfig:
        return self._config

    # ---------- vision ----------

    def _patchify(self, images: torch.Tensor) -> torch.Tensor:
        p = self._config.patch_size
        cols = F.unfold(images, kernel_size=p, stride=p)     # (B, C*p*p, N)
        return cols.transpose(1, 2)                          # (B, N, C*p*p)

    def encode_batch(self, images: torch.Tensor) -> VisualFeatures:
        self.check_image_shape(images, batched=True)
        with torch.no_grad():
            patches = self._patchify(images.to(self.block_proj.dtype))
            layer_maps = [patches @ self.block_proj[idx - 1] for idx in self._config.patch_layers]
            patch_features = torch.stack(layer_maps).mean(dim=0)
            spatial = patch_features.mean(dim=1)
            obj = patches.mean(dim=1) @ self.object_proj
        g = self._config.grid_size
        return VisualFeatures(
            patch_features=patch_features,
            object_token=obj,
            spatial_token=spatial,
            grid_shape=(g, g),
        )

    # ---------- text ----------

    @staticmethod
    def _words(text: str) -> List[str]:
        return _WORD_RE.findall(text.lower())

    def lookup_word_embedding(self, word: str) -> torch.Tensor:
        tokens = self._words(word) or [word]
        rows = [_hashed_row(self._seed, t, self._config.text_token_dim) for t in tokens]
        return torch.stack(rows).clone()

    def encode_text(self, prompt: str) -> TextEmbedding:
        self.check_prompt(prompt)
        rows = torch.cat([self.lookup_word_embedding(w) for w in self._words(prompt) or [prompt.strip()]])
        seq = TokenEmbeddingSequence(tokens=rows, provenance=(Provenance.WORD,) * rows.shape[0])
        return self.encode_token_sequence(seq)

    def encode_token_sequence(self, tokens: TokenEmbeddingSequence) -> TextEmbedding:
        self.check_token_sequence(tokens, self._config.context_length)
        rows = tokens.tokens
        pooled = rows.mean(dim=0)
        vec = pooled @ self.text_proj.to(rows.dtype)
        return TextEmbedding(vector=F.normalize(vec, dim=-1), normalized=True)

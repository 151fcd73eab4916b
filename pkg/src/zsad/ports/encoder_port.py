from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Sequence

import torch

from zsad.core.errors import InputError
from zsad.core.models import BackboneConfig, TextEmbedding, TokenEmbeddingSequence, VisualFeatures


class VisionLanguageEncoder(ABC):
    """
    Abstract contract for a frozen vision-language backbone.

    Vision side: dense patch features and two global tokens (object, spatial).
    Text side: prompts either as strings or as raw token-embedding rows, which is
    how learnable prompt tokens reach the text encoder.
    """

    @property
    @abstractmethod
    def config(self) -> BackboneConfig:
        raise NotImplementedError

    # --- vision ---

    @abstractmethod
    def encode_batch(self, images: torch.Tensor) -> VisualFeatures:
        """Encode a (B, C, H, W) batch; returned tensors carry the batch dimension."""
        raise NotImplementedError

    def encode_image(self, image: torch.Tensor) -> VisualFeatures:
        self.check_image_shape(image, batched=False)
        return self.encode_batch(image.unsqueeze(0)).select(0)

    # --- text ---

    @abstractmethod
    def encode_text(self, prompt: str) -> TextEmbedding:
        raise NotImplementedError

    @abstractmethod
    def encode_token_sequence(self, tokens: TokenEmbeddingSequence) -> TextEmbedding:
        raise NotImplementedError

    @abstractmethod
    def lookup_word_embedding(self, word: str) -> torch.Tensor:
        """Rows (k, D_t) of the token-embedding table for `word`."""
        raise NotImplementedError

    def encode_texts(self, prompts: Sequence[str]) -> torch.Tensor:
        return torch.stack([self.encode_text(p).vector for p in prompts])

    # --- shared checks ---

    def check_image_shape(self, images: torch.Tensor, batched: bool = True) -> None:
        res = self.config.input_resolution
        expected_dims = 4 if batched else 3
        if images.dim() != expected_dims or tuple(images.shape[-2:]) != (res, res):
            raise InputError(
                f"expected {'(B, C, H, W)' if batched else '(C, H, W)'} input at {res}x{res}, "
                f"got shape {tuple(images.shape)}"
            )
        if not torch.isfinite(images).all():
            raise InputError("image contains non-finite values")

    def check_prompt(self, prompt: str) -> None:
        if not isinstance(prompt, str) or not prompt.strip():
            raise InputError("prompt must be a non-empty string")

    def check_token_sequence(self, tokens: TokenEmbeddingSequence, max_length: int) -> None:
        if tokens.length > max_length:
            raise InputError(
                f"token sequence of length {tokens.length} exceeds context limit {max_length}"
            )
        if tokens.tokens.shape[1] != self.config.text_token_dim:
            raise InputError(
                f"token rows have width {tokens.tokens.shape[1]}, expected {self.config.text_token_dim}"
            )
        if not torch.isfinite(tokens.tokens).all():
            raise InputError("token sequence contains non-finite rows")

from __future__ import annotations

from typing import Optional

from zsad.adapters.encoders.mock_encoder import MockEncoder
from zsad.config import settings
from zsad.core.constants import BACKBONE_VARIANTS, MOCK_BACKBONE
from zsad.core.errors import AssetError
from zsad.core.models import BackboneConfig
from zsad.ports.encoder_port import VisionLanguageEncoder


def build_encoder(config: BackboneConfig, device: Optional[str] = None) -> VisionLanguageEncoder:
    if config.name == MOCK_BACKBONE:
        return MockEncoder(config, seed=settings.MOCK_ENCODER_SEED)

    family = BACKBONE_VARIANTS.get(config.name, (None, None, None))[2]
    if family == "tips" and not config.model_arch:
        raise AssetError(
            f"backbone {config.name!r}: no TIPS adapter ships with zsad; the TIPS rows are "
            "size metadata only. Use a clip-* preset or set backbone.model_arch to an open_clip architecture"
        )

    # imported lazily: open_clip is an optional extra
    from zsad.adapters.encoders.open_clip_encoder import OpenClipEncoder

    return OpenClipEncoder(config, device=device or settings.ZSAD_DEVICE)

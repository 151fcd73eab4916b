from zsad.adapters.encoders.factory import build_encoder
from zsad.adapters.encoders.mock_encoder import MockEncoder

__all__ = ["build_encoder", "MockEncoder"]

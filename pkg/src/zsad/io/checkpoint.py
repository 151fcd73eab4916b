from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from zsad.config import settings
from zsad.core.errors import AssetError, ValidationError
from zsad.core.models import LearnablePromptState

# magic (8 bytes) | header length (<u4) | JSON header | little-endian float32 payload
_LEN = struct.Struct("<I")
_DTYPE = "<f4"


@dataclass(frozen=True)
class PromptCheckpoint:
    state: LearnablePromptState
    meta: Dict[str, Any] = field(default_factory=dict)


def _encode(state: LearnablePromptState, meta: Dict[str, Any]) -> bytes:
    arrays = {
        "T_n": state.T_n.detach().cpu().numpy().astype(_DTYPE),
        "T_a": state.T_a.detach().cpu().numpy().astype(_DTYPE),
    }
    index: Dict[str, Any] = {}
    payload = bytearray()
    for name, arr in arrays.items():
        index[name] = {"dtype": _DTYPE, "shape": list(arr.shape), "offset": len(payload), "nbytes": arr.nbytes}
        payload += arr.tobytes(order="C")

    header = {
        "version": settings.CHECKPOINT_VERSION,
        "E": state.n_tokens,
        "D_t": state.token_dim,
        "seed": int(state.seed),
        "arrays": index,
        "meta": meta,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return settings.CHECKPOINT_MAGIC + _LEN.pack(len(raw)) + raw + bytes(payload)


def save_checkpoint(
    state: LearnablePromptState,
    out_path: str | Path,
    meta: Optional[Dict[str, Any]] = None,
) -> str:
    p = Path(out_path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(_encode(state, dict(meta or {})))
    return str(p)


def _decode(blob: bytes, source: str, expected_token_dim: Optional[int]) -> PromptCheckpoint:
    magic = settings.CHECKPOINT_MAGIC
    if not blob.startswith(magic) or len(blob) < len(magic) + _LEN.size:
        raise ValidationError(["not a prompt checkpoint (bad magic)"], subject=f"checkpoint {source}")
    (hlen,) = _LEN.unpack_from(blob, len(magic))
    start = len(magic) + _LEN.size
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError([f"unreadable header: {exc}"], subject=f"checkpoint {source}") from exc
    data = blob[start + hlen:]

    issues: List[str] = []
    if header.get("version") != settings.CHECKPOINT_VERSION:
        issues.append(f"version {header.get('version')!r} is not supported (expected {settings.CHECKPOINT_VERSION})")
    e, d_t = header.get("E"), header.get("D_t")
    if expected_token_dim is not None and d_t != expected_token_dim:
        issues.append(f"D_t {d_t} does not match the encoder token width {expected_token_dim}")

    tensors: Dict[str, torch.Tensor] = {}
    for name in ("T_n", "T_a"):
        desc = (header.get("arrays") or {}).get(name)
        if desc is None:
            issues.append(f"array {name} missing")
            continue
        shape = tuple(desc.get("shape", ()))
        if shape != (e, d_t):
            issues.append(f"array {name} has shape {shape}, header says ({e}, {d_t})")
            continue
        if desc.get("dtype") != _DTYPE:
            issues.append(f"array {name} has dtype {desc.get('dtype')!r}, expected {_DTYPE!r}")
            continue
        offset, nbytes = int(desc.get("offset", -1)), int(np.prod(shape)) * 4
        if offset < 0 or offset + nbytes > len(data):
            issues.append(f"array {name} runs past the end of the file")
            continue
        arr = np.frombuffer(data, dtype=_DTYPE, count=int(np.prod(shape)), offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))

    if issues:
        raise ValidationError(issues, subject=f"checkpoint {source}")

    state = LearnablePromptState(
        T_n=tensors["T_n"],
        T_a=tensors["T_a"],
        seed=int(header.get("seed", 0)),
        version=int(header["version"]),
    )
    return PromptCheckpoint(state=state, meta=dict(header.get("meta") or {}))


def load_checkpoint(path: str | Path, expected_token_dim: Optional[int] = None) -> PromptCheckpoint:
    p = Path(path)
    if not p.is_file():
        raise AssetError(f"checkpoint not found: {p}")
    return _decode(p.read_bytes(), str(p), expected_token_dim)

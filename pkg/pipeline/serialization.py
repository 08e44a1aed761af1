"""Versioned flat parameter dump (``model.bin``).

Layout, little-endian::

    b"GAMD" | uint16 version | 32-byte config hash
    | uint32 length + UTF-8 RunConfig JSON
    | uint32 block count
    | per block: uint16 name length, name, uint8 ndim, uint32 extents, float32 values
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from pydantic import ValidationError

from config.run_config import canonical_json, config_hash_bytes
from models.config_schemas import RunConfig
from pipeline.model import GamedModel
from utils.errors import ModelFormatError

logger = logging.getLogger(__name__)

MAGIC = b"GAMD"
FORMAT_VERSION = 1


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise ModelFormatError(f"{self.path}: file is truncated")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def dump_model(model: GamedModel) -> bytes:
    """Serialise the configuration and every named parameter."""
    cfg_json = canonical_json(model.cfg).encode("utf-8")
    params = model.named_parameters()
    parts = [
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        config_hash_bytes(model.cfg),
        struct.pack("<I", len(cfg_json)),
        cfg_json,
        struct.pack("<I", len(params)),
    ]
    for name, param in params.items():
        encoded = name.encode("utf-8")
        values = np.ascontiguousarray(param.values, dtype="<f4")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", values.ndim))
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(values.tobytes())
    return b"".join(parts)


def save_model(model: GamedModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_model(model))
    logger.info(f"saved model to {path}")
    return path


def parse_model(payload: bytes, path: str = "<bytes>") -> Tuple[RunConfig, Dict[str, np.ndarray]]:
    """Decode a dump into its configuration and parameter arrays."""
    reader = _Reader(payload, path)
    magic = reader.take(len(MAGIC))
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: model format version {version} is not supported (expected version {FORMAT_VERSION})"
        )
    stored_hash = reader.take(32)
    (cfg_length,) = reader.unpack("<I")
    try:
        cfg = RunConfig.model_validate(json.loads(reader.take(cfg_length).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as exc:
        raise ModelFormatError(f"{path}: stored configuration is unreadable ({exc})") from exc
    if config_hash_bytes(cfg) != stored_hash:
        raise ModelFormatError(f"{path}: config hash does not match the stored configuration")

    (count,) = reader.unpack("<I")
    state: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        state[name] = values.astype(np.float32)
    if reader.offset != len(payload):
        raise ModelFormatError(f"{path}: {len(payload) - reader.offset} trailing bytes")
    return cfg, state


def load_model(path) -> GamedModel:
    """Rebuild a model from ``model.bin``; the reload is bit-exact."""
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    cfg, state = parse_model(path.read_bytes(), str(path))
    model = GamedModel(cfg)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"{path}: parameters do not match the configuration ({exc})") from exc
    logger.debug(f"loaded model from {path} ({len(state)} parameter blocks)")
    return model

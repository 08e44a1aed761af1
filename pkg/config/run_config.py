"""Run configuration: TOML file, ``--set`` overrides and environment settings."""

import hashlib
import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from models.config_schemas import GenSpec, RunConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

HASHED_SECTIONS = {"encoder", "model", "ablation", "veto"}


def load_env() -> Tuple[str, Optional[str]]:
    """Load ``.env`` and return the log level and optional log file."""
    load_dotenv()
    return os.getenv("GAMED_LOG_LEVEL", "INFO"), os.getenv("GAMED_LOG_FILE") or None


def read_toml(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_value(key: str, raw: str) -> Any:
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        pass
    if key.endswith("module_subset"):
        return [part for part in raw.split("+") if part]
    return raw


def apply_override(data: Dict[str, Any], assignment: str) -> None:
    """Apply one ``section.key=value`` assignment to a nested config dict."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    key, raw = (part.strip() for part in assignment.split("=", 1))
    if not key:
        raise ConfigError(f"override '{assignment}' has an empty key")
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override '{key}': '{part}' is not a section")
        node = child
    node[parts[-1]] = _parse_value(key, raw)


def validation_message(exc: ValidationError) -> str:
    """Compact message naming each offending dotted key."""
    problems = []
    for error in exc.errors():
        key = ".".join(str(part) for part in error["loc"]) or "config"
        problems.append(f"{key}: {error['msg']}")
    return "; ".join(problems)


def build_model(schema: type, data: Dict[str, Any]) -> BaseModel:
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {validation_message(exc)}") from exc


def load_run_config(path=None, overrides: Iterable[str] = (), seed: Optional[int] = None,
                    out: Optional[str] = None) -> RunConfig:
    """Build a validated ``RunConfig``.

    Args:
        path: Optional TOML file with ``[encoder]``, ``[model]``, ``[data]``,
            ``[train]``, ``[ablation]`` and ``[veto]`` tables
        overrides: ``section.key=value`` assignments applied after the file
        seed: Seed flag; wins over the file
        out: Output directory flag; wins over the file

    Returns:
        The validated configuration
    """
    data: Dict[str, Any] = read_toml(path) if path else {}
    for assignment in overrides:
        apply_override(data, assignment)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = str(out)
    cfg = build_model(RunConfig, data)
    logger.debug(f"loaded run config (hash {config_hash(cfg)[:12]})")
    return cfg


def load_gen_spec(path=None, seed: Optional[int] = None, overrides: Iterable[str] = ()) -> GenSpec:
    """GenSpec from an optional TOML file holding a ``[data]`` table or top-level keys.

    Overrides may name keys bare (``n_train=5``) or under ``data.``.
    """
    raw = read_toml(path) if path else {}
    data = dict(raw.get("data", raw))
    for assignment in overrides:
        apply_override(data, assignment.strip().removeprefix("data."))
    if seed is not None:
        data["seed"] = seed
    return build_model(GenSpec, data)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash_bytes(cfg: RunConfig) -> bytes:
    """SHA-256 over the canonical JSON of the model-relevant sections."""
    relevant = cfg.model_dump(mode="json", include=HASHED_SECTIONS)
    return hashlib.sha256(json.dumps(relevant, sort_keys=True, separators=(",", ":")).encode()).digest()


def config_hash(cfg: RunConfig) -> str:
    return config_hash_bytes(cfg).hex()

"""Run-configuration loading."""
from .run_config import (
    apply_override,
    canonical_json,
    config_hash,
    config_hash_bytes,
    load_env,
    load_gen_spec,
    load_run_config,
)

__all__ = [
    "apply_override",
    "canonical_json",
    "config_hash",
    "config_hash_bytes",
    "load_env",
    "load_gen_spec",
    "load_run_config",
]

"""Shared fixtures: micro configurations and tiny generated datasets."""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from data.synthdata import generate  # noqa: E402
from models.config_schemas import GenSpec, RunConfig  # noqa: E402

MICRO_ENCODER = {
    "d": 8,
    "text_len": 8,
    "image_tokens": 4,
    "vocab_size": 32,
    "grid": 8,
    "kernel_size": 3,
    "pattern_channels": 2,
    "d_ip": 4,
}
MICRO_DATA = {
    "n_train": 48,
    "n_val": 16,
    "n_test": 16,
    "vocab_size": 32,
    "grid": 8,
    "text_len": 8,
    "min_text_len": 6,
    "n_topics": 2,
}


def micro_config(**sections) -> RunConfig:
    """RunConfig with d=8 and 8x8 images; keyword arguments update whole sections."""
    data = {
        "encoder": dict(MICRO_ENCODER),
        "model": {"n_experts": 2},
        "data": dict(MICRO_DATA),
        "train": {"epochs": 1, "batch_size": 16, "lr": 1e-3},
    }
    for section, values in sections.items():
        if isinstance(values, dict):
            data.setdefault(section, {}).update(values)
        else:
            data[section] = values
    return RunConfig.model_validate(data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_config():
    return micro_config


@pytest.fixture
def micro_cfg() -> RunConfig:
    return micro_config()


@pytest.fixture(scope="session")
def tiny_splits():
    """Train/val/test records generated with the micro data settings."""
    return generate(GenSpec(**MICRO_DATA))


JSON_TYPES = {
    "string": str,
    "integer": int,
    "number": (int, float),
    "boolean": bool,
    "object": dict,
    "array": list,
    "null": type(None),
}


def _resolve(schema: dict, root: dict) -> dict:
    while True:
        if "$ref" in schema:
            schema = root["$defs"][schema["$ref"].rsplit("/", 1)[-1]]
        elif len(schema.get("allOf", [])) == 1:
            schema = schema["allOf"][0]
        else:
            return schema


def _type_matches(value, expected: str) -> bool:
    if isinstance(value, bool) and expected != "boolean":
        return False
    return isinstance(value, JSON_TYPES[expected])


def schema_violations(value, schema: dict, root: dict = None, path: str = "$") -> list:
    """Places where a decoded JSON value breaks a schema's types, enums, bounds or required keys.

    Covers the subset the shipped and generated report schemas use: ``$ref``
    into ``$defs``, ``anyOf``, ``type``, ``enum``, ``minimum``, ``maximum``,
    ``required``, ``properties``, ``additionalProperties`` and ``items``.
    """
    root = root or schema
    schema = _resolve(schema, root)
    if "anyOf" in schema:
        if any(not schema_violations(value, option, root, path) for option in schema["anyOf"]):
            return []
        return [f"{path}: {value!r} matches no alternative"]

    expected = schema.get("type")
    if expected is not None and not _type_matches(value, expected):
        return [f"{path}: expected {expected}, got {type(value).__name__}"]
    problems = []
    if "enum" in schema and value not in schema["enum"]:
        problems.append(f"{path}: {value!r} not in {schema['enum']}")
    if "minimum" in schema and value < schema["minimum"]:
        problems.append(f"{path}: {value} below {schema['minimum']}")
    if "maximum" in schema and value > schema["maximum"]:
        problems.append(f"{path}: {value} above {schema['maximum']}")

    if isinstance(value, dict):
        problems += [f"{path}: missing {key}" for key in schema.get("required", []) if key not in value]
        properties = schema.get("properties", {})
        extra = schema.get("additionalProperties")
        for key, item in value.items():
            if key in properties:
                problems += schema_violations(item, properties[key], root, f"{path}.{key}")
            elif isinstance(extra, dict):
                problems += schema_violations(item, extra, root, f"{path}.{key}")
    if isinstance(value, list) and "items" in schema:
        for index, item in enumerate(value):
            problems += schema_violations(item, schema["items"], root, f"{path}[{index}]")
    return problems


def schema_types(schema: dict, root: dict) -> set:
    """JSON types a (sub)schema admits."""
    schema = _resolve(schema, root)
    if "anyOf" in schema:
        return set().union(*(schema_types(option, root) for option in schema["anyOf"]))
    if "type" in schema:
        return {schema["type"]}
    if "enum" in schema:
        return {next(name for name in ("boolean", "integer", "number", "string")
                     if _type_matches(item, name)) for item in schema["enum"]}
    return {"object"} if "properties" in schema else set()


def schema_mismatches(shipped: dict, generated: dict, shipped_root: dict = None,
                      generated_root: dict = None, path: str = "$") -> list:
    """Field-by-field differences between a hand-written schema and a model-generated one.

    Types must agree everywhere; enums and bounds the model declares must be
    repeated in the hand-written schema.
    """
    shipped_root, generated_root = shipped_root or shipped, generated_root or generated
    shipped, generated = _resolve(shipped, shipped_root), _resolve(generated, generated_root)
    problems = []
    if schema_types(shipped, shipped_root) != schema_types(generated, generated_root):
        problems.append(f"{path}: types {schema_types(shipped, shipped_root)} != "
                        f"{schema_types(generated, generated_root)}")
    if "enum" in generated and set(shipped.get("enum", [])) != set(generated["enum"]):
        problems.append(f"{path}: enum {shipped.get('enum')} != {generated['enum']}")
    for bound in ("minimum", "maximum"):
        if bound in generated and shipped.get(bound) != generated[bound]:
            problems.append(f"{path}: {bound} {shipped.get(bound)} != {generated[bound]}")

    if "properties" in generated:
        if set(shipped.get("properties", {})) != set(generated["properties"]):
            problems.append(f"{path}: properties differ")
        if set(shipped.get("required", [])) != set(generated.get("required", [])):
            problems.append(f"{path}: required keys differ")
        for key in set(shipped.get("properties", {})) & set(generated["properties"]):
            problems += schema_mismatches(shipped["properties"][key], generated["properties"][key],
                                          shipped_root, generated_root, f"{path}.{key}")
    for nested in ("items", "additionalProperties"):
        if isinstance(generated.get(nested), dict):
            if not isinstance(shipped.get(nested), dict):
                problems.append(f"{path}: missing {nested}")
            else:
                problems += schema_mismatches(shipped[nested], generated[nested],
                                              shipped_root, generated_root, f"{path}.{nested}")
    return problems

"""JSON schemas shipped with the package and validators for them."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Mapping

import jsonschema

SCHEMAS = ("record", "result", "bundle")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in SCHEMAS:
        raise ValueError(f"unknown schema {name!r}; choose from {SCHEMAS}")
    text = resources.files("beliefaudit").joinpath(f"schemas/{name}.schema.json").read_text("utf-8")
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(name: str):
    schema = load_schema(name)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def validate(name: str, obj: Mapping) -> None:
    """Raise jsonschema.ValidationError if ``obj`` does not match the named schema."""
    _validator(name).validate(obj)

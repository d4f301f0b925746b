"""JSON schemas for every document the CLI writes, and a validator."""
from __future__ import annotations

import jsonschema

from .evaluations import EVALUATION_SCHEMA

_DIALECT = "https://json-schema.org/draft/2020-12/schema"
_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}

PURE_CONTROL = {
    "type": "object",
    "required": ["breakpoints", "values"],
    "properties": {
        "breakpoints": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "values": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
    },
}

_POLICY = {
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {"properties": {"kind": {"const": "static"}, "control": {"$ref": "#/$defs/pure"}},
         "required": ["control"]},
        {"properties": {"kind": {"const": "tabulated"},
                        "states": {"type": "array", "items": {"type": "array", "items": _NUM}},
                        "controls": {"type": "array", "items": {"$ref": "#/$defs/pure"}},
                        "fallback": {"anyOf": [{"type": "null"}, {"$ref": "#/$defs/policy"}]}},
         "required": ["states", "controls"]},
        {"properties": {"kind": {"const": "concat"}, "T": _NUM,
                        "first": {"$ref": "#/$defs/policy"}, "second": {"$ref": "#/$defs/policy"}},
         "required": ["T", "first", "second"]},
    ],
}

_RANDOM = {
    "type": "object",
    "required": ["kind", "atoms"],
    "properties": {
        "kind": {"const": "random"},
        "atoms": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["weight", "policy"],
            "properties": {"weight": {"type": "number", "exclusiveMinimum": 0},
                           "policy": {"$ref": "#/$defs/policy"}}}},
    },
}

_BEHAVIOR = {
    "type": "object",
    "required": ["kind", "partition", "anchor", "composed", "blocks"],
    "properties": {
        "kind": {"const": "behavior"},
        "partition": {"type": "array", "items": _NUM},
        "anchor": {"type": "array", "items": _NUM},
        "bounds": {"type": "array"},
        "composed": {"$ref": "#/$defs/random"},
        "blocks": {"type": "array", "items": {"$ref": "#/$defs/random"}},
    },
}

_DEFS = {"pure": PURE_CONTROL, "policy": _POLICY, "random": _RANDOM, "behavior": _BEHAVIOR,
         "evaluation": EVALUATION_SCHEMA}

CONTROL_SCHEMA = {
    "$schema": _DIALECT,
    "$defs": _DEFS,
    "anyOf": [{"$ref": "#/$defs/pure"}, {"$ref": "#/$defs/random"}, {"$ref": "#/$defs/behavior"}],
}

CERTIFICATE_SCHEMA = {
    "$schema": _DIALECT,
    "$defs": _DEFS,
    "type": "object",
    "required": ["epsilon", "S0", "eta", "V_star", "slack", "passed", "entries", "dt", "sup_tv_steps",
                 "worst_regular_gap", "worst_gap", "diagnostics"],
    "properties": {
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "S0": {"type": "number", "exclusiveMinimum": 0},
        "eta": _NUM,
        "V_star": _NUM,
        "slack": {"type": "number", "minimum": 0},
        "passed": {"type": "boolean"},
        "worst_regular_gap": _NUM_OR_NULL,
        "worst_gap": _NUM_OR_NULL,
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "sup_tv_steps": {"type": "integer", "minimum": 1},
        "diagnostics": {"type": "object"},
        "entries": {"type": "array", "items": {
            "type": "object",
            "required": ["descriptor", "evaluation", "sup_tv", "regular", "payoff", "gap", "error"],
            "properties": {
                "descriptor": {"type": "string"},
                "evaluation": {"$ref": "#/$defs/evaluation"},
                "sup_tv": {"type": "number", "minimum": 0},
                "regular": {"type": "boolean"},
                "payoff": _NUM_OR_NULL,
                "gap": _NUM_OR_NULL,
                "error": {"type": ["string", "null"]},
            }}},
    },
}

VALUE_BUNDLE_SCHEMA = {
    "$schema": _DIALECT,
    "$defs": _DEFS,
    "type": "object",
    "required": ["problem", "y0", "seed", "dt", "values", "limit", "undiscounted", "weighted", "warnings"],
    "properties": {
        "problem": {"type": "object", "required": ["name", "params"]},
        "y0": {"type": "array", "items": _NUM},
        "seed": {"type": "integer"},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "optimizer": {"type": "object"},
        "values": {"type": "array", "items": {
            "type": "object", "required": ["descriptor", "evaluation", "value", "error_band", "control"],
            "properties": {"descriptor": {"type": "string"},
                           "evaluation": {"$ref": "#/$defs/evaluation"},
                           "value": _NUM,
                           "error_band": {"type": "number", "minimum": 0},
                           "control": {"$ref": "#/$defs/pure"}}}},
        "limit": {"type": "object", "required": ["estimate", "band", "ladder"],
                  "properties": {"estimate": _NUM, "band": _NUM,
                                 "ladder": {"type": "array", "items": {
                                     "type": "object", "required": ["T", "cesaro", "abel", "gap"]}}}},
        "undiscounted": _NUM,
        "weighted": {"type": "array", "items": {
            "type": "object", "required": ["rho", "beta", "value"],
            "properties": {"rho": {"type": "number", "exclusiveMinimum": 0},
                           "beta": {"type": "number", "minimum": 0, "maximum": 1}, "value": _NUM}}},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}

SIMULATION_SCHEMA = {
    "$schema": _DIALECT,
    "$defs": _DEFS,
    "type": "object",
    "required": ["problem", "y0", "dt", "horizon", "control", "payoffs"],
    "properties": {
        "problem": {"type": "object", "required": ["name", "params"]},
        "y0": {"type": "array", "items": _NUM},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "minimum": 0},
        "control": {"$ref": "#/$defs/pure"},
        "payoffs": {"type": "array", "items": {
            "type": "object", "required": ["descriptor", "evaluation", "payoff", "error_band"],
            "properties": {"descriptor": {"type": "string"}, "evaluation": {"$ref": "#/$defs/evaluation"},
                           "payoff": _NUM, "error_band": {"type": "number", "minimum": 0}}}},
    },
}

SCHEMAS = {
    "evaluation": EVALUATION_SCHEMA,
    "control": CONTROL_SCHEMA,
    "certificate": CERTIFICATE_SCHEMA,
    "value": VALUE_BUNDLE_SCHEMA,
    "simulation": SIMULATION_SCHEMA,
}


def validate(name: str, doc) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match schema ``name``."""
    schema = SCHEMAS[name]
    jsonschema.Draft202012Validator(schema).validate(doc)

"""StoryConfig JSON loading, validation and ``key=value`` overrides."""

import copy
import json
from pathlib import Path

import jsonschema

from .absvr import AbsvrParams
from .errors import ConfigurationError, NarrativeAttnError
from .grounding import GcaParams, GroundingBox, MaskStrategy, PatchGrid
from .pipeline import DEFAULT_BOXES, LayerSpec, StoryConfig, SubjectSpec, TokenSpec
from .sfc import SfcParams

_num = {"type": "number"}
_count = {"type": "integer", "minimum": 1}
_box = {
    "oneOf": [
        {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
        {
            "type": "object",
            "properties": {k: _num for k in ("x1", "y1", "x2", "y2")},
            "required": ["x1", "y1", "x2", "y2"],
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "frames": _count,
        "steps": _count,
        "layers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["grid"],
                "properties": {
                    "grid": {"type": "string", "pattern": "^[0-9]+x[0-9]+$"},
                    "d_model": _count,
                    "heads": _count,
                },
            },
        },
        "subjects": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["boxes"],
                "properties": {
                    "boxes": {"type": "array", "minItems": 1, "items": _box},
                    "ip_tokens": _count,
                    "token_indices": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
                },
            },
        },
        "tokens": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"D": _count, "per_frame": _count},
        },
        "gca": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **{k: _num for k in GcaParams.__dataclass_fields__},
                "subject_factor": {"type": "number", "minimum": 0},
                "n_dummy": _count,
            },
        },
        "absvr": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "gain_exp": {"type": "number", "minimum": 1},
                "gain_sup": {"type": "number", "minimum": 0, "maximum": 1},
                "zero_energy_epsilon": {"type": "number", "minimum": 0},
            },
        },
        "sfc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_h": {"type": ["integer", "null"], "minimum": 1},
                "delta_h": _num,
                "L_max": _count,
                "policy": {"enum": ["Fifo", "Reservoir"]},
                "alpha": {"type": "number", "minimum": 0, "maximum": 1},
                "mix_patch_threshold": {"type": "integer", "minimum": 0},
                "accumulate": {"type": "boolean"},
                "mix": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "strategy": {"enum": [s.value for s in MaskStrategy]},
    },
}


def default_config_dict():
    """The bundled scenario: two overlapping boxes, 20 frames, 30 steps."""
    return {
        "seed": 0,
        "frames": 20,
        "steps": 30,
        "layers": [
            {"grid": "64x64", "d_model": 64, "heads": 4},
            {"grid": "32x32", "d_model": 64, "heads": 4},
            {"grid": "16x16", "d_model": 64, "heads": 4},
        ],
        "subjects": [
            {"boxes": [list(DEFAULT_BOXES[0])], "ip_tokens": 4},
            {"boxes": [list(DEFAULT_BOXES[1])], "ip_tokens": 4},
        ],
        "tokens": {"D": 64, "per_frame": 4},
        "gca": {"subject_factor": 0.6, "n_dummy": 1},
        "absvr": {"tau": 0.85},
        "sfc": {"k_h": 128, "delta_h": -0.1, "L_max": 512, "policy": "Fifo", "alpha": 0.6},
        "strategy": "Gca",
    }


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, overrides):
    """Set dotted ``key=value`` paths, e.g. ``sfc.policy=Reservoir``."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value", [item])
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node, props = raw, SCHEMA["properties"]
        for k in keys[:-1]:
            if k not in props or props[k].get("type") != "object":
                raise ConfigurationError(f"unknown config section {path!r}", [path])
            props = props[k]["properties"]
            node = node.setdefault(k, {})
        if keys[-1] not in props:
            raise ConfigurationError(f"unknown config field {path!r}", [path])
        node[keys[-1]] = _parse_value(value.strip())
    return raw


def validate(raw):
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        fields = [".".join(str(p) for p in e.absolute_path) or "<root>" for e in errors]
        detail = "; ".join(f"{f}: {e.message}" for f, e in zip(fields, errors))
        raise ConfigurationError(f"config schema violation: {detail}", fields)


def config_from_dict(raw):
    validate(raw)
    d = default_config_dict()
    for key in ("tokens", "gca", "absvr", "sfc"):
        d[key] = {**d[key], **raw.get(key, {})}
    for key in ("seed", "frames", "steps", "layers", "subjects", "strategy"):
        if key in raw:
            d[key] = raw[key]
    try:
        layers = tuple(
            LayerSpec(PatchGrid.parse(l["grid"]), l.get("d_model", 64), l.get("heads", 4)) for l in d["layers"]
        )
        subjects = []
        for i, s in enumerate(d["subjects"]):
            boxes = tuple(GroundingBox.from_any(b) for b in s["boxes"])
            toks = s.get("token_indices")
            if toks is not None and any(t >= d["tokens"]["per_frame"] for t in toks):
                raise ConfigurationError("token index beyond tokens.per_frame", [f"subjects.{i}.token_indices"])
            subjects.append(SubjectSpec(boxes, s.get("ip_tokens", 4), None if toks is None else tuple(toks)))
        gca = dict(d["gca"])
        subject_factor = gca.pop("subject_factor", 0.6)
        n_dummy = gca.pop("n_dummy", 1)
        return StoryConfig(
            seed=d["seed"],
            frames=d["frames"],
            steps=d["steps"],
            layers=layers,
            subjects=tuple(subjects),
            tokens=TokenSpec(**d["tokens"]),
            gca=GcaParams(**gca),
            absvr=AbsvrParams(**d["absvr"]),
            sfc=SfcParams(**d["sfc"]),
            strategy=d["strategy"],
            subject_factor=subject_factor,
            n_dummy=n_dummy,
        )
    except ConfigurationError:
        raise
    except NarrativeAttnError as exc:
        raise ConfigurationError(str(exc), ["subjects"]) from exc


def load_config(path, overrides=None):
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: malformed JSON: {exc}", ["<file>"]) from exc
    return config_from_dict(apply_overrides(raw, overrides))

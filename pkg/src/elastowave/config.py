"""Scenario configuration: JSON schema, defaults and loading.

Every section is optional and falls back to the reference damped annulus.
Unknown keys anywhere are rejected so that a misspelt coefficient never
silently reverts to its default.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .errors import ParameterError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3}


def _section(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "elastowave scenario",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "geometry": _section({
            "kind": {"enum": ["annulus", "shell", "disk"]},
            "r_in": _POS,
            "r_out": _POS,
            "h": _POS,
            "grading": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "x0": _VEC,
            "delta": _POS,
        }),
        "material": _section({"lambda": _NUM, "alpha": _NUM}),
        "damping": _section({
            "a0": _NUM,
            "eps": _NUM,
            "profile": {"enum": ["constant", "ramp"]},
        }),
        "boundary": _section({
            "f": _NUM,
            "g": _NUM,
            "h": _NUM,
            "floors": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
        }),
        "time": _section({
            "dt": _NUM,
            "T": _NUM,
            "store_stride": {"type": "integer", "minimum": 1},
        }),
        "initial": _section({
            "center": _VEC,
            "radius": _POS,
            "amplitude": _VEC,
        }),
        "analysis": _section({
            "audit": {"type": "boolean"},
            "spectrum": {"type": "boolean"},
            "poincare": {"type": "boolean"},
            "audit_tol": _POS,
            "min_correlation": {"type": "number", "minimum": 0, "maximum": 1},
        }),
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "geometry": {"kind": "annulus", "r_in": 1.0, "r_out": 2.0, "h": 0.25, "grading": 0.0,
                 "x0": [0.0, 0.0], "delta": 1.0},
    "material": {"lambda": 1.0, "alpha": 1.0},
    "damping": {"a0": 1.0, "eps": 0.3, "profile": "constant"},
    "boundary": {"f": 1.0, "g": 1.0, "h": 1.0, "floors": None},
    "time": {"dt": 0.01, "T": 40.0, "store_stride": None},
    "initial": {"center": [0.0, 1.5], "radius": 0.8, "amplitude": [1.0, 0.5]},
    "analysis": {"audit": False, "spectrum": True, "poincare": True, "audit_tol": 1e-2,
                 "min_correlation": 0.99},
    "output": "elastowave-out",
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario. Sections are plain dicts with every default filled in."""

    geometry: dict
    material: dict
    damping: dict
    boundary: dict
    time: dict
    initial: dict
    analysis: dict
    output: str

    @property
    def store_stride(self) -> int:
        s = self.time["store_stride"]
        if self.analysis["audit"]:
            return 1
        return 1 if s is None else int(s)

    def with_h(self, h: float) -> "ScenarioConfig":
        geo = dict(self.geometry, h=float(h))
        return ScenarioConfig(geo, self.material, self.damping, self.boundary, self.time,
                              self.initial, self.analysis, self.output)

    def with_output(self, output) -> "ScenarioConfig":
        return ScenarioConfig(self.geometry, self.material, self.damping, self.boundary, self.time,
                              self.initial, self.analysis, str(output))

    def to_dict(self) -> dict:
        return {"geometry": self.geometry, "material": self.material, "damping": self.damping,
                "boundary": self.boundary, "time": self.time, "initial": self.initial,
                "analysis": self.analysis, "output": self.output}

    def assumption_report(self) -> dict:
        """Which of the coefficient and geometry conditions hold, read off the fields alone."""
        geo, bnd, mat, dmp = self.geometry, self.boundary, self.material, self.damping
        floors = bnd["floors"] or [bnd["f"], bnd["g"], bnd["h"]]
        return {
            "lame_positive": mat["lambda"] > 0 and mat["alpha"] > 0,
            "boundary_floors_positive": all(c > 0 for c in floors)
            and bnd["f"] >= floors[0] and bnd["g"] >= floors[1] and bnd["h"] >= floors[2],
            "damping_positive": dmp["a0"] > 0 and dmp["eps"] > 0,
            "delta_positive": geo["delta"] > 0,
            "time_positive": self.time["dt"] > 0 and self.time["T"] > 0,
        }


def _merge(user: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for key, val in user.items():
        if isinstance(val, dict):
            out[key].update(val)
        else:
            out[key] = val
    return out


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a raw mapping and fill defaults. Raises :class:`ParameterError`."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParameterError(f"config {where}: {exc.message}") from exc
    cfg = ScenarioConfig(**_merge(data))
    geo = cfg.geometry
    if geo["kind"] != "disk" and not geo["r_in"] < geo["r_out"]:
        raise ParameterError("geometry.r_in must be smaller than geometry.r_out")
    if not (cfg.time["dt"] > 0 and cfg.time["T"] > 0):
        raise ParameterError("time.dt and time.T must be positive")
    report = cfg.assumption_report()
    for key in ("lame_positive", "boundary_floors_positive", "damping_positive"):
        if not report[key]:
            raise ParameterError(f"assumption check failed: {key}")
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParameterError("config root must be a JSON object")
    return parse_config(data)

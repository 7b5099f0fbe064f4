"""Report envelopes and deterministic JSON.

Floats are written with 17 significant digits, which round-trips every
IEEE double, and keys keep their insertion order, so identical runs produce
byte-identical files. Non-finite floats use the ``NaN``/``Infinity`` tokens
that :mod:`json` reads back.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__

SCHEMA = 1
TOOL = "boundarycurv"


def _float(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    s = format(v, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _plain(obj):
    """Numpy scalars and arrays to Python objects; other values unchanged."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _encode(obj, indent: int, level: int, out: list) -> None:
    obj = _plain(obj)
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON keys must be strings, got {k!r}")
            out.append(pad + json.dumps(k, ensure_ascii=False) + ": ")
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        if all(isinstance(_plain(v), (int, float)) and not isinstance(_plain(v), bool) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                _encode(v, indent, level + 1, out)
                if i < len(obj) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    out: list[str] = []
    _encode(obj, indent, 0, out)
    out.append("\n")
    return "".join(out)


def loads(text: str):
    return json.loads(text)


@dataclass
class ValidationRow:
    check: str
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "detail": self.detail,
        }


@dataclass
class ValidationTable:
    suite: str
    rows: list[ValidationRow] = dc_field(default_factory=list)

    def add(self, check: str, max_error: float, tolerance: float, detail: str = "", passed: bool | None = None):
        ok = bool(max_error <= tolerance) if passed is None else bool(passed)
        self.rows.append(ValidationRow(check, float(max_error), float(tolerance), ok, detail))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationTable":
        return cls(d["suite"], [ValidationRow(**r) for r in d["rows"]])


@dataclass
class ReportEnvelope:
    command: str
    spec: dict
    parameters: dict
    payload_type: str
    payload: dict
    version: str = __version__
    schema: int = SCHEMA
    tool: str = TOOL
    diagnostics: list[str] = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "spec": self.spec,
            "parameters": self.parameters,
            "payload_type": self.payload_type,
            "payload": self.payload,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ReportEnvelope":
        return cls(
            command=d["command"],
            spec=d["spec"],
            parameters=d["parameters"],
            payload_type=d["payload_type"],
            payload=d["payload"],
            version=d["version"],
            schema=d["schema"],
            tool=d["tool"],
            diagnostics=d.get("diagnostics", []),
        )

    @classmethod
    def from_json(cls, text: str) -> "ReportEnvelope":
        d = loads(text)
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls.from_dict(d)


__all__ = ["ReportEnvelope", "SCHEMA", "ValidationRow", "ValidationTable", "dumps", "loads"]

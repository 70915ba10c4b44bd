"""Canonical JSON report emission.

Reports are written with sorted keys and a fixed 17-significant-digit
float format, so a rerun with the same configuration and seed produces a
byte-identical file.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["canonical_json", "emit_report"]


def _format_float(value: float) -> str:
    if math.isnan(value) or math.isinf(value):
        raise ValueError("reports must not contain NaN or infinite numbers")
    text = format(value, ".17g")
    # Normalize "-0" so sign noise cannot break reproducibility.
    return "0" if text == "-0" else text


def _encode(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(_escape(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        first = True
        for key in sorted(obj):
            if not isinstance(key, str):
                raise TypeError(f"report keys must be strings, got {type(key).__name__}")
            if not first:
                out.append(",")
            first = False
            out.append(_escape(key))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


_ESCAPES = {
    "\\": "\\\\",
    '"': '\\"',
    "\b": "\\b",
    "\f": "\\f",
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
}


def _escape(text: str) -> str:
    parts = ['"']
    for ch in text:
        if ch in _ESCAPES:
            parts.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            parts.append(f"\\u{ord(ch):04x}")
        else:
            parts.append(ch)
    parts.append('"')
    return "".join(parts)


def canonical_json(obj) -> str:
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def emit_report(report: dict, path) -> None:
    """Write the canonical serialization of a finished report."""
    text = canonical_json(report)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.write("\n")

"""Canonical JSON: fixed key order, floats at 17 significant digits.

Python's repr-based json output is shortest-round-trip, which is exact but
not canonical across writers. Snapshots and demo files instead pin floats to
'%.17g', which always round-trips float64 bit-exactly, so byte equality of
two serializations implies value equality and vice versa.
"""

from __future__ import annotations

import math
from typing import Any


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite float not serializable: {x!r}")
    return format(x, ".17g")


def dumps(obj: Any) -> str:
    out: list[str] = []
    _write(obj, out)
    return "".join(out)


def _write(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(_escape(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, dict):
        out.append("{")
        first = True
        for k, v in obj.items():  # insertion order is the canonical order
            if not isinstance(k, str):
                raise TypeError(f"non-string key: {k!r}")
            if not first:
                out.append(",")
            out.append(_escape(k))
            out.append(":")
            _write(v, out)
            first = False
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _write(v, out)
        out.append("]")
    else:
        # numpy scalars and arrays funnel through item()/tolist() upstream;
        # anything else here is a caller bug.
        raise TypeError(f"not canonically serializable: {type(obj)}")


_ESCAPES = {
    '"': '\\"',
    "\\": "\\\\",
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
    "\b": "\\b",
    "\f": "\\f",
}


def _escape(s: str) -> str:
    parts = ['"']
    for ch in s:
        if ch in _ESCAPES:
            parts.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            parts.append(f"\\u{ord(ch):04x}")
        else:
            parts.append(ch)
    parts.append('"')
    return "".join(parts)

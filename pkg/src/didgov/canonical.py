"""Canonical JSON: sorted keys, no insignificant whitespace, UTF-8."""

from __future__ import annotations

import json
from typing import Any


def dumps(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode(value: Any) -> bytes:
    return dumps(value).encode("utf-8")


def canonicalize(text: str | bytes) -> bytes:
    """Re-encode arbitrary JSON text in canonical form."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return encode(json.loads(text))

"""Small shared helpers."""

from __future__ import annotations

import json
import re

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)```", re.DOTALL)


def strip_code_fences(text: str) -> str:
    """Return the body of the first fenced block, or the stripped text itself."""
    t = text.strip()
    m = _FENCE_RE.search(t)
    if m:
        return m.group(1).strip()
    return t


def dump_json_line(obj) -> str:
    """One-line JSON with a stable key order, for byte-reproducible output files."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))

"""Small IO helpers: canonical JSON, content hashing, atomic writes."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any


def dumps_canonical(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace variance.

    Used wherever byte-identical output matters (reports, cache keys).
    """
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ": "), indent=2)


def content_digest(obj: Any, length: int = 16) -> str:
    """Stable hex digest of a JSON-serializable value."""
    payload = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:length]


def sha256_file(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: Path | str, text: str) -> None:
    """Write via a temp file + rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: Path | str, obj: Any) -> None:
    atomic_write_text(path, dumps_canonical(obj) + "\n")


def read_json(path: Path | str) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

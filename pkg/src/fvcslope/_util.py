"""Small shared helpers: stable seeds, canonical JSON, atomic writes."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

__all__ = ["stable_seed", "canonical_json", "fingerprint", "atomic_write"]


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary string/int parts.

    Unlike Python's hash(), this is stable across processes and platforms.
    """
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, compact separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj) -> str:
    """Hex digest identifying a config payload."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def atomic_write(path, data: bytes | str):
    """Write via a temp file + rename so readers never see partial content."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)

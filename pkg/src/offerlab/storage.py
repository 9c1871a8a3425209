"""Deterministic file I/O helpers.

Every artifact writer in the package goes through these functions so that
reruns with identical inputs produce byte-identical files: floats are
rendered with shortest round-trip ``repr``, JSON keys are sorted, nothing
embeds a timestamp, and writes are atomic (temp file + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np


def fmt(value) -> str:
    """Render a CSV cell; floats use round-trip repr, others use str."""
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_json_atomic(path, obj) -> None:
    write_text_atomic(path, canonical_json(obj) + "\n")


def write_csv_atomic(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(cell) for cell in row) for row in rows)
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_array_atomic(path, array: np.ndarray) -> None:
    """Save one array in .npy format (deterministic, unlike zipped .npz)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    np.save(tmp, array, allow_pickle=False)
    # np.save appends .npy when missing; the tmp name keeps its suffix
    os.replace(str(tmp) + ".npy" if not str(tmp).endswith(".npy") else str(tmp), path)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def derive_seed(*parts: int) -> int:
    """Deterministically derive a 32-bit seed from integer parts."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1)[0])

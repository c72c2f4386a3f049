"""Versioned binary container for named parameter groups.

Layout: one JSON header line (utf-8, ends with a newline) followed by the
raw payload. The header records format_version=1, a sha256 checksum of the
payload bytes, and for every group its shape plus byte offset/length into
the payload. Payload entries are row-major little-endian float32, stored in
sorted group-name order so identical contents give identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from typing import Dict, Iterable

import numpy as np

from .autodiff import Tensor

FORMAT_VERSION = 1


def save_checkpoint(path: str, arrays: Dict[str, np.ndarray]) -> None:
    names = sorted(arrays)
    payload = bytearray()
    groups = {}
    for name in names:
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        off = len(payload)
        payload += a.tobytes()
        groups[name] = {"shape": list(a.shape), "offset": off, "nbytes": a.nbytes}
    header = {
        "format_version": FORMAT_VERSION,
        "checksum": hashlib.sha256(bytes(payload)).hexdigest(),
        "groups": groups,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        f.write(bytes(payload))


def _read(path: str):
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"not a checkpoint file: {path}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("checksum"):
        raise ValueError(f"checkpoint checksum mismatch in {path}")
    return header, payload


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    header, payload = _read(path)
    out = {}
    for name, meta in header["groups"].items():
        off, nb = meta["offset"], meta["nbytes"]
        if off + nb > len(payload):
            raise ValueError(f"checkpoint payload truncated at group {name}")
        buf = np.frombuffer(payload[off:off + nb], dtype="<f4")
        out[name] = buf.reshape(meta["shape"]).copy()
    return out


def group_bytes(path: str, prefix: str) -> bytes:
    """Concatenated payload bytes of every group named `prefix` or
    `prefix.<suffix>`, in sorted name order. Used for freeze-contract
    comparisons between checkpoints."""
    header, payload = _read(path)
    chunks = []
    for name in sorted(header["groups"]):
        if name == prefix or name.startswith(prefix + "."):
            meta = header["groups"][name]
            chunks.append(payload[meta["offset"]:meta["offset"] + meta["nbytes"]])
    return b"".join(chunks)


def save_params(path: str, tensors: Iterable[Tensor]) -> None:
    arrays = {}
    for t in tensors:
        if t.name is None:
            raise ValueError("cannot checkpoint an unnamed tensor")
        if t.name in arrays:
            raise ValueError(f"duplicate checkpoint group {t.name}")
        arrays[t.name] = t.data
    save_checkpoint(path, arrays)


def load_params_into(path: str, tensors: Iterable[Tensor], strict: bool = True) -> None:
    """Load stored float32 groups into live tensors, casting to each
    tensor's dtype. Shapes must match exactly."""
    stored = load_checkpoint(path)
    seen = set()
    for t in tensors:
        if t.name not in stored:
            if strict:
                raise KeyError(f"checkpoint missing group {t.name}")
            continue
        a = stored[t.name]
        if tuple(a.shape) != tuple(t.shape):
            raise ValueError(f"group {t.name} shape {a.shape} != {tuple(t.shape)}")
        t.data = a.astype(t.dtype)
        seen.add(t.name)

"""Single-file checkpoint container shared by every trainable model.

Layout::

    8 bytes   magic  b"BGMCKPT\\n"
    8 bytes   little-endian uint64 header length N
    N bytes   UTF-8 JSON header {format_version, kind, config, step, ...}
    rest      torch.save payload (state dicts)
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Optional

import torch

from .errors import DataError

MAGIC = b"BGMCKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, step: int, payload: dict,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format_version": FORMAT_VERSION, "kind": kind, "config": config, "step": int(step)}
    if extra:
        header.update(extra)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(buf.getvalue())
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(n).decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: checkpoint format {header.get('format_version')}, "
                        f"this build reads {FORMAT_VERSION}")
    return header


def load_checkpoint(path, kind: Optional[str] = None, config: Optional[dict] = None):
    """Return ``(header, payload)``. ``kind``/``config`` if given must match."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        if kind is not None and header["kind"] != kind:
            raise DataError(f"{path} holds a {header['kind']!r} model, expected {kind!r}")
        if config is not None and header["config"] != config:
            raise DataError(f"{path}: checkpoint config does not match the requested config")
        payload = torch.load(io.BytesIO(fh.read()), map_location="cpu", weights_only=False)
    return header, payload

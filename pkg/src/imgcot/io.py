"""Atomic file writes, line-delimited JSON records and content digests."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from imgcot.errors import MissingInputError, ParseError


def atomic_write_bytes(path, blob: bytes) -> None:
    """Write to a temp file beside ``path`` then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path, records) -> None:
    atomic_write_text(path, "".join(dumps_record(r) + "\n" for r in records))


def read_jsonl(path, stage: str | None = None) -> list:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path, stage)
    out = []
    offset = 0
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(keepends=True), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}", offset + exc.pos) from None
        offset += len(line.encode("utf-8"))
    return out


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def require(path, stage: str | None = None) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path, stage)
    return path

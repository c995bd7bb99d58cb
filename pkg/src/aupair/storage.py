"""Shared file plumbing: atomic writes, headered JSONL artifacts, digests.

Pipeline artifacts are JSON-lines files whose first line is a header record
carrying the artifact kind and provenance (config digest plus digests of the
upstream artifacts).  Input problem datasets are plain JSONL without a
header; that format is the external ingestion contract.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator


def canonical_json(value: Any) -> str:
    """Stable JSON encoding: sorted keys, compact separators, ASCII-safe."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(path: str | Path, value: Any) -> None:
    """Deterministic pretty-ish JSON artifact (sorted keys, trailing newline)."""
    atomic_write_text(path, json.dumps(value, sort_keys=True, indent=2, ensure_ascii=True) + "\n")


def load_json(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_artifact_jsonl(
    path: str | Path,
    kind: str,
    records: Iterable[dict],
    provenance: dict | None = None,
    extra_header: dict | None = None,
) -> None:
    header = {"artifact": kind, "provenance": provenance or {}}
    if extra_header:
        header.update(extra_header)
    lines = [canonical_json(header)]
    lines.extend(canonical_json(record) for record in records)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_artifact_jsonl(path: str | Path, kind: str) -> tuple[dict, Iterator[dict]]:
    """Return the validated header and an iterator over the record lines."""
    fh = open(path, "r", encoding="utf-8")
    header_line = fh.readline()
    if not header_line.strip():
        fh.close()
        raise ValueError(f"{path}: empty artifact file")
    header = json.loads(header_line)
    if header.get("artifact") != kind:
        fh.close()
        raise ValueError(f"{path}: expected {kind!r} artifact, found {header.get('artifact')!r}")

    def records() -> Iterator[dict]:
        with fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)

    return header, records()

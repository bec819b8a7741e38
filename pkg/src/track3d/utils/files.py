"""File helpers: line-delimited JSON, key-value text, atomic writes, hashing."""

import hashlib
import json
import os
import tempfile
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

from ..errors import DataError


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        Path(tmp).replace(path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]]) -> int:
    """Write records as one JSON object per line; return the record count."""
    lines = [json.dumps(record, sort_keys=True) for record in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def append_jsonl(path: str | Path, record: dict[str, Any]) -> None:
    """Append a single record to a line-delimited JSON file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    """Iterate over records of a line-delimited JSON file.

    Raises:
        DataError: If the file is missing or a line is not valid JSON
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing file: {path}")
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON record") from e


def write_key_values(path: str | Path, values: dict[str, Any]) -> None:
    """Write a ``key=value`` text file (one pair per line)."""
    text = "".join(f"{key}={value}\n" for key, value in values.items())
    atomic_write_text(path, text)


def read_key_values(path: str | Path) -> dict[str, str]:
    """Read a ``key=value`` text file; blank lines and ``#`` comments are skipped.

    Raises:
        DataError: If the file is missing or a line has no ``=``
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing file: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    """Hex digest of a file's contents."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_json(obj: Any) -> str:
    """Hex digest of a canonical JSON encoding of ``obj``."""
    return sha256_bytes(json.dumps(obj, sort_keys=True, default=str).encode("utf-8"))


def ensure_output_dir(path: str | Path, *, force: bool) -> Path:
    """Create ``path``; refuse a non-empty existing directory unless ``force``.

    Raises:
        DataError: If the directory exists, is non-empty and ``force`` is false
    """
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise DataError(f"Output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)
    return path

"""File formats: JSON-lines records, JSON documents, CSV tables, run manifests."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence

from . import __version__

MANIFEST_KEY = "_manifest"


class InputError(Exception):
    """Unreadable or unusable input file."""


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def make_manifest(command: str, config: dict[str, Any], inputs: Sequence[str | os.PathLike] = (),
                  seed: Optional[int] = None, skipped: int = 0) -> dict[str, Any]:
    return {
        "command": command,
        "config": config,
        "input_digests": {str(p): file_digest(p) for p in inputs},
        "tool_version": __version__,
        "seed": seed,
        "skipped_lines": skipped,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    }


def iter_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, parsed_object_or_exception)``; blank lines and manifest lines are skipped."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, ValueError(f"malformed JSON: {exc.msg}")
                continue
            if not isinstance(obj, dict):
                yield lineno, ValueError("line is not a JSON object")
                continue
            if MANIFEST_KEY in obj:
                continue
            yield lineno, obj


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False, ensure_ascii=False)


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def jsonl_text(manifest: dict[str, Any], rows: Iterable[dict[str, Any]]) -> str:
    lines = [dumps({MANIFEST_KEY: manifest})]
    lines.extend(dumps(r) for r in rows)
    return "\n".join(lines) + "\n"


def document_text(manifest: dict[str, Any], body: dict[str, Any]) -> str:
    return json.dumps({**body, "manifest": manifest}, sort_keys=True, indent=2, allow_nan=False) + "\n"


def fmt_number(x: Any) -> str:
    """Six significant digits, '.' decimal point; undefined values become ``nan``."""
    if x is None:
        return "nan"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".6g")


def csv_text(manifest: dict[str, Any], columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> str:
    lines = ["# manifest: " + dumps(manifest), ",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt_number(row[c]) for c in columns))
    return "\n".join(lines) + "\n"

"""Small file helpers: atomic writes and config-hash-tagged CSV/JSON artifacts.

Every artifact the CLI emits carries the run's config hash so downstream
subcommands can refuse to mix outputs of different configurations. CSV files
carry it as a leading ``# config_hash=...`` comment line; JSON files carry a
``config_hash`` field.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from metatrend.errors import ArtifactMismatchError, ArtifactMissingError

HASH_COMMENT_PREFIX = "# config_hash="


def atomic_write_text(path: Path, text: str) -> None:
    """Write text via a temp file + rename so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list[str], rows, config_hash: str | None = None) -> None:
    """Write a CSV artifact, optionally tagged with the config hash."""
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"{HASH_COMMENT_PREFIX}{config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def read_csv(path: Path, expect_hash: str | None = None, producer: str | None = None):
    """Read a CSV artifact; returns (header, rows, config_hash).

    When ``expect_hash`` is given and the file carries a different hash,
    raises ArtifactMismatchError. When the file is missing and ``producer``
    is given, the error names the subcommand that would create it.
    """
    path = Path(path)
    if not path.exists():
        if producer is not None:
            raise ArtifactMissingError(path, producer)
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        first = fh.readline()
        found_hash = None
        if first.startswith(HASH_COMMENT_PREFIX):
            found_hash = first[len(HASH_COMMENT_PREFIX):].strip()
            first = fh.readline()
        header = next(csv.reader([first])) if first.strip() else []
        rows = list(csv.reader(fh))
    if expect_hash is not None and found_hash is not None and found_hash != expect_hash:
        raise ArtifactMismatchError(
            f"{path} was produced under config hash {found_hash}, "
            f"current run is {expect_hash}"
        )
    return header, rows, found_hash


def write_json(path: Path, obj, config_hash: str | None = None) -> None:
    if config_hash is not None and isinstance(obj, dict):
        obj = {"config_hash": config_hash, **obj}
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: Path, expect_hash: str | None = None, producer: str | None = None):
    path = Path(path)
    if not path.exists():
        if producer is not None:
            raise ArtifactMissingError(path, producer)
        raise FileNotFoundError(path)
    with open(path) as fh:
        obj = json.load(fh)
    if (
        expect_hash is not None
        and isinstance(obj, dict)
        and obj.get("config_hash") not in (None, expect_hash)
    ):
        raise ArtifactMismatchError(
            f"{path} was produced under config hash {obj['config_hash']}, "
            f"current run is {expect_hash}"
        )
    return obj

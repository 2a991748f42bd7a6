"""
Artifact writer.

Every file of an experiment run goes through one ArtifactWriter, which
records its SHA-256 for the manifest. JSON is written with sorted keys and a
trailing newline, CSV with LF line endings, so reruns are byte-identical.
Wall-clock values are written to timing.json, digested under the manifest's
separate "timing" entry.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import threading
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Literal

from src.core.errors import ExperimentError
from src.observability.logger import get_logger

logger = get_logger(__name__, component="artifacts")

MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"

RunStatus = Literal["complete", "partial"]


def format_cell(value: Any) -> str:
    """CSV cell text: repr for floats, empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue()


def json_text(document: Any) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


class ArtifactWriter:
    """
    Writes files under one output directory and keeps their digests.

    Safe to call from worker threads; the manifest is written once at the end.
    """

    def __init__(self, output_dir: str | Path) -> None:
        self.output_dir = Path(output_dir)
        self.digests: dict[str, str] = {}
        self.errors: list[str] = []
        self.timing_digest: str | None = None
        self._lock = threading.Lock()
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ExperimentError(f"cannot create output directory {self.output_dir}: {e}") from e

    def write_bytes(self, name: str, data: bytes) -> Path:
        if name in (MANIFEST_NAME, TIMING_NAME):
            raise ExperimentError(f"{name} is reserved")
        path = self.output_dir / name
        try:
            path.write_bytes(data)
        except OSError as e:
            raise ExperimentError(f"cannot write {path}: {e}") from e
        with self._lock:
            self.digests[name] = hashlib.sha256(data).hexdigest()
        logger.debug("Artifact written", name=name, nbytes=len(data))
        return path

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name: str, document: Any) -> Path:
        return self.write_text(name, json_text(document))

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self.write_text(name, csv_text(header, rows))

    def record_error(self, message: str) -> None:
        with self._lock:
            self.errors.append(message)

    def write_timing(self, summary: dict[str, Any]) -> Path:
        data = json_text(summary).encode("utf-8")
        path = self.output_dir / TIMING_NAME
        path.write_bytes(data)
        with self._lock:
            self.timing_digest = hashlib.sha256(data).hexdigest()
        return path

    def write_manifest(self, status: RunStatus, seed: int, config_hash: str) -> Path:
        """
        Write manifest.json. "files" holds the deterministic artifacts, so it
        is identical across reruns with one seed; timing.json changes every
        run and is digested under "timing" instead.
        """
        document = {
            "status": status,
            "seed": seed,
            "config_hash": config_hash,
            "files": dict(sorted(self.digests.items())),
            "errors": list(self.errors),
            "timing": {"file": TIMING_NAME, "sha256": self.timing_digest},
        }
        path = self.output_dir / MANIFEST_NAME
        path.write_text(json_text(document), encoding="utf-8")
        logger.info("Manifest written", status=status, files=len(self.digests), errors=len(self.errors))
        return path


def read_manifest(output_dir: str | Path) -> dict[str, Any]:
    """Load manifest.json of a finished or partial run."""
    path = Path(output_dir) / MANIFEST_NAME
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ExperimentError(f"cannot read manifest {path}: {e}") from e


def verify_manifest(output_dir: str | Path) -> list[str]:
    """Names of listed files that are missing or whose digest no longer matches."""
    manifest = read_manifest(output_dir)
    mismatched = []
    listed = dict(manifest.get("files", {}))
    timing = manifest.get("timing") or {}
    if timing.get("sha256"):
        listed[timing["file"]] = timing["sha256"]
    for name, digest in listed.items():
        path = Path(output_dir) / name
        if not path.exists() or hashlib.sha256(path.read_bytes()).hexdigest() != digest:
            mismatched.append(name)
    return mismatched

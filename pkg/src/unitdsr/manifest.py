"""Corpus manifest: one utterance per line, six tab-separated fields
`utterance_id  audio_path  speaker_id  transcript  block_tag  health_tag`.
Audio paths may be relative; they resolve against the manifest directory
or, if set, the UNITDSR_DATA_DIR environment variable."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import DomainError, DuplicateIdError, FieldCountError, IoError

DATA_DIR_ENV = "UNITDSR_DATA_DIR"
HEALTH_TAGS = ("healthy", "dysarthric")


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    audio_path: str
    speaker_id: str
    transcript: str
    block_tag: str
    health_tag: str

    def __post_init__(self):
        if self.health_tag not in HEALTH_TAGS:
            raise DomainError(
                f"{self.utterance_id}: health_tag must be one of {HEALTH_TAGS}, "
                f"got {self.health_tag!r}"
            )


def parse_manifest(path: str | Path) -> list[ManifestRecord]:
    """Strict TSV parse; blank lines are skipped, malformed rows raise with
    their 1-based line number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise FieldCountError(
                f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}"
            )
        rec = ManifestRecord(*(f.strip() for f in fields))
        if rec.utterance_id in seen:
            raise DuplicateIdError(
                f"{path}:{lineno}: duplicate utterance_id {rec.utterance_id!r} "
                f"(first seen on line {seen[rec.utterance_id]})"
            )
        seen[rec.utterance_id] = lineno
        records.append(rec)
    return records


def resolve_audio_path(record: ManifestRecord, manifest_path: str | Path) -> Path:
    """Absolute paths pass through; relative paths resolve against
    UNITDSR_DATA_DIR when set, else the manifest's directory."""
    p = Path(record.audio_path)
    if p.is_absolute():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    root = Path(base) if base else Path(manifest_path).parent
    return root / p

"""Corpus manifests: one tab-separated record per utterance.

Columns: ``utterance_id, path, label (bonafide|spoof), speaker_id,
provenance, transform_log`` where the log is compact JSON.  Paths are
stored relative to the manifest file and held as absolute paths in memory.
"""
from __future__ import annotations

import json
import os
import wave
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .audio import SAMPLE_RATE, load_wav

HEADER = "# utterance_id\tpath\tlabel\tspeaker_id\tprovenance\ttransform_log"
N_COLUMNS = 6

REAL, FAKE = "real", "fake"
PROVENANCES = ("real", "self_vc", "self_rec", "cross_vc")
_LABEL_TO_DISK = {REAL: "bonafide", FAKE: "spoof"}
_DISK_TO_LABEL = {v: k for k, v in _LABEL_TO_DISK.items()}


class ManifestError(ValueError):
    """A manifest line could not be parsed or violates a record invariant."""


@dataclass
class SampleRecord:
    utterance_id: str
    path: Path
    label: str
    speaker_id: str
    provenance: str = "real"
    transform_log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.path = Path(self.path)
        if self.label not in (REAL, FAKE):
            raise ManifestError(f"{self.utterance_id}: unknown label {self.label!r}")
        if self.provenance not in PROVENANCES:
            raise ManifestError(f"{self.utterance_id}: unknown provenance {self.provenance!r}")
        expected = REAL if self.provenance == "real" else FAKE
        if self.label != expected:
            raise ManifestError(
                f"{self.utterance_id}: provenance {self.provenance} requires label {expected}")

    @property
    def is_fake(self) -> bool:
        return self.label == FAKE


def _format_line(rec: SampleRecord, base: Path) -> str:
    rel = Path(os.path.relpath(rec.path, base)).as_posix()
    log = json.dumps(rec.transform_log, separators=(",", ":"), sort_keys=True)
    return "\t".join([rec.utterance_id, rel, _LABEL_TO_DISK[rec.label], rec.speaker_id, rec.provenance, log])


def _parse_line(line: str, base: Path, lineno: int) -> SampleRecord:
    cols = line.split("\t")
    if len(cols) != N_COLUMNS:
        raise ManifestError(f"line {lineno}: expected {N_COLUMNS} columns, got {len(cols)}")
    utt, rel, label, speaker, provenance, log = cols
    if label not in _DISK_TO_LABEL:
        raise ManifestError(f"line {lineno}: label must be bonafide or spoof, got {label!r}")
    try:
        transform_log = json.loads(log)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: bad transform_log JSON ({exc})") from exc
    try:
        return SampleRecord(utt, (base / rel).resolve(), _DISK_TO_LABEL[label], speaker, provenance,
                            transform_log)
    except ManifestError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from exc


def read_manifest(path) -> list[SampleRecord]:
    path = Path(path)
    base = path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            records.append(_parse_line(line, base, lineno))
    return records


def write_manifest(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    lines = [HEADER] + [_format_line(r, base) for r in records]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def provenance_counts(records) -> dict[str, int]:
    counts = Counter(r.provenance for r in records)
    return {p: counts.get(p, 0) for p in PROVENANCES}


@dataclass
class Issue:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _wav_rate(path: Path) -> int:
    try:
        with wave.open(str(path), "rb") as fh:
            return fh.getframerate()
    except wave.Error:
        # float WAVs are not handled by the stdlib reader
        return load_wav(path).sample_rate


def validate_manifest(path, sample_rate: int = SAMPLE_RATE, check_audio: bool = True) -> list[Issue]:
    """Check arity, labels, audio files, sample rates and duplicate ids.

    Returns an empty list for a clean manifest.
    """
    path = Path(path)
    base = path.parent
    issues: list[Issue] = []
    first_seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for lineno, line in enumerate(lines, 1):
        if not line or line.startswith("#"):
            continue
        try:
            rec = _parse_line(line, base, lineno)
        except ManifestError as exc:
            issues.append(Issue(lineno, str(exc).split(": ", 1)[-1]))
            continue
        if rec.utterance_id in first_seen:
            issues.append(Issue(lineno, f"duplicate utterance_id {rec.utterance_id!r} "
                                        f"(lines {first_seen[rec.utterance_id]} and {lineno})"))
        else:
            first_seen[rec.utterance_id] = lineno
        if not check_audio:
            continue
        if not rec.path.exists():
            issues.append(Issue(lineno, f"missing audio file {rec.path}"))
            continue
        try:
            rate = _wav_rate(rec.path)
        except (ValueError, EOFError) as exc:
            issues.append(Issue(lineno, f"unreadable audio {rec.path}: {exc}"))
            continue
        if rate != sample_rate:
            issues.append(Issue(lineno, f"sample rate {rate} != {sample_rate} for {rec.path}"))
    return issues

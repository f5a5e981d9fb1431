"""Text archives and corpus manifests.

The archive format is the speech-toolkit-compatible text matrix archive::

    utt-id  [
      0.1 0.2 0.3
      0.4 0.5 0.6 ]

Values are printed with 9 significant digits, which round-trips
single-precision floats exactly; matrices are therefore stored and returned
as float32.  The reader is a generator and never holds more than one entry
in memory.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, TextIO, Union

import numpy as np

from .errors import ParseError, ValidationError

MANIFEST_COLUMNS = ("utt_id", "speaker_id", "audio_path", "duration_ms",
                    "transcript", "translation")


@dataclass
class ArchiveEntry:
    utterance_id: str
    matrix: np.ndarray  # (frames, dims) float32


@dataclass
class ManifestRecord:
    utterance_id: str
    speaker_id: str
    audio_path: str
    duration_ms: int
    transcript: str
    translation: str


PathOrFile = Union[str, TextIO]


def _open(path_or_f: PathOrFile, mode: str):
    if isinstance(path_or_f, str):
        return open(path_or_f, mode, encoding="utf-8", newline="\n"), True
    return path_or_f, False


def write_archive(path_or_f: PathOrFile, entries: Iterable[ArchiveEntry]) -> None:
    f, own = _open(path_or_f, "w")
    try:
        for entry in entries:
            mat = np.asarray(entry.matrix)
            if mat.ndim != 2 or mat.shape[0] == 0 or mat.shape[1] == 0:
                raise ValidationError(
                    f"archive entry '{entry.utterance_id}' needs a non-empty 2-d matrix, "
                    f"got shape {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ValidationError(
                    f"archive entry '{entry.utterance_id}' contains non-finite values")
            mat = mat.astype(np.float32)
            f.write(f"{entry.utterance_id}  [\n")
            last = mat.shape[0] - 1
            for r in range(mat.shape[0]):
                row = " ".join(f"{float(v):.9g}" for v in mat[r])
                tail = " ]" if r == last else ""
                f.write(f"  {row}{tail}\n")
    finally:
        if own:
            f.close()


def read_archive(path_or_f: PathOrFile) -> Iterator[ArchiveEntry]:
    """Yield archive entries one at a time."""
    f, own = _open(path_or_f, "r")
    try:
        key = None
        rows: list[list[float]] = []
        dims = None
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if key is None:
                if not tokens:
                    continue
                if len(tokens) != 2 or tokens[1] != "[":
                    raise ParseError(f"expected 'utt-id [' at line {lineno}")
                key = tokens[0]
                rows = []
                dims = None
                continue
            if not tokens:
                raise ParseError(f"blank line inside matrix at line {lineno}")
            closing = tokens[-1] == "]"
            if closing:
                tokens = tokens[:-1]
            if not tokens:
                raise ParseError(f"empty row at line {lineno}")
            try:
                values = [float(t) for t in tokens]
            except ValueError as exc:
                raise ParseError(f"bad value at line {lineno}: {exc}") from None
            if dims is None:
                dims = len(values)
            elif len(values) != dims:
                raise ParseError(f"ragged row at line {lineno}")
            rows.append(values)
            if closing:
                yield ArchiveEntry(key, np.array(rows, dtype=np.float32))
                key = None
        if key is not None:
            raise ParseError(f"unterminated matrix for '{key}' at end of file")
    finally:
        if own:
            f.close()


def read_archive_dict(path_or_f: PathOrFile) -> dict[str, np.ndarray]:
    """Convenience eager reader: utterance_id -> matrix."""
    out: dict[str, np.ndarray] = {}
    for entry in read_archive(path_or_f):
        if entry.utterance_id in out:
            raise ValidationError(f"duplicate utterance id '{entry.utterance_id}' in archive")
        out[entry.utterance_id] = entry.matrix
    return out


def read_manifest(path_or_f: PathOrFile) -> list[ManifestRecord]:
    f, own = _open(path_or_f, "r")
    try:
        header_line = f.readline()
        if not header_line:
            raise ParseError("empty manifest")
        header = header_line.rstrip("\n").split("\t")
        for col in MANIFEST_COLUMNS:
            if col not in header:
                raise ParseError(f"missing column '{col}'")
        idx = {col: header.index(col) for col in MANIFEST_COLUMNS}
        records: list[ManifestRecord] = []
        seen: set[str] = set()
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != len(header):
                raise ParseError(
                    f"line {lineno}: expected {len(header)} fields, got {len(fields)}")
            utt = fields[idx["utt_id"]]
            if utt in seen:
                raise ValidationError(f"duplicate utterance id '{utt}' in manifest")
            seen.add(utt)
            path = fields[idx["audio_path"]]
            if not path:
                raise ValidationError(f"empty audio_path for utterance '{utt}'")
            try:
                duration = int(fields[idx["duration_ms"]])
            except ValueError:
                raise ParseError(f"line {lineno}: duration_ms must be an integer") from None
            records.append(ManifestRecord(
                utterance_id=utt,
                speaker_id=fields[idx["speaker_id"]],
                audio_path=path,
                duration_ms=duration,
                transcript=fields[idx["transcript"]],
                translation=fields[idx["translation"]],
            ))
        return records
    finally:
        if own:
            f.close()


def write_manifest(path_or_f: PathOrFile, records: Iterable[ManifestRecord]) -> None:
    f, own = _open(path_or_f, "w")
    try:
        f.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for r in records:
            f.write("\t".join([r.utterance_id, r.speaker_id, r.audio_path,
                               str(r.duration_ms), r.transcript, r.translation]) + "\n")
    finally:
        if own:
            f.close()

"""Frame-level phoneme label ingestion.

Two sources are supported: per-frame alignments (one label per frame) and
spliced CTC outputs (one label per 3-frame span, expanded here).  File
formats: alignment files carry one record per line, ``utt-id lab1 lab2 ...``
with labels either as inventory symbols or as integer ids (a record whose
label tokens are all digits is read as integer ids); inventory files carry
one symbol per line, the line number being the id, with ``<blk>`` marking
the CTC blank.
"""

from dataclasses import dataclass
from typing import Iterator, Optional, TextIO, Union

import numpy as np

from .errors import ParseError, ValidationError
from .features import FeatureMatrix

BLANK_SYMBOL = "<blk>"


@dataclass
class PhonemeInventory:
    symbols: list[str]
    blank_index: Optional[int] = None

    def __post_init__(self):
        if not self.symbols:
            raise ValidationError("inventory must contain at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValidationError("inventory symbols must be unique")
        if self.blank_index is None and BLANK_SYMBOL in self.symbols:
            self.blank_index = self.symbols.index(BLANK_SYMBOL)
        if self.blank_index is not None:
            if not 0 <= self.blank_index < len(self.symbols):
                raise ValidationError("blank_index out of range")
            if self.symbols[self.blank_index] != BLANK_SYMBOL:
                raise ValidationError(
                    f"blank_index must point at '{BLANK_SYMBOL}', "
                    f"found '{self.symbols[self.blank_index]}'")
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ValidationError(f"unknown symbol '{symbol}'") from None


@dataclass
class FrameAlignment:
    utterance_id: str
    labels: np.ndarray  # (frames,) int64 inventory indices


@dataclass
class SplicedLabelSequence:
    utterance_id: str
    labels: np.ndarray  # (spans,) int64, one label per 3-frame span


def read_inventory(path_or_f: Union[str, TextIO]) -> PhonemeInventory:
    if isinstance(path_or_f, str):
        with open(path_or_f, encoding="utf-8") as f:
            lines = f.read().splitlines()
    else:
        lines = path_or_f.read().splitlines()
    symbols = [ln.strip() for ln in lines if ln.strip()]
    return PhonemeInventory(symbols)


def write_inventory(path: str, inv: PhonemeInventory) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in inv.symbols:
            f.write(s + "\n")


def parse_frame_alignment(text_record: str, inv: PhonemeInventory) -> FrameAlignment:
    """Parse one ``utt-id lab1 ... labN`` record into inventory indices."""
    tokens = text_record.split()
    if not tokens:
        raise ParseError("empty alignment record")
    utt, label_tokens = tokens[0], tokens[1:]
    if not label_tokens:
        raise ParseError(f"alignment record for '{utt}' has no labels")
    if all(t.isdigit() for t in label_tokens):
        labels = np.array([int(t) for t in label_tokens], dtype=np.int64)
        bad = np.flatnonzero(labels >= len(inv))
        if bad.size:
            pos = int(bad[0])
            raise ParseError(
                f"label id {labels[pos]} at position {pos + 1} exceeds "
                f"inventory size {len(inv)}")
    else:
        labels = np.empty(len(label_tokens), dtype=np.int64)
        for pos, tok in enumerate(label_tokens, start=1):
            idx = inv._index.get(tok)
            if idx is None:
                raise ParseError(f"unknown symbol '{tok}' at position {pos}")
            labels[pos - 1] = idx
    return FrameAlignment(utt, labels)


def format_frame_alignment(ali: FrameAlignment, inv: PhonemeInventory,
                           symbolic: bool = True) -> str:
    if symbolic:
        labs = " ".join(inv.symbols[i] for i in ali.labels)
    else:
        labs = " ".join(str(int(i)) for i in ali.labels)
    return f"{ali.utterance_id} {labs}"


def read_alignment_file(path_or_f: Union[str, TextIO],
                        inv: PhonemeInventory) -> Iterator[FrameAlignment]:
    if isinstance(path_or_f, str):
        f = open(path_or_f, encoding="utf-8")
        own = True
    else:
        f, own = path_or_f, False
    try:
        for line in f:
            if line.strip():
                yield parse_frame_alignment(line, inv)
    finally:
        if own:
            f.close()


def write_alignment_file(path: str, alignments, inv: PhonemeInventory,
                         symbolic: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ali in alignments:
            f.write(format_frame_alignment(ali, inv, symbolic) + "\n")


def expand_ctc_labels(spliced: SplicedLabelSequence, num_frames: int) -> FrameAlignment:
    """Expand per-span CTC labels to per-frame labels.

    Span i covers frames ``3i .. 3i+2``; up to two trailing remainder frames
    inherit the final span's label.
    """
    labels = np.asarray(spliced.labels, dtype=np.int64)
    n = labels.shape[0]
    if n == 0:
        raise ValidationError("spliced label sequence is empty")
    if not (3 * (n - 1) < num_frames <= 3 * n + 2):
        raise ValidationError(
            f"num_frames {num_frames} inconsistent with {n} spliced labels "
            f"(expected in ({3 * (n - 1)}, {3 * n + 2}])")
    span_of_frame = np.minimum(np.arange(num_frames) // 3, n - 1)
    return FrameAlignment(spliced.utterance_id, labels[span_of_frame])


def validate_pair(feats: FeatureMatrix, ali: FrameAlignment):
    """Check that features and alignment describe the same utterance."""
    if feats.utterance_id != ali.utterance_id:
        raise ValidationError(
            f"utterance id mismatch: '{feats.utterance_id}' vs '{ali.utterance_id}'")
    if feats.num_frames != ali.labels.shape[0]:
        raise ValidationError(
            f"length mismatch {feats.num_frames} vs {ali.labels.shape[0]} "
            f"for '{feats.utterance_id}'")
    return feats, ali

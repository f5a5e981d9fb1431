"""Variable-length pooling of frames by label runs, plus fixed-stride
baselines and corpus statistics.

Each maximal run of consecutive identical alignment labels is collapsed into
one segment whose vector is the arithmetic mean of the run's frames (summed
left to right in double precision).  CTC blank runs are kept as ordinary
segments by default; ``blank_mode="drop"`` removes them from the output
(leaving gaps in the frame spans).
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, TextIO, Union

import numpy as np

from . import kernels
from .alignment import FrameAlignment, PhonemeInventory, validate_pair
from .errors import ParseError, ValidationError
from .features import FeatureMatrix


@dataclass
class PooledSegment:
    label: int
    vector: np.ndarray  # (dims,)
    start_frame: int
    end_frame: int  # inclusive

    @property
    def num_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass
class PooledSequence:
    utterance_id: str
    segments: list[PooledSegment]

    def to_matrix(self) -> np.ndarray:
        return np.stack([seg.vector for seg in self.segments])

    def labels(self) -> np.ndarray:
        return np.array([seg.label for seg in self.segments], dtype=np.int64)


@dataclass
class PoolingStats:
    num_frames: int
    num_segments: int
    reduction_ratio: float
    frames_per_run_mean: float
    frames_per_run_median: float
    silence_run_fraction: float

    def as_dict(self) -> dict:
        return {
            "num_frames": self.num_frames,
            "num_segments": self.num_segments,
            "reduction_ratio": self.reduction_ratio,
            "frames_per_run_mean": self.frames_per_run_mean,
            "frames_per_run_median": self.frames_per_run_median,
            "silence_run_fraction": self.silence_run_fraction,
        }


def run_boundaries(labels: np.ndarray):
    """Start and (inclusive) end indices of each maximal label run."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise ValidationError("cannot pool an empty alignment")
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change - 1, [n - 1]))
    return starts.astype(np.int64), ends.astype(np.int64)


def pool_runs(feats: FeatureMatrix, ali: FrameAlignment,
              blank_index: Optional[int] = None,
              blank_mode: str = "keep") -> PooledSequence:
    """Average the feature vectors of each maximal same-label frame run."""
    if blank_mode not in ("keep", "drop"):
        raise ValidationError(f"unknown blank_mode '{blank_mode}'")
    if blank_mode == "drop" and blank_index is None:
        raise ValidationError("blank_mode='drop' requires a blank_index")
    validate_pair(feats, ali)
    data = np.ascontiguousarray(feats.data, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValidationError("cannot pool an empty utterance")
    starts, ends = run_boundaries(ali.labels)
    sums = kernels.segment_sums(data, starts, ends)
    lengths = (ends - starts + 1).astype(np.float64)
    means = sums / lengths[:, None]
    segments = []
    for k in range(starts.shape[0]):
        label = int(ali.labels[starts[k]])
        if blank_mode == "drop" and label == blank_index:
            continue
        segments.append(PooledSegment(label, means[k], int(starts[k]), int(ends[k])))
    if not segments:
        raise ValidationError(
            f"'{feats.utterance_id}': all segments were blank, nothing left after dropping")
    return PooledSequence(feats.utterance_id, segments)


def stride_downsample(feats: FeatureMatrix, stride: int) -> FeatureMatrix:
    """Keep every ``stride``-th frame starting at frame 0."""
    if stride < 1:
        raise ValidationError("stride must be a positive integer")
    return FeatureMatrix(feats.utterance_id, feats.speaker_id,
                         feats.data[::stride].copy())


def corpus_stats(pairs: Sequence[tuple[FeatureMatrix, FrameAlignment]],
                 silence_labels: Iterable[int] = ()) -> PoolingStats:
    """Aggregate pooling statistics over a corpus of validated pairs.

    Run-length mean/median are over all runs; ``silence_run_fraction`` is the
    fraction of runs whose label is in ``silence_labels``.
    """
    if not pairs:
        raise ValidationError("corpus_stats: empty corpus")
    silence = set(int(s) for s in silence_labels)
    total_frames = 0
    run_lengths: list[np.ndarray] = []
    silence_runs = 0
    total_runs = 0
    for feats, ali in pairs:
        validate_pair(feats, ali)
        starts, ends = run_boundaries(ali.labels)
        total_frames += int(ali.labels.shape[0])
        total_runs += starts.shape[0]
        run_lengths.append(ends - starts + 1)
        if silence:
            run_labels = ali.labels[starts]
            silence_runs += int(np.isin(run_labels, list(silence)).sum())
    lengths = np.concatenate(run_lengths)
    return PoolingStats(
        num_frames=total_frames,
        num_segments=total_runs,
        reduction_ratio=1.0 - total_runs / total_frames,
        frames_per_run_mean=float(lengths.mean()),
        frames_per_run_median=float(np.median(lengths)),
        silence_run_fraction=silence_runs / total_runs,
    )


# ---------------------------------------------------------------------------
# Segments sidecar file: "utt-id label:start:end label:start:end ..."
# ---------------------------------------------------------------------------

def write_segments(path_or_f: Union[str, TextIO],
                   pooled_seqs: Iterable[PooledSequence],
                   inv: PhonemeInventory) -> None:
    if isinstance(path_or_f, str):
        f = open(path_or_f, "w", encoding="utf-8", newline="\n")
        own = True
    else:
        f, own = path_or_f, False
    try:
        for seq in pooled_seqs:
            parts = []
            for seg in seq.segments:
                sym = inv.symbols[seg.label]
                if ":" in sym:
                    raise ValidationError(f"symbol '{sym}' may not contain ':'")
                parts.append(f"{sym}:{seg.start_frame}:{seg.end_frame}")
            f.write(f"{seq.utterance_id} " + " ".join(parts) + "\n")
    finally:
        if own:
            f.close()


def read_segments(path_or_f: Union[str, TextIO],
                  inv: PhonemeInventory) -> Iterator[tuple[str, list[tuple[int, int, int]]]]:
    """Yield (utterance_id, [(label, start, end), ...]) per sidecar line."""
    if isinstance(path_or_f, str):
        f = open(path_or_f, encoding="utf-8")
        own = True
    else:
        f, own = path_or_f, False
    try:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            utt, spans = tokens[0], []
            for tok in tokens[1:]:
                fields = tok.rsplit(":", 2)
                if len(fields) != 3:
                    raise ParseError(f"bad segment '{tok}' at line {lineno}")
                sym, start, end = fields
                try:
                    spans.append((inv.index(sym), int(start), int(end)))
                except (ValueError, ValidationError) as exc:
                    raise ParseError(f"bad segment '{tok}' at line {lineno}: {exc}") from None
            yield utt, spans
    finally:
        if own:
            f.close()

"""Synthetic corpus generation and the frames-vs-phonemes comparison.

The toy corpus draws utterances over a small inventory of source symbols;
each symbol is emitted as a variable-length run of noisy copies of its
40-dim prototype vector, and the target sentence maps each symbol to a word.
The comparison trains identically configured models (same seed, same target
processing) on frame-level inputs, run-pooled inputs built from the oracle
alignments, and optionally stride-downsampled inputs, and reports dev token
accuracy, epochs to a threshold, and mean per-epoch wall time per condition.

Models here use the layer-norm encoder switch (with per-utterance sequences
the batch-norm statistics degenerate once pooling shrinks a sequence to a
single projected timestep) and leave encoder time-downsampling off for every
condition: toy pooled sequences are only a handful of segments long, and
halving them twice would push them below the attention's resolution.  Both
choices apply identically to all conditions, so the input representation
remains the only difference.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .alignment import FrameAlignment, PhonemeInventory
from .errors import ValidationError
from .features import FeatureMatrix
from .nnet import (DecoderConfig, EncoderConfig, TrainConfig, train)
from .nnet.train import TrainResult
from .pooling import pool_runs, stride_downsample
from .textproc import VocabSpec, build_vocab, tokenize


@dataclass
class ToyCorpusConfig:
    num_utterances: int = 3000
    num_symbols: int = 30
    min_symbols: int = 3
    max_symbols: int = 8
    min_frames: int = 4
    max_frames: int = 14
    dims: int = 40
    noise: float = 1.8
    dev_fraction: float = 0.1
    seed: int = 0


@dataclass
class ToyUtterance:
    utterance_id: str
    features: np.ndarray  # (T, dims)
    labels: np.ndarray  # (T,) symbol index per frame
    text: str  # target sentence


@dataclass
class ToyCorpus:
    cfg: ToyCorpusConfig
    train: list[ToyUtterance]
    dev: list[ToyUtterance]
    inventory: PhonemeInventory

    @staticmethod
    def symbol_word(sym: int) -> str:
        return f"w{sym:02d}"


def generate_toy_corpus(cfg: ToyCorpusConfig) -> ToyCorpus:
    if cfg.num_utterances < 2 or not 0 < cfg.dev_fraction < 1:
        raise ValidationError("need at least 2 utterances and a dev fraction in (0,1)")
    rng = np.random.default_rng(cfg.seed)
    prototypes = rng.standard_normal((cfg.num_symbols, cfg.dims))
    utts = []
    for u in range(cfg.num_utterances):
        n_syms = int(rng.integers(cfg.min_symbols, cfg.max_symbols + 1))
        # adjacent symbols always differ, as adjacent label runs do
        syms = []
        for _ in range(n_syms):
            s = int(rng.integers(0, cfg.num_symbols))
            while syms and s == syms[-1]:
                s = int(rng.integers(0, cfg.num_symbols))
            syms.append(s)
        chunks = []
        labels = []
        for s in syms:
            k = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
            chunks.append(prototypes[s] + cfg.noise * rng.standard_normal((k, cfg.dims)))
            labels.extend([int(s)] * k)
        utts.append(ToyUtterance(
            utterance_id=f"toy{u:06d}",
            features=np.concatenate(chunks, axis=0),
            labels=np.array(labels, dtype=np.int64),
            text=" ".join(ToyCorpus.symbol_word(int(s)) for s in syms),
        ))
    n_dev = max(1, int(round(cfg.num_utterances * cfg.dev_fraction)))
    inventory = PhonemeInventory([f"p{s:02d}" for s in range(cfg.num_symbols)])
    return ToyCorpus(cfg, utts[n_dev:], utts[:n_dev], inventory)


@dataclass
class CompareConfig:
    seed: int = 1
    num_epochs: int = 16
    hidden: int = 48
    target_embed_dims: int = 16
    attn_hidden: int = 32
    lr: float = 0.005
    threshold: float = 0.9
    downsample: bool = False  # see module docstring: off keeps pooled inputs
    # above the attention's resolution at toy scale
    stride: Optional[int] = None  # extra fixed-stride condition when set
    corpus: ToyCorpusConfig = field(default_factory=ToyCorpusConfig)


@dataclass
class ConditionReport:
    name: str
    final_dev_accuracy: float
    epochs_to_threshold: Optional[int]
    mean_epoch_seconds: float
    dev_accuracy_per_epoch: list[float]

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "final_dev_accuracy": self.final_dev_accuracy,
            "epochs_to_threshold": self.epochs_to_threshold,
            "mean_epoch_seconds": self.mean_epoch_seconds,
            "dev_accuracy_per_epoch": self.dev_accuracy_per_epoch,
        }


def _pooled_input(utt: ToyUtterance) -> np.ndarray:
    feats = FeatureMatrix(utt.utterance_id, "toy", utt.features)
    ali = FrameAlignment(utt.utterance_id, utt.labels)
    return pool_runs(feats, ali).to_matrix()


def _strided_input(utt: ToyUtterance, stride: int) -> np.ndarray:
    feats = FeatureMatrix(utt.utterance_id, "toy", utt.features)
    return stride_downsample(feats, stride).data


def build_condition_inputs(corpus: ToyCorpus, condition: str,
                           stride: int = 2) -> tuple[list, list]:
    """(train, dev) lists of source matrices for one input representation."""
    if condition == "frames":
        make = lambda u: u.features
    elif condition == "pooled":
        make = _pooled_input
    elif condition == "stride":
        make = lambda u: _strided_input(u, stride)
    else:
        raise ValidationError(f"unknown condition '{condition}'")
    return ([make(u) for u in corpus.train], [make(u) for u in corpus.dev])


def toy_vocab(corpus: ToyCorpus) -> VocabSpec:
    return build_vocab([u.text for u in corpus.train], "words")


def _warm_kernels():
    """Trigger numba compilation outside the timed region."""
    from . import kernels

    data = np.zeros((4, 2))
    kernels.segment_sums(data, np.array([0, 2], dtype=np.int64),
                         np.array([1, 3], dtype=np.int64))
    xz = np.zeros((3, 8))
    w_h = np.zeros((2, 8))
    z = np.zeros(2)
    h, c, gates, hm = kernels.lstm_forward(xz, w_h, z, z, np.ones(2))
    kernels.lstm_backward(np.zeros((3, 2)), gates, c, z,
                          np.ascontiguousarray(w_h.T), np.ones(2))


def run_condition(corpus: ToyCorpus, vocab: VocabSpec, condition: str,
                  cc: CompareConfig) -> tuple[ConditionReport, TrainResult]:
    sources_train, sources_dev = build_condition_inputs(
        corpus, condition, cc.stride or 2)
    targets_train = [tokenize(u.text, vocab) for u in corpus.train]
    targets_dev = [tokenize(u.text, vocab) for u in corpus.dev]
    enc_cfg = EncoderConfig(input_dims=corpus.cfg.dims, hidden=cc.hidden,
                            num_blocks=2, downsample=cc.downsample, norm="layer")
    dec_cfg = DecoderConfig(vocab_size=len(vocab),
                            target_embed_dims=cc.target_embed_dims,
                            attn_hidden=cc.attn_hidden)
    tc = TrainConfig(seed=cc.seed, num_epochs=cc.num_epochs, lr=cc.lr)
    result = train(list(zip(sources_train, targets_train)),
                   list(zip(sources_dev, targets_dev)),
                   enc_cfg, dec_cfg, tc, unk_id=vocab.unk_id)
    accs = [r.dev_metric for r in result.epochs]
    report = ConditionReport(
        name=condition if condition != "stride" else f"stride{cc.stride}",
        final_dev_accuracy=accs[-1],
        epochs_to_threshold=result.epochs_to_threshold(cc.threshold),
        mean_epoch_seconds=float(np.mean([r.wall_time_s for r in result.epochs])),
        dev_accuracy_per_epoch=accs,
    )
    return report, result


def run_compare(cc: CompareConfig,
                corpus: Optional[ToyCorpus] = None) -> dict:
    """Run the full comparison; returns the report as a plain dict."""
    if corpus is None:
        corpus = generate_toy_corpus(cc.corpus)
    vocab = toy_vocab(corpus)
    _warm_kernels()
    t0 = time.perf_counter()
    conditions = ["frames", "pooled"] + (["stride"] if cc.stride else [])
    reports = {}
    for cond in conditions:
        report, _ = run_condition(corpus, vocab, cond, cc)
        reports[report.name] = report
    frames = reports["frames"]
    pooled = reports["pooled"]
    out = {
        "seed": cc.seed,
        "num_epochs": cc.num_epochs,
        "threshold": cc.threshold,
        "num_train": len(corpus.train),
        "num_dev": len(corpus.dev),
        "conditions": {name: rep.as_dict() for name, rep in reports.items()},
        "epoch_time_ratio_pooled_vs_frames":
            pooled.mean_epoch_seconds / frames.mean_epoch_seconds,
        "total_seconds": time.perf_counter() - t0,
    }
    return out


def format_compare_report(report: dict) -> str:
    lines = [
        f"toy comparison (seed={report['seed']}, epochs={report['num_epochs']}, "
        f"train={report['num_train']}, dev={report['num_dev']})",
    ]
    for name, rep in report["conditions"].items():
        reach = rep["epochs_to_threshold"]
        reach_s = str(reach) if reach is not None else "not reached"
        lines.append(
            f"  {name:10s} final_dev_acc={rep['final_dev_accuracy']:.4f}  "
            f"epochs_to_{report['threshold']:.0%}={reach_s}  "
            f"mean_epoch_s={rep['mean_epoch_seconds']:.2f}")
    lines.append(
        f"  pooled/frames epoch time ratio: "
        f"{report['epoch_time_ratio_pooled_vs_frames']:.3f}")
    return "\n".join(lines)

"""Training loop: Adam, decay-on-plateau schedule, dynamic length-based
batching, variational recurrent dropout, target token dropout, label
smoothing, and per-step embedding renormalization.

Batches are gradient-accumulation groups: each sequence is processed on its
own (no padding), gradients are averaged over the batch, and one optimizer
step is taken per batch.  Everything is driven by a single seeded generator,
so a fixed seed reproduces training bitwise.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, ValidationError
from .metrics import token_accuracy
from .model import (DecoderConfig, EncoderConfig, Seq2SeqModel, init_model,
                    make_dropout_masks, pair_forward_backward,
                    renormalize_embedding)


@dataclass
class TrainConfig:
    recurrent_dropout: float = 0.2
    target_token_dropout: float = 0.1
    label_smoothing: float = 0.1
    embed_norm: float = 1.0
    lr: float = 0.0003
    lr_decay: float = 0.5
    patience_initial: int = 10
    patience_after: int = 5
    avg_batch_size: int = 36
    max_src_frames: int = 1500
    beam: int = 15
    len_norm_exp: float = 1.5
    seed: int = 0
    num_epochs: int = 20

    def validate(self):
        for name in ("recurrent_dropout", "target_token_dropout", "label_smoothing"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if min(self.patience_initial, self.patience_after, self.avg_batch_size,
               self.max_src_frames, self.num_epochs) < 1:
            raise ConfigError("patience/batch/length/epoch settings must be >= 1")


class Adam:
    def __init__(self, tensors: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class PlateauLrSchedule:
    """Halve the learning rate when the validation metric stops improving:
    after ``patience_initial`` stale epochs for the first decay, then after
    ``patience_after`` stale epochs for every later decay."""

    def __init__(self, lr: float, decay: float, patience_initial: int,
                 patience_after: int):
        self.lr = lr
        self.decay = decay
        self.patience = patience_initial
        self.patience_after = patience_after
        self.best = -np.inf
        self.stale = 0

    def update(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.decay
                self.stale = 0
                self.patience = self.patience_after
        return self.lr


def make_batches(src_lengths: Sequence[int], avg_batch_size: int) -> list[list[int]]:
    """Group sequence indices into batches by a frame budget.

    Sequences are sorted by length and packed until the batch would exceed
    ``avg_batch_size * median(length)`` frames, so the mean batch size lands
    near ``avg_batch_size`` sequences.
    """
    lengths = np.asarray(src_lengths)
    order = np.argsort(lengths, kind="stable")
    budget = float(avg_batch_size) * float(np.median(lengths))
    batches: list[list[int]] = []
    current: list[int] = []
    current_frames = 0
    for idx in order:
        n = int(lengths[idx])
        if current and current_frames + n > budget:
            batches.append(current)
            current = []
            current_frames = 0
        current.append(int(idx))
        current_frames += n
    if current:
        batches.append(current)
    return batches


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_metric: float
    lr: float
    wall_time_s: float

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "dev_metric": self.dev_metric, "lr": self.lr,
                "wall_time_s": self.wall_time_s}


@dataclass
class TrainResult:
    model: Seq2SeqModel
    epochs: list[EpochRecord]
    num_train: int
    num_filtered: int

    def epochs_to_threshold(self, threshold: float) -> Optional[int]:
        for rec in self.epochs:
            if rec.dev_metric >= threshold:
                return rec.epoch
        return None


def train(train_set: Sequence[tuple[np.ndarray, Sequence[int]]],
          dev_set: Sequence[tuple[np.ndarray, Sequence[int]]],
          enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, cfg: TrainConfig,
          unk_id: int = 3,
          epoch_callback: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train a model on (source matrix, target id sequence) pairs.

    Target id sequences include <s> and </s>.  Sources longer than
    ``cfg.max_src_frames`` are excluded up front.
    """
    cfg.validate()
    if not train_set:
        raise ValidationError("empty training set")
    kept = [(np.asarray(src, dtype=np.float64), np.asarray(tgt, dtype=np.int64))
            for src, tgt in train_set
            if np.asarray(src).shape[0] <= cfg.max_src_frames]
    num_filtered = len(train_set) - len(kept)
    if not kept:
        raise ValidationError(
            f"no training utterances left after excluding sources longer than "
            f"{cfg.max_src_frames} frames")
    dev = [(np.asarray(src, dtype=np.float64), np.asarray(tgt, dtype=np.int64))
           for src, tgt in dev_set]

    model = init_model(enc_cfg, dec_cfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    adam = Adam(model.params.tensors, cfg.lr)
    sched = PlateauLrSchedule(cfg.lr, cfg.lr_decay, cfg.patience_initial,
                              cfg.patience_after)
    batches = make_batches([src.shape[0] for src, _ in kept], cfg.avg_batch_size)

    records: list[EpochRecord] = []
    for epoch in range(1, cfg.num_epochs + 1):
        t0 = time.perf_counter()
        lr_used = sched.lr
        adam.lr = lr_used
        order = rng.permutation(len(batches))
        loss_sum = 0.0
        n_seqs = 0
        for b in order:
            batch = batches[b]
            grads_acc = None
            for idx in batch:
                src, tgt = kept[idx]
                masks = make_dropout_masks(enc_cfg, rng, cfg.recurrent_dropout)
                tgt_in = tgt[:-1].copy()
                tgt_out = tgt[1:]
                if cfg.target_token_dropout > 0 and tgt_in.shape[0] > 1:
                    drop = rng.random(tgt_in.shape[0] - 1) < cfg.target_token_dropout
                    tgt_in[1:][drop] = unk_id  # never drop <s>
                loss, grads = pair_forward_backward(
                    model, src, tgt_in, tgt_out, cfg.label_smoothing, masks)
                loss_sum += loss
                n_seqs += 1
                if grads_acc is None:
                    grads_acc = grads
                else:
                    for k, g in grads.items():
                        grads_acc[k] += g
            scale = 1.0 / len(batch)
            for g in grads_acc.values():
                g *= scale
            adam.step(model.params.tensors, grads_acc)
            renormalize_embedding(model.params, cfg.embed_norm)
        dev_metric = token_accuracy(model, dev) if dev else 0.0
        sched.update(dev_metric)
        rec = EpochRecord(epoch, loss_sum / n_seqs, dev_metric, lr_used,
                          time.perf_counter() - t0)
        records.append(rec)
        if epoch_callback is not None:
            epoch_callback(rec)
    return TrainResult(model, records, len(kept), num_filtered)

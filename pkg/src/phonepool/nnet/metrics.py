"""Evaluation metrics: teacher-forced token accuracy and corpus BLEU."""

from collections import Counter
from typing import Sequence

import numpy as np


def token_accuracy(model, pairs) -> float:
    """Fraction of target positions predicted correctly under teacher
    forcing (eval mode, no dropout)."""
    from .model import decoder_teacher_forced, encoder_forward

    correct = 0
    total = 0
    for src, tgt in pairs:
        tgt = np.asarray(tgt, dtype=np.int64)
        enc, _ = encoder_forward(src, model.enc_cfg, model.params, "eval")
        logits, _, _ = decoder_teacher_forced(model, enc, tgt[:-1])
        pred = logits.argmax(axis=1)
        correct += int((pred == tgt[1:]).sum())
        total += int(tgt.shape[0] - 1)
    return correct / total if total else 0.0


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence],
                max_n: int = 4) -> float:
    """Plain corpus-level BLEU (geometric mean of modified n-gram precisions
    with brevity penalty, no smoothing)."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    matched = np.zeros(max_n)
    totals = np.zeros(max_n)
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            totals[n - 1] += max(len(hyp) - n + 1, 0)
            matched[n - 1] += sum(min(c, r[g]) for g, c in h.items())
    if hyp_len == 0 or np.any(totals == 0) or np.any(matched == 0):
        return 0.0
    log_prec = np.log(matched / totals).mean()
    bp = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    return float(bp * np.exp(log_prec))

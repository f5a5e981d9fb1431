"""Greedy and beam-search decoding with length normalization.

Finished hypotheses are ranked by ``logprob / length**alpha`` where length
counts generated tokens including </s>; ties prefer the lexicographically
smaller token-id sequence.  The maximum output length is 3x the encoder
length plus 10.
"""

from dataclasses import dataclass, field

import numpy as np

from .layers import attention_project, log_softmax
from .model import Seq2SeqModel, decoder_step, encoder_forward


@dataclass
class Hypothesis:
    tokens: list[int]  # generated ids, includes </s> when emitted
    logprob: float
    state: tuple = field(repr=False, default=None)
    context: np.ndarray = field(repr=False, default=None)
    finished: bool = False

    def output(self, eos_id: int) -> list[int]:
        return [t for t in self.tokens if t != eos_id]


def rank_score(logprob: float, length: int, len_norm_exp: float) -> float:
    return logprob / (max(length, 1) ** len_norm_exp)


def max_output_length(enc_len: int) -> int:
    return 3 * enc_len + 10


def greedy_decode(model: Seq2SeqModel, src, bos_id: int, eos_id: int) -> list[int]:
    """Argmax decoding; ties resolve to the lowest token id."""
    enc, _ = encoder_forward(src, model.enc_cfg, model.params, "eval")
    proj_enc = attention_project(enc, model.params.tensors["att.w_enc"],
                                 model.params.tensors["att.b"])
    hidden = model.enc_cfg.hidden
    state = (np.zeros(hidden), np.zeros(hidden))
    context = np.zeros(hidden)
    prev = bos_id
    tokens: list[int] = []
    for _ in range(max_output_length(enc.shape[0])):
        state, context, logits, _w, _c = decoder_step(
            model, enc, proj_enc, prev, state, context)
        tok = int(logits.argmax())
        tokens.append(tok)
        if tok == eos_id:
            break
        prev = tok
    return tokens


def beam_search(model: Seq2SeqModel, src, beam: int, len_norm_exp: float,
                bos_id: int, eos_id: int) -> Hypothesis:
    """Standard beam expansion over raw log-probabilities; the final ranking
    applies length normalization."""
    enc, _ = encoder_forward(src, model.enc_cfg, model.params, "eval")
    proj_enc = attention_project(enc, model.params.tensors["att.w_enc"],
                                 model.params.tensors["att.b"])
    hidden = model.enc_cfg.hidden
    start = Hypothesis(tokens=[], logprob=0.0,
                       state=(np.zeros(hidden), np.zeros(hidden)),
                       context=np.zeros(hidden))
    live = [start]
    finished: list[Hypothesis] = []
    for _ in range(max_output_length(enc.shape[0])):
        candidates: list[Hypothesis] = []
        for hyp in live:
            prev = hyp.tokens[-1] if hyp.tokens else bos_id
            state, context, logits, _w, _c = decoder_step(
                model, enc, proj_enc, prev, hyp.state, hyp.context)
            logp = log_softmax(logits)
            top = np.argsort(-logp, kind="stable")[:beam]
            for tok in top:
                tok = int(tok)
                candidates.append(Hypothesis(
                    tokens=hyp.tokens + [tok],
                    logprob=hyp.logprob + float(logp[tok]),
                    state=state, context=context, finished=tok == eos_id))
        candidates.sort(key=lambda h: (-h.logprob, h.tokens))
        selected = candidates[:beam]
        live = []
        for hyp in selected:
            (finished if hyp.finished else live).append(hyp)
        if not live:
            break
    finished.extend(live)  # length budget exhausted
    finished.sort(key=lambda h: (-rank_score(h.logprob, len(h.tokens), len_norm_exp),
                                 h.tokens))
    return finished[0]

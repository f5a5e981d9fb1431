"""Desk-scale encoder-attention-decoder with manual backprop.

Everything is float64 numpy; the LSTM recurrences run through the kernels in
``phonepool.kernels`` (numba-jitted by default).  Training is single-threaded
and bitwise deterministic for a given seed.
"""

from .model import (DecoderConfig, EncoderConfig, ModelParams, Seq2SeqModel,
                    decoder_step, encoder_forward, encoder_output_length,
                    init_model, load_checkpoint, save_checkpoint)
from .layers import smoothed_ce_loss, attention_forward
from .train import TrainConfig, Adam, PlateauLrSchedule, train, make_batches
from .search import beam_search, greedy_decode, Hypothesis, rank_score
from .gradcheck import grad_check, standard_gradcheck_battery, GradCheckResult
from .metrics import token_accuracy, corpus_bleu

__all__ = [
    "DecoderConfig", "EncoderConfig", "ModelParams", "Seq2SeqModel",
    "decoder_step", "encoder_forward", "encoder_output_length", "init_model",
    "load_checkpoint", "save_checkpoint", "smoothed_ce_loss",
    "attention_forward", "TrainConfig", "Adam", "PlateauLrSchedule", "train",
    "make_batches", "beam_search", "greedy_decode", "Hypothesis", "rank_score",
    "grad_check", "standard_gradcheck_battery", "GradCheckResult",
    "token_accuracy", "corpus_bleu",
]

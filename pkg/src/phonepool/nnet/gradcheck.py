"""Finite-difference gradient verification for every differentiable block.

Central differences in double precision; the per-tensor error is
``max|analytic - numeric| / max(||analytic||_inf, ||numeric||_inf, 1e-8)``.
A non-finite analytic gradient is reported as a failure naming the tensor.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .model import (DecoderConfig, EncoderConfig, decoder_backward,
                    decoder_teacher_forced, encoder_backward, encoder_forward,
                    init_model, pair_forward_backward)


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    nonfinite: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.nonfinite and np.isfinite(self.max_rel_err)


def grad_check(fn, params: dict[str, np.ndarray], eps: float = 1e-5,
               name: str = "module") -> GradCheckResult:
    """fn(params, compute_grads) -> (loss, grads-or-None).

    Compares the analytic gradients against central finite differences for
    every entry of every tensor in ``params``.
    """
    _, grads = fn(params, True)
    nonfinite = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if nonfinite:
        return GradCheckResult(name, np.inf, {}, nonfinite)
    per_tensor: dict[str, float] = {}
    for key, theta in params.items():
        ana = grads[key]
        num = np.zeros_like(theta)
        flat_t = theta.ravel()
        flat_n = num.ravel()
        for j in range(flat_t.size):
            orig = flat_t[j]
            flat_t[j] = orig + eps
            lp, _ = fn(params, False)
            flat_t[j] = orig - eps
            lm, _ = fn(params, False)
            flat_t[j] = orig
            flat_n[j] = (lp - lm) / (2.0 * eps)
        scale = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-8)
        per_tensor[key] = float(np.abs(ana - num).max(initial=0.0) / scale)
    return GradCheckResult(name, max(per_tensor.values()), per_tensor, [])


# ---------------------------------------------------------------------------
# Standard battery
# ---------------------------------------------------------------------------

def _attention_case(rng):
    t_enc, hidden, attn = 5, 6, 8
    s = rng.standard_normal(hidden)
    enc = rng.standard_normal((t_enc, hidden))
    r = rng.standard_normal(hidden)
    params = {
        "w_s": rng.standard_normal((hidden, attn)) * 0.5,
        "w_enc": rng.standard_normal((hidden, attn)) * 0.5,
        "b": rng.standard_normal(attn) * 0.1,
        "v": rng.standard_normal(attn) * 0.5,
    }

    def fn(p, compute_grads):
        proj = layers.attention_project(enc, p["w_enc"], p["b"])
        ctx, _, cache = layers.attention_forward(s, enc, proj, p["w_s"], p["v"])
        loss = float(r @ ctx)
        if not compute_grads:
            return loss, None
        _, _, dproj, dw_s, dv = layers.attention_backward(cache, r)
        return loss, {"w_s": dw_s, "v": dv,
                      "w_enc": enc.T @ dproj, "b": dproj.sum(axis=0)}

    return "attention", fn, params, 1e-4


def _lstm_cell_case(rng):
    d_in, hidden = 3, 4
    inp = rng.standard_normal(d_in)
    h_prev = rng.standard_normal(hidden) * 0.5
    c_prev = rng.standard_normal(hidden) * 0.5
    rh = rng.standard_normal(hidden)
    rc = rng.standard_normal(hidden)
    mask = np.ones(hidden)
    params = {
        "w_x": rng.standard_normal((d_in, 4 * hidden)) * 0.5,
        "w_h": rng.standard_normal((hidden, 4 * hidden)) * 0.5,
        "b": rng.standard_normal(4 * hidden) * 0.1,
    }

    def fn(p, compute_grads):
        h, c, cache = layers.lstm_cell_forward(inp, h_prev, c_prev,
                                               p["w_x"], p["w_h"], p["b"], mask)
        loss = float(rh @ h + rc @ c)
        if not compute_grads:
            return loss, None
        # dh flows via rh; dc via rc
        _, _, _, dw_x, dw_h, dz = layers.lstm_cell_backward(cache, rh, rc)
        return loss, {"w_x": dw_x, "w_h": dw_h, "b": dz}

    return "lstm_cell", fn, params, 1e-4


def _lstm_seq_case(rng):
    t_len, d_in, hidden = 6, 3, 4
    x = rng.standard_normal((t_len, d_in))
    r = rng.standard_normal((t_len, hidden))
    mask = np.ones(hidden)
    params = {
        "w_x": rng.standard_normal((d_in, 4 * hidden)) * 0.5,
        "w_h": rng.standard_normal((hidden, 4 * hidden)) * 0.5,
        "b": rng.standard_normal(4 * hidden) * 0.1,
    }

    def fn(p, compute_grads):
        h, cache = layers.lstm_seq_forward(x, p["w_x"], p["w_h"], p["b"], mask)
        loss = float((r * h).sum())
        if not compute_grads:
            return loss, None
        _, dw_x, dw_h, db = layers.lstm_seq_backward(cache, r)
        return loss, {"w_x": dw_x, "w_h": dw_h, "b": db}

    return "lstm_sequence", fn, params, 1e-4


def _nin_block_case(rng):
    t_len, d_in, d_out = 6, 8, 4
    x = rng.standard_normal((t_len, d_in))
    r = rng.standard_normal((t_len, d_out))
    running_mean = np.zeros(d_out)
    running_var = np.ones(d_out)
    params = {
        "w": rng.standard_normal((d_in, d_out)) * 0.5,
        "gamma": 1.0 + 0.1 * rng.standard_normal(d_out),
        "beta": 0.1 * rng.standard_normal(d_out),
    }

    def fn(p, compute_grads):
        z = x @ p["w"]
        zn, cache, _, _ = layers.batchnorm_forward(
            z, p["gamma"], p["beta"], running_mean, running_var, train=True)
        out = np.maximum(zn, 0.0)
        loss = float((r * out).sum())
        if not compute_grads:
            return loss, None
        dzn = r * (zn > 0.0)
        dz, dgamma, dbeta = layers.batchnorm_backward(cache, dzn)
        return loss, {"w": x.T @ dz, "gamma": dgamma, "beta": dbeta}

    return "nin_block_batchnorm", fn, params, 1e-3


def _encoder_case(rng, downsample=True):
    cfg = EncoderConfig(input_dims=3, hidden=4, num_blocks=2,
                        downsample=downsample, norm="batch")
    dec_cfg = DecoderConfig(vocab_size=5, target_embed_dims=3, attn_hidden=3)
    model = init_model(cfg, dec_cfg, seed=7)
    x = rng.standard_normal((7, 3))
    t_out = 2 if downsample else 7
    r = rng.standard_normal((t_out, cfg.hidden))
    params = {k: v for k, v in model.params.tensors.items() if k.startswith("enc.")}

    def fn(p, compute_grads):
        model.params.tensors.update(p)
        enc, cache = encoder_forward(x, cfg, model.params, "train",
                                     update_stats=False)
        loss = float((r * enc).sum())
        if not compute_grads:
            return loss, None
        grads = encoder_backward(cache, r)
        return loss, grads

    return "encoder_train_batchnorm", fn, params, 1e-3


def _decoder_step_case(rng):
    enc_cfg = EncoderConfig(input_dims=3, hidden=4, num_blocks=1)
    dec_cfg = DecoderConfig(vocab_size=5, target_embed_dims=3, attn_hidden=3)
    model = init_model(enc_cfg, dec_cfg, seed=11)
    enc = rng.standard_normal((4, enc_cfg.hidden))
    in_tokens = [1, 3, 0]
    dlogits = rng.standard_normal((len(in_tokens), dec_cfg.vocab_size))
    keys = [k for k in model.params.tensors
            if k.startswith(("dec.", "att.", "out."))]
    params = {k: model.params.tensors[k] for k in keys}

    def fn(p, compute_grads):
        model.params.tensors.update(p)
        logits, caches, proj_enc = decoder_teacher_forced(model, enc, in_tokens)
        loss = float((dlogits * logits).sum())
        if not compute_grads:
            return loss, None
        grads, _ = decoder_backward(model, enc, proj_enc, caches, dlogits)
        return loss, grads

    return "decoder_steps", fn, params, 1e-4


def _smoothed_loss_case(rng):
    n, vocab = 4, 3
    gold = np.array([0, 2, 1, 1])
    params = {"logits": rng.standard_normal((n, vocab))}

    def fn(p, compute_grads):
        loss, dlogits = layers.smoothed_ce_loss(p["logits"], gold, 0.1)
        return loss, ({"logits": dlogits} if compute_grads else None)

    return "smoothed_loss", fn, params, 1e-4


def _full_model_case(rng):
    enc_cfg = EncoderConfig(input_dims=3, hidden=4, num_blocks=2,
                            downsample=True, norm="batch")
    dec_cfg = DecoderConfig(vocab_size=5, target_embed_dims=3, attn_hidden=3)
    model = init_model(enc_cfg, dec_cfg, seed=3)
    src = rng.standard_normal((9, 3))
    tgt = np.array([1, 4, 3, 2])  # <s> y y </s>
    params = dict(model.params.tensors)

    def fn(p, compute_grads):
        model.params.tensors.update(p)
        loss, grads = pair_forward_backward(model, src, tgt[:-1], tgt[1:],
                                            smoothing=0.1, update_stats=False)
        return loss, (grads if compute_grads else None)

    return "full_model", fn, params, 1e-3


def standard_gradcheck_battery(eps: float = 1e-5):
    """Run every case; returns a list of (result, tolerance)."""
    rng = np.random.default_rng(2024)
    cases = [
        _attention_case(rng),
        _lstm_cell_case(rng),
        _lstm_seq_case(rng),
        _nin_block_case(rng),
        _encoder_case(rng),
        _decoder_step_case(rng),
        _smoothed_loss_case(rng),
        _full_model_case(rng),
    ]
    out = []
    for name, fn, params, tol in cases:
        out.append((grad_check(fn, params, eps=eps, name=name), tol))
    return out

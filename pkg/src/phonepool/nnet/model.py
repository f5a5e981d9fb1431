"""Model definition: LSTM/NiN pyramidal encoder, MLP attention, single-layer
LSTM decoder with input feeding, plus checkpoint serialization.

The encoder stacks ``num_blocks`` blocks of (BiLSTM -> NiN projection ->
normalization -> ReLU) followed by one final BiLSTM.  With downsampling on,
each NiN projects the concatenation of adjacent timestep pairs, halving time
per block (odd lengths are zero-padded to even first), for a total 4x
reduction with the default two blocks.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, ValidationError
from . import layers


@dataclass
class EncoderConfig:
    input_dims: int = 40
    hidden: int = 512
    num_blocks: int = 2
    downsample: bool = True
    norm: str = "batch"  # "batch" or "layer"

    def validate(self):
        if self.hidden % 2:
            raise ConfigError("encoder hidden size must be even (bidirectional split)")
        if self.num_blocks < 1:
            raise ConfigError("need at least one LSTM/NiN block")
        if self.norm not in ("batch", "layer"):
            raise ConfigError(f"unknown norm '{self.norm}'")
        if self.input_dims < 1 or self.hidden < 2:
            raise ConfigError("input_dims and hidden must be positive")


@dataclass
class DecoderConfig:
    vocab_size: int
    target_embed_dims: int = 64
    attn_hidden: int = 128
    decoder_layers: int = 1

    def validate(self):
        if min(self.vocab_size, self.target_embed_dims, self.attn_hidden,
               self.decoder_layers) < 1:
            raise ConfigError("decoder config values must be positive")
        if self.decoder_layers != 1:
            raise ConfigError("only a single decoder layer is supported")


@dataclass
class ModelParams:
    tensors: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def zero_like_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def check_finite(self):
        for k, v in self.tensors.items():
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"parameter '{k}' contains non-finite values")


@dataclass
class Seq2SeqModel:
    enc_cfg: EncoderConfig
    dec_cfg: DecoderConfig
    params: ModelParams


def _glorot(rng, shape):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def _lstm_init(rng, tensors, prefix, in_dim, hidden):
    tensors[f"{prefix}.w_x"] = _glorot(rng, (in_dim, 4 * hidden))
    tensors[f"{prefix}.w_h"] = _glorot(rng, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    tensors[f"{prefix}.b"] = b


def init_model(enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
               seed: int) -> Seq2SeqModel:
    enc_cfg.validate()
    dec_cfg.validate()
    rng = np.random.default_rng(seed)
    hidden = enc_cfg.hidden
    h2 = hidden // 2
    tensors: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    in_dim = enc_cfg.input_dims
    for i in range(enc_cfg.num_blocks):
        pfx = f"enc.b{i}"
        _lstm_init(rng, tensors, f"{pfx}.fwd", in_dim, h2)
        _lstm_init(rng, tensors, f"{pfx}.bwd", in_dim, h2)
        nin_in = 2 * hidden if enc_cfg.downsample else hidden
        tensors[f"{pfx}.nin.w"] = _glorot(rng, (nin_in, hidden))
        tensors[f"{pfx}.norm.gamma"] = np.ones(hidden)
        tensors[f"{pfx}.norm.beta"] = np.zeros(hidden)
        buffers[f"{pfx}.norm.mean"] = np.zeros(hidden)
        buffers[f"{pfx}.norm.var"] = np.ones(hidden)
        in_dim = hidden
    _lstm_init(rng, tensors, "enc.final.fwd", hidden, h2)
    _lstm_init(rng, tensors, "enc.final.bwd", hidden, h2)

    embed = rng.standard_normal((dec_cfg.vocab_size, dec_cfg.target_embed_dims))
    embed /= np.linalg.norm(embed, axis=1, keepdims=True)
    tensors["dec.embed"] = embed
    _lstm_init(rng, tensors, "dec.lstm",
               dec_cfg.target_embed_dims + hidden, hidden)
    tensors["att.w_s"] = _glorot(rng, (hidden, dec_cfg.attn_hidden))
    tensors["att.w_enc"] = _glorot(rng, (hidden, dec_cfg.attn_hidden))
    tensors["att.b"] = np.zeros(dec_cfg.attn_hidden)
    tensors["att.v"] = rng.uniform(-1, 1, size=dec_cfg.attn_hidden) / np.sqrt(
        dec_cfg.attn_hidden)
    tensors["out.w"] = _glorot(rng, (2 * hidden, dec_cfg.vocab_size))
    tensors["out.b"] = np.zeros(dec_cfg.vocab_size)
    return Seq2SeqModel(enc_cfg, dec_cfg, ModelParams(tensors, buffers))


def renormalize_embedding(params: ModelParams, norm: float = 1.0):
    """Fix every target embedding row to the given L2 norm (in place)."""
    embed = params.tensors["dec.embed"]
    norms = np.linalg.norm(embed, axis=1, keepdims=True)
    embed *= norm / np.maximum(norms, 1e-12)


def encoder_output_length(t: int, cfg: EncoderConfig) -> int:
    if not cfg.downsample:
        return t
    for _ in range(cfg.num_blocks):
        t = (t + 1) // 2
    return t


def make_dropout_masks(enc_cfg: EncoderConfig, rng, p: float) -> dict[str, np.ndarray]:
    """One recurrent mask per layer and direction, reused at every timestep."""
    h2 = enc_cfg.hidden // 2
    names = [f"enc.b{i}.{d}" for i in range(enc_cfg.num_blocks)
             for d in ("fwd", "bwd")]
    names += ["enc.final.fwd", "enc.final.bwd"]
    masks = {n: layers.dropout_mask(rng, h2, p) for n in names}
    masks["dec.lstm"] = layers.dropout_mask(rng, enc_cfg.hidden, p)
    return masks


def _ones_masks(enc_cfg: EncoderConfig) -> dict[str, np.ndarray]:
    h2 = enc_cfg.hidden // 2
    masks = {}
    for i in range(enc_cfg.num_blocks):
        masks[f"enc.b{i}.fwd"] = np.ones(h2)
        masks[f"enc.b{i}.bwd"] = np.ones(h2)
    masks["enc.final.fwd"] = np.ones(h2)
    masks["enc.final.bwd"] = np.ones(h2)
    masks["dec.lstm"] = np.ones(enc_cfg.hidden)
    return masks


def encoder_forward(x, cfg: EncoderConfig, params: ModelParams, mode: str = "eval",
                    masks: Optional[dict] = None, update_stats: bool = True):
    """x: (T, input_dims) -> (encoder states (T', hidden), cache)."""
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got '{mode}'")
    train = mode == "train"
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("encoder input must be a non-empty (T, dims) matrix")
    if x.shape[1] != cfg.input_dims:
        raise ValidationError(
            f"encoder input has {x.shape[1]} dims, config expects {cfg.input_dims}")
    if masks is None:
        masks = _ones_masks(cfg)
    t = params.tensors
    h = x
    block_caches = []
    for i in range(cfg.num_blocks):
        pfx = f"enc.b{i}"
        p_f = (t[f"{pfx}.fwd.w_x"], t[f"{pfx}.fwd.w_h"], t[f"{pfx}.fwd.b"])
        p_b = (t[f"{pfx}.bwd.w_x"], t[f"{pfx}.bwd.w_h"], t[f"{pfx}.bwd.b"])
        h_lstm, lstm_cache = layers.bilstm_forward(
            h, p_f, p_b, masks[f"{pfx}.fwd"], masks[f"{pfx}.bwd"])
        t_in = h_lstm.shape[0]
        if cfg.downsample:
            padded = bool(t_in % 2)
            if padded:
                h_lstm = np.vstack([h_lstm, np.zeros((1, h_lstm.shape[1]))])
            hcat = h_lstm.reshape(-1, 2 * cfg.hidden)
        else:
            padded = False
            hcat = h_lstm
        z = hcat @ t[f"{pfx}.nin.w"]
        if cfg.norm == "batch":
            zn, norm_cache, new_mean, new_var = layers.batchnorm_forward(
                z, t[f"{pfx}.norm.gamma"], t[f"{pfx}.norm.beta"],
                params.buffers[f"{pfx}.norm.mean"],
                params.buffers[f"{pfx}.norm.var"], train)
            if train and update_stats:
                params.buffers[f"{pfx}.norm.mean"] = new_mean
                params.buffers[f"{pfx}.norm.var"] = new_var
        else:
            zn, norm_cache = layers.layernorm_forward(
                z, t[f"{pfx}.norm.gamma"], t[f"{pfx}.norm.beta"])
        out = np.maximum(zn, 0.0)
        block_caches.append((lstm_cache, padded, t_in, hcat, norm_cache, zn,
                             t[f"{pfx}.nin.w"]))
        h = out
    p_f = (t["enc.final.fwd.w_x"], t["enc.final.fwd.w_h"], t["enc.final.fwd.b"])
    p_b = (t["enc.final.bwd.w_x"], t["enc.final.bwd.w_h"], t["enc.final.bwd.b"])
    enc, final_cache = layers.bilstm_forward(
        h, p_f, p_b, masks["enc.final.fwd"], masks["enc.final.bwd"])
    return enc, (block_caches, final_cache, cfg)


def encoder_backward(cache, denc) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss wrt all encoder parameters, given the
    gradient on the encoder states."""
    block_caches, final_cache, cfg = cache
    grads: dict[str, np.ndarray] = {}

    def put(prefix, fwd_grads, bwd_grads):
        grads[f"{prefix}.fwd.w_x"], grads[f"{prefix}.fwd.w_h"], grads[f"{prefix}.fwd.b"] = fwd_grads
        grads[f"{prefix}.bwd.w_x"], grads[f"{prefix}.bwd.w_h"], grads[f"{prefix}.bwd.b"] = bwd_grads

    dh, gf, gb = layers.bilstm_backward(final_cache, denc)
    put("enc.final", gf, gb)
    for i in range(cfg.num_blocks - 1, -1, -1):
        pfx = f"enc.b{i}"
        lstm_cache, padded, t_in, hcat, norm_cache, zn, nin_w = block_caches[i]
        dzn = dh * (zn > 0.0)
        if cfg.norm == "batch":
            dz, dgamma, dbeta = layers.batchnorm_backward(norm_cache, dzn)
        else:
            dz, dgamma, dbeta = layers.layernorm_backward(norm_cache, dzn)
        grads[f"{pfx}.norm.gamma"] = dgamma
        grads[f"{pfx}.norm.beta"] = dbeta
        grads[f"{pfx}.nin.w"] = hcat.T @ dz
        dhcat = dz @ nin_w.T
        if cfg.downsample:
            dh_lstm = dhcat.reshape(-1, cfg.hidden)
            if padded:
                dh_lstm = dh_lstm[:t_in]
        else:
            dh_lstm = dhcat
        dh, gf, gb = layers.bilstm_backward(lstm_cache, dh_lstm)
        put(pfx, gf, gb)
    return grads


def decoder_step(model: Seq2SeqModel, enc, proj_enc, prev_token_id: int,
                 prev_state, prev_context, mask=None):
    """One decoder step: input feeding + attention + output projection.

    prev_state is an (h, c) pair.  Returns (state, context, logits,
    attention weights, cache).
    """
    t = model.params.tensors
    vocab = model.dec_cfg.vocab_size
    if not 0 <= prev_token_id < vocab:
        raise ValidationError(f"token id {prev_token_id} out of range [0, {vocab})")
    if mask is None:
        mask = np.ones(model.enc_cfg.hidden)
    h_prev, c_prev = prev_state
    emb = t["dec.embed"][prev_token_id]
    inp = np.concatenate([emb, prev_context])
    h, c, cell_cache = layers.lstm_cell_forward(
        inp, h_prev, c_prev, t["dec.lstm.w_x"], t["dec.lstm.w_h"],
        t["dec.lstm.b"], mask)
    context, weights, att_cache = layers.attention_forward(
        h, enc, proj_enc, t["att.w_s"], t["att.v"])
    sc = np.concatenate([h, context])
    logits = sc @ t["out.w"] + t["out.b"]
    cache = (prev_token_id, cell_cache, att_cache, sc)
    return (h, c), context, logits, weights, cache


def decoder_teacher_forced(model: Seq2SeqModel, enc, in_tokens, mask=None):
    """Run the decoder over a gold input token sequence.

    Returns (logits (N, V), step caches, proj_enc) for the backward pass.
    """
    t = model.params.tensors
    proj_enc = layers.attention_project(enc, t["att.w_enc"], t["att.b"])
    hidden = model.enc_cfg.hidden
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    context = np.zeros(hidden)
    logits_rows = np.empty((len(in_tokens), model.dec_cfg.vocab_size))
    caches = []
    state = (h, c)
    for i, tok in enumerate(in_tokens):
        state, context, logits, _w, cache = decoder_step(
            model, enc, proj_enc, int(tok), state, context, mask)
        logits_rows[i] = logits
        caches.append(cache)
    return logits_rows, caches, proj_enc


def decoder_backward(model: Seq2SeqModel, enc, proj_enc, caches, dlogits):
    """Backprop through all decoder steps; returns (grads, denc)."""
    t = model.params.tensors
    hidden = model.enc_cfg.hidden
    embed_dims = model.dec_cfg.target_embed_dims
    grads = {k: np.zeros_like(v) for k, v in t.items()
             if k.startswith(("dec.", "att.", "out."))}
    denc = np.zeros_like(enc)
    dproj = np.zeros_like(proj_enc)
    ds_next = np.zeros(hidden)
    dc_next = np.zeros(hidden)
    dctx_next = np.zeros(hidden)
    for i in range(len(caches) - 1, -1, -1):
        tok, cell_cache, att_cache, sc = caches[i]
        dl = dlogits[i]
        grads["out.w"] += np.outer(sc, dl)
        grads["out.b"] += dl
        dsc = t["out.w"] @ dl
        ds = dsc[:hidden] + ds_next
        dctx = dsc[hidden:] + dctx_next
        ds_att, denc_t, dproj_t, dw_s, dv = layers.attention_backward(att_cache, dctx)
        denc += denc_t
        dproj += dproj_t
        grads["att.w_s"] += dw_s
        grads["att.v"] += dv
        ds += ds_att
        dinp, ds_prev, dc_prev, dw_x, dw_h, db = layers.lstm_cell_backward(
            cell_cache, ds, dc_next)
        grads["dec.lstm.w_x"] += dw_x
        grads["dec.lstm.w_h"] += dw_h
        grads["dec.lstm.b"] += db
        grads["dec.embed"][tok] += dinp[:embed_dims]
        dctx_next = dinp[embed_dims:]
        ds_next = ds_prev
        dc_next = dc_prev
    grads["att.w_enc"] += enc.T @ dproj
    grads["att.b"] += dproj.sum(axis=0)
    denc += dproj @ t["att.w_enc"].T
    return grads, denc


def pair_forward_backward(model: Seq2SeqModel, src, tgt_in, tgt_out,
                          smoothing: float, masks: Optional[dict] = None,
                          update_stats: bool = True):
    """Training forward+backward for one (source, target) pair.

    Returns (loss, grads) with grads covering every trainable tensor.
    """
    enc, enc_cache = encoder_forward(src, model.enc_cfg, model.params, "train",
                                     masks, update_stats=update_stats)
    dec_mask = masks["dec.lstm"] if masks is not None else None
    logits, caches, proj_enc = decoder_teacher_forced(model, enc, tgt_in, dec_mask)
    loss, dlogits = layers.smoothed_ce_loss(logits, np.asarray(tgt_out), smoothing)
    dec_grads, denc = decoder_backward(model, enc, proj_enc, caches, dlogits)
    enc_grads = encoder_backward(enc_cache, denc)
    grads = {**enc_grads, **dec_grads}
    return loss, grads


# ---------------------------------------------------------------------------
# Checkpoints: single npz with a JSON metadata entry
# ---------------------------------------------------------------------------

CKPT_FORMAT = "phonepool-checkpoint-1"


def vocab_fingerprint(id_to_token: list[str]) -> str:
    return hashlib.sha256("\n".join(id_to_token).encode("utf-8")).hexdigest()


def save_checkpoint(path: str, model: Seq2SeqModel, vocab_hash: str = "",
                    seed: int = 0) -> None:
    meta = {
        "format": CKPT_FORMAT,
        "encoder": asdict(model.enc_cfg),
        "decoder": asdict(model.dec_cfg),
        "vocab_sha256": vocab_hash,
        "seed": int(seed),
        "tensors": sorted(model.params.tensors),
        "buffers": sorted(model.params.buffers),
    }
    arrays = {f"p/{k}": v for k, v in model.params.tensors.items()}
    arrays.update({f"b/{k}": v for k, v in model.params.buffers.items()})
    meta_bytes = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, __meta__=meta_bytes, **arrays)


def load_checkpoint(path: str) -> tuple[Seq2SeqModel, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format") != CKPT_FORMAT:
            raise ValidationError(f"not a recognized checkpoint: {path}")
        tensors = {k: data[f"p/{k}"] for k in meta["tensors"]}
        buffers = {k: data[f"b/{k}"] for k in meta["buffers"]}
    enc_cfg = EncoderConfig(**meta["encoder"])
    dec_cfg = DecoderConfig(**meta["decoder"])
    model = Seq2SeqModel(enc_cfg, dec_cfg, ModelParams(tensors, buffers))
    return model, meta

"""Forward/backward primitives: LSTM layers, normalization, MLP attention,
label-smoothed cross-entropy.

All functions are pure; caches returned by the forward passes carry exactly
what the matching backward pass needs.  Single sequences only (time x dims),
no batch axis: batches are handled upstream by gradient accumulation.
"""

import numpy as np

from .. import kernels


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def dropout_mask(rng, size: int, p: float) -> np.ndarray:
    """Inverted-dropout mask; ones when p == 0."""
    if p <= 0.0:
        return np.ones(size)
    return (rng.random(size) >= p) / (1.0 - p)


# ---------------------------------------------------------------------------
# LSTM over a full sequence (encoder layers)
# ---------------------------------------------------------------------------

def lstm_seq_forward(x, w_x, w_h, b, mask):
    """x: (T, D) -> h: (T, H). Initial state is zero."""
    x = np.ascontiguousarray(x)
    H = w_h.shape[0]
    xz = x @ w_x + b
    h0 = np.zeros(H)
    c0 = np.zeros(H)
    h, c, gates, hm = kernels.lstm_forward(xz, w_h, h0, c0, mask)
    cache = (x, w_x, w_h, mask, c, c0, gates, hm)
    return h, cache


def lstm_seq_backward(cache, dh):
    x, w_x, w_h, mask, c, c0, gates, hm = cache
    w_h_t = np.ascontiguousarray(w_h.T)
    dz, _dh0 = kernels.lstm_backward(np.ascontiguousarray(dh), gates, c, c0,
                                     w_h_t, mask)
    dw_x = x.T @ dz
    dw_h = hm.T @ dz
    db = dz.sum(axis=0)
    dx = dz @ w_x.T
    return dx, dw_x, dw_h, db


def bilstm_forward(x, p_fwd, p_bwd, mask_fwd, mask_bwd):
    """p_* = (w_x, w_h, b). Output concatenates both directions: (T, 2H)."""
    h_f, cache_f = lstm_seq_forward(x, *p_fwd, mask_fwd)
    x_rev = np.ascontiguousarray(x[::-1])
    h_b_rev, cache_b = lstm_seq_forward(x_rev, *p_bwd, mask_bwd)
    h = np.concatenate([h_f, h_b_rev[::-1]], axis=1)
    return h, (cache_f, cache_b, h_f.shape[1])


def bilstm_backward(cache, dh):
    cache_f, cache_b, H = cache
    dx_f, dwx_f, dwh_f, db_f = lstm_seq_backward(cache_f, dh[:, :H])
    dx_b_rev, dwx_b, dwh_b, db_b = lstm_seq_backward(
        cache_b, np.ascontiguousarray(dh[::-1, H:]))
    dx = dx_f + dx_b_rev[::-1]
    return dx, (dwx_f, dwh_f, db_f), (dwx_b, dwh_b, db_b)


# ---------------------------------------------------------------------------
# Single LSTM cell step (decoder)
# ---------------------------------------------------------------------------

def lstm_cell_forward(inp, h_prev, c_prev, w_x, w_h, b, mask):
    H = w_h.shape[0]
    hm = h_prev * mask
    z = inp @ w_x + hm @ w_h + b
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = _sigmoid(z[3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    cache = (inp, hm, c_prev, i, f, g, o, c, w_x, w_h, mask)
    return h, c, cache


def lstm_cell_backward(cache, dh, dc_in):
    inp, hm, c_prev, i, f, g, o, c, w_x, w_h, mask = cache
    H = hm.shape[0]
    tc = np.tanh(c)
    do = dh * tc
    dc = dh * o * (1.0 - tc * tc) + dc_in
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dz = np.empty(4 * H)
    dz[:H] = di * i * (1.0 - i)
    dz[H:2 * H] = df * f * (1.0 - f)
    dz[2 * H:3 * H] = dg * (1.0 - g * g)
    dz[3 * H:] = do * o * (1.0 - o)
    dinp = w_x @ dz
    dh_prev = (w_h @ dz) * mask
    dw_x = np.outer(inp, dz)
    dw_h = np.outer(hm, dz)
    return dinp, dh_prev, dc_prev, dw_x, dw_h, dz


# ---------------------------------------------------------------------------
# Normalization over the time axis (batch norm) or feature axis (layer norm)
# ---------------------------------------------------------------------------

BN_EPS = 1e-5


def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      train: bool, momentum: float = 0.1):
    """Per-feature normalization over the time axis.

    In train mode returns updated running statistics (the caller stores
    them); in eval mode the running statistics are used unchanged.
    """
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        new_mean = (1.0 - momentum) * running_mean + momentum * mu
        new_var = (1.0 - momentum) * running_var + momentum * var
    else:
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    cache = (xhat, inv_std, gamma, train)
    return out, cache, new_mean, new_var


def batchnorm_backward(cache, dout):
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    n = xhat.shape[0]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                          - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def layernorm_forward(x, gamma, beta):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma)


def layernorm_backward(cache, dout):
    xhat, inv_std, gamma = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    d = xhat.shape[1]
    dx = (inv_std / d) * (d * dxhat - dxhat.sum(axis=1, keepdims=True)
                          - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# MLP attention: score_t = v . tanh(W_s s + W_h e_t + b)
# ---------------------------------------------------------------------------

def attention_project(enc, w_enc, b):
    """Precompute W_h e_t + b for all encoder states (reused every step)."""
    return enc @ w_enc + b


def attention_forward(dec_state, enc, proj_enc, w_s, v):
    u = np.tanh(proj_enc + dec_state @ w_s)
    scores = u @ v
    scores = scores - scores.max()
    e = np.exp(scores)
    weights = e / e.sum()
    context = weights @ enc
    cache = (dec_state, enc, u, weights, w_s, v)
    return context, weights, cache


def attention_backward(cache, dcontext):
    """Returns gradients for (dec_state, enc, proj_enc, w_s, v)."""
    dec_state, enc, u, weights, w_s, v = cache
    dweights = enc @ dcontext
    denc = np.outer(weights, dcontext)
    # softmax jacobian
    dscores = weights * (dweights - weights @ dweights)
    dv = u.T @ dscores
    du = np.outer(dscores, v)
    dpre = du * (1.0 - u * u)
    dproj_enc = dpre
    dsum = dpre.sum(axis=0)
    ddec_state = w_s @ dsum
    dw_s = np.outer(dec_state, dsum)
    return ddec_state, denc, dproj_enc, dw_s, dv


# ---------------------------------------------------------------------------
# Label-smoothed cross-entropy
# ---------------------------------------------------------------------------

def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def smoothed_ce_loss(logits, gold, smoothing: float):
    """Mean over positions of cross-entropy against the smoothed target
    distribution (1-eps on gold, eps/(V-1) elsewhere).

    logits: (N, V); gold: (N,) int. Returns (loss, dlogits).
    """
    logits = np.atleast_2d(logits)
    gold = np.atleast_1d(gold)
    n, vocab = logits.shape
    if gold.shape[0] != n:
        raise ValueError(f"length mismatch: {n} logit rows vs {gold.shape[0]} targets")
    logp = log_softmax(logits)
    q = np.full((n, vocab), smoothing / (vocab - 1))
    q[np.arange(n), gold] = 1.0 - smoothing
    loss = float(-(q * logp).sum(axis=1).mean())
    dlogits = (np.exp(logp) - q) / n
    return loss, dlogits

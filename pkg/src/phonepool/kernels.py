"""Hot numeric kernels: run-segment sums and LSTM sequence recurrences.

Each kernel has two interchangeable implementations: ``*_nb`` (numba ``@njit``)
and ``*_np`` (pure numpy).  The public names dispatch according to
``phonepool.accel.USE_NUMBA``.  Both variants perform the additions in the
same left-to-right order in double precision, so they agree to within normal
floating-point noise; tests check them against each other.

LSTM convention: gate order ``[i, f, g, o]`` along the 4H axis, with
``c_t = f * c_{t-1} + i * g`` and ``h_t = o * tanh(c_t)``.  The recurrent
dropout mask is applied to ``h_{t-1}`` before the recurrent matmul and is
constant across timesteps (one mask per sequence).
"""

import numpy as np

from .accel import USE_NUMBA, jit_compile


# ---------------------------------------------------------------------------
# Segment sums (run-length pooling)
# ---------------------------------------------------------------------------

def _segment_sums_loop(data, starts, ends):
    n_seg = starts.shape[0]
    dims = data.shape[1]
    out = np.zeros((n_seg, dims))
    for s in range(n_seg):
        for t in range(starts[s], ends[s] + 1):
            for d in range(dims):
                out[s, d] += data[t, d]
    return out


def segment_sums_np(data, starts, ends):
    # ufunc.reduceat sums each slice sequentially, matching the loop variant.
    return np.add.reduceat(data, starts, axis=0)


segment_sums_nb = jit_compile(_segment_sums_loop)


def segment_sums(data, starts, ends):
    """Sum ``data`` rows over the inclusive spans ``starts[k]..ends[k]``.

    Spans must be contiguous and cover ``0..T-1`` in order (run-length
    segments); this is guaranteed by the callers in ``phonepool.pooling``.
    """
    if USE_NUMBA:
        return segment_sums_nb(data, starts, ends)
    return segment_sums_np(data, starts, ends)


# ---------------------------------------------------------------------------
# LSTM sequence forward / backward
# ---------------------------------------------------------------------------

def _lstm_forward_impl(xz, w_h, h0, c0, mask):
    """Run an LSTM over a whole sequence.

    xz:   (T, 4H) input projections, x_t @ W_x + b, precomputed in one gemm.
    w_h:  (H, 4H) recurrent weights.
    h0, c0: (H,) initial state.
    mask: (H,) dropout mask applied to h_{t-1} (ones in eval mode).

    Returns (h, c, gates, hm) where gates holds the activated (i, f, g, o)
    values and hm the masked previous hidden states actually multiplied by
    w_h; both are needed by the backward pass.
    """
    T = xz.shape[0]
    H = w_h.shape[0]
    h = np.empty((T, H))
    c = np.empty((T, H))
    gates = np.empty((T, 4 * H))
    hm = np.empty((T, H))
    h_prev = h0
    c_prev = c0
    for t in range(T):
        hmt = h_prev * mask
        hm[t] = hmt
        z = xz[t] + np.dot(hmt, w_h)
        i = 1.0 / (1.0 + np.exp(-z[:H]))
        f = 1.0 / (1.0 + np.exp(-z[H:2 * H]))
        g = np.tanh(z[2 * H:3 * H])
        o = 1.0 / (1.0 + np.exp(-z[3 * H:]))
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        gates[t, :H] = i
        gates[t, H:2 * H] = f
        gates[t, 2 * H:3 * H] = g
        gates[t, 3 * H:] = o
        c[t] = c_t
        h[t] = h_t
        h_prev = h_t
        c_prev = c_t
    return h, c, gates, hm


def _lstm_backward_impl(dh_out, gates, c, c0, w_h_t, mask):
    """Backpropagate through an LSTM sequence.

    dh_out: (T, H) upstream gradient on each h_t.
    w_h_t:  (4H, H) transposed recurrent weights (contiguous).
    Returns (dz, dh0) with dz the (T, 4H) pre-activation gate gradients; the
    caller turns dz into weight/input gradients with three gemms.
    """
    T = dh_out.shape[0]
    H = dh_out.shape[1]
    dz = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        dh = dh_out[t] + dh_next
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        g = gates[t, 2 * H:3 * H]
        o = gates[t, 3 * H:]
        tc = np.tanh(c[t])
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        if t > 0:
            df = dc * c[t - 1]
        else:
            df = dc * c0
        dc_next = dc * f
        dz[t, :H] = di * i * (1.0 - i)
        dz[t, H:2 * H] = df * f * (1.0 - f)
        dz[t, 2 * H:3 * H] = dg * (1.0 - g * g)
        dz[t, 3 * H:] = do * o * (1.0 - o)
        dh_next = np.dot(dz[t], w_h_t) * mask
    return dz, dh_next


lstm_forward_np = _lstm_forward_impl
lstm_backward_np = _lstm_backward_impl
lstm_forward_nb = jit_compile(_lstm_forward_impl)
lstm_backward_nb = jit_compile(_lstm_backward_impl)


def lstm_forward(xz, w_h, h0, c0, mask):
    if USE_NUMBA:
        return lstm_forward_nb(xz, w_h, h0, c0, mask)
    return lstm_forward_np(xz, w_h, h0, c0, mask)


def lstm_backward(dh_out, gates, c, c0, w_h_t, mask):
    if USE_NUMBA:
        return lstm_backward_nb(dh_out, gates, c, c0, w_h_t, mask)
    return lstm_backward_np(dh_out, gates, c, c0, w_h_t, mask)

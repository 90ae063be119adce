"""Pure-numpy LSTM sequence kernels.

Gate layout along the last axis of the fused pre-activation is ``[i, f, g, o]``,
each block ``S`` wide.  Both functions are dtype-preserving: float32 inputs
give float32 outputs, float64 inputs give float64 outputs.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(x, w_x, w_h, b):
    """Run one LSTM layer over a whole sequence.

    Returns ``(hs, gates, cs)``: hidden states ``[B, T, S]``, post-activation
    gates ``[B, T, 4S]`` and cell states ``[B, T, S]``.  The last two are the
    cache consumed by :func:`lstm_backward`.
    """
    n_batch, n_steps, n_in = x.shape
    size = w_h.shape[0]
    dtype = w_h.dtype
    xw = (x.reshape(n_batch * n_steps, n_in) @ w_x).reshape(n_batch, n_steps, 4 * size)
    xw += b
    hs = np.empty((n_batch, n_steps, size), dtype=dtype)
    cs = np.empty((n_batch, n_steps, size), dtype=dtype)
    gates = np.empty((n_batch, n_steps, 4 * size), dtype=dtype)
    h = np.zeros((n_batch, size), dtype=dtype)
    c = np.zeros((n_batch, size), dtype=dtype)
    s2, s3 = 2 * size, 3 * size
    for t in range(n_steps):
        z = xw[:, t] + h @ w_h
        gt = gates[:, t]
        gt[:, :s2] = _sigmoid(z[:, :s2])
        gt[:, s2:s3] = np.tanh(z[:, s2:s3])
        gt[:, s3:] = _sigmoid(z[:, s3:])
        c = gt[:, size:s2] * c + gt[:, :size] * gt[:, s2:s3]
        h = gt[:, s3:] * np.tanh(c)
        cs[:, t] = c
        hs[:, t] = h
    return hs, gates, cs


def lstm_backward(dhs, x, w_x, w_h, hs, gates, cs):
    """Backpropagate through time for one layer.

    ``dhs`` is the upstream gradient on every hidden state ``[B, T, S]``.
    Returns ``(dx, dw_x, dw_h, db)``.
    """
    n_batch, n_steps, n_in = x.shape
    size = w_h.shape[0]
    dtype = w_h.dtype
    s2, s3 = 2 * size, 3 * size
    dz_all = np.empty((n_batch, n_steps, 4 * size), dtype=dtype)
    dh_next = np.zeros((n_batch, size), dtype=dtype)
    dc_next = np.zeros((n_batch, size), dtype=dtype)
    zero_c = np.zeros((n_batch, size), dtype=dtype)
    for t in range(n_steps - 1, -1, -1):
        gt = gates[:, t]
        i, f, g, o = gt[:, :size], gt[:, size:s2], gt[:, s2:s3], gt[:, s3:]
        c_prev = cs[:, t - 1] if t > 0 else zero_c
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :size] = dc * g * i * (1.0 - i)
        dz[:, size:s2] = dc * c_prev * f * (1.0 - f)
        dz[:, s2:s3] = dc * i * (1.0 - g * g)
        dz[:, s3:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ w_h.T
    h_prev = np.zeros_like(hs)
    h_prev[:, 1:] = hs[:, :-1]
    dz_flat = dz_all.reshape(n_batch * n_steps, 4 * size)
    dw_h = h_prev.reshape(n_batch * n_steps, size).T @ dz_flat
    dw_x = x.reshape(n_batch * n_steps, n_in).T @ dz_flat
    db = dz_flat.sum(axis=0, dtype=np.float64).astype(dtype)
    dx = (dz_flat @ w_x.T).reshape(n_batch, n_steps, n_in)
    return dx, dw_x, dw_h, db

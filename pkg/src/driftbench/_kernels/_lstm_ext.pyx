# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM sequence kernels.

Same contract as ``_lstm_py``: gate layout ``[i, f, g, o]``, dtype-preserving
for float32 and float64.  Matrix products go through BLAS gemm; the gate
nonlinearities and the cell recurrence run as fused C loops so no temporaries
are allocated per time step.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf, tanh, tanhf
from scipy.linalg.cython_blas cimport sgemm, dgemm

cnp.import_array()


cdef inline void _gemm(char ta, char tb, int m, int n, int k, floating alpha,
                       floating *a, int lda, floating *b, int ldb,
                       floating beta, floating *c, int ldc) noexcept nogil:
    # row-major C = op(A) op(B), mapped onto column-major BLAS by swapping operands
    if floating is float:
        sgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)
    else:
        dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef inline floating _sigmoid(floating z) noexcept nogil:
    # 1 / (1 + e^-z) is exact in IEEE arithmetic even when e^-z overflows to inf
    if floating is float:
        return 1.0 / (1.0 + expf(-z))
    else:
        return 1.0 / (1.0 + exp(-z))


cdef inline floating _tanh(floating z) noexcept nogil:
    if floating is float:
        return tanhf(z)
    else:
        return tanh(z)


def _forward(floating[:, :, ::1] x, floating[:, ::1] w_x, floating[:, ::1] w_h,
             floating[::1] b, floating[:, :, ::1] hs, floating[:, :, ::1] gates,
             floating[:, :, ::1] cs):
    cdef int n_batch = x.shape[0]
    cdef int n_steps = x.shape[1]
    cdef int n_in = x.shape[2]
    cdef int size = w_h.shape[0]
    cdef int s4 = 4 * size
    cdef int t, r, j
    cdef floating cval, cprev
    cdef floating *zrow
    # pre-activations for every step at once; gates buffer doubles as scratch
    with nogil:
        _gemm(c'N', c'N', n_batch * n_steps, s4, n_in, <floating>1.0,
              &x[0, 0, 0], n_in, &w_x[0, 0], s4, <floating>0.0, &gates[0, 0, 0], s4)
        for t in range(n_steps):
            if t > 0:
                # gates[:, t] += hs[:, t-1] @ w_h  (strided rows: ld = T*cols)
                _gemm(c'N', c'N', n_batch, s4, size, <floating>1.0,
                      &hs[0, t - 1, 0], n_steps * size, &w_h[0, 0], s4,
                      <floating>1.0, &gates[0, t, 0], n_steps * s4)
            for r in range(n_batch):
                zrow = &gates[r, t, 0]
                for j in range(size):
                    zrow[j] = _sigmoid(<floating>(zrow[j] + b[j]))
                    zrow[size + j] = _sigmoid(<floating>(zrow[size + j] + b[size + j]))
                    zrow[2 * size + j] = _tanh(<floating>(zrow[2 * size + j] + b[2 * size + j]))
                    zrow[3 * size + j] = _sigmoid(<floating>(zrow[3 * size + j] + b[3 * size + j]))
                    cprev = cs[r, t - 1, j] if t > 0 else 0.0
                    cval = zrow[size + j] * cprev + zrow[j] * zrow[2 * size + j]
                    cs[r, t, j] = cval
                    hs[r, t, j] = zrow[3 * size + j] * _tanh(cval)


def _backward(floating[:, :, ::1] dhs, floating[:, :, ::1] x, floating[:, ::1] w_x,
              floating[:, ::1] w_h, floating[:, :, ::1] hs, floating[:, :, ::1] gates,
              floating[:, :, ::1] cs, floating[:, :, ::1] dz_all,
              floating[:, :, ::1] dx, floating[:, ::1] dw_x, floating[:, ::1] dw_h,
              double[::1] db):
    cdef int n_batch = x.shape[0]
    cdef int n_steps = x.shape[1]
    cdef int n_in = x.shape[2]
    cdef int size = w_h.shape[0]
    cdef int s4 = 4 * size
    cdef int t, r, j
    cdef floating i, f, g, o, tc, dh, dc, cprev
    cdef floating[:, ::1] dh_next = np.zeros((n_batch, size), dtype=np.asarray(w_h).dtype)
    cdef floating[:, ::1] dc_next = np.zeros((n_batch, size), dtype=np.asarray(w_h).dtype)
    cdef floating *grow
    cdef floating *dzrow
    with nogil:
        for t in range(n_steps - 1, -1, -1):
            for r in range(n_batch):
                grow = &gates[r, t, 0]
                dzrow = &dz_all[r, t, 0]
                for j in range(size):
                    i = grow[j]
                    f = grow[size + j]
                    g = grow[2 * size + j]
                    o = grow[3 * size + j]
                    tc = _tanh(cs[r, t, j])
                    cprev = cs[r, t - 1, j] if t > 0 else 0.0
                    dh = dhs[r, t, j] + dh_next[r, j]
                    dc = dc_next[r, j] + dh * o * (1.0 - tc * tc)
                    dzrow[j] = dc * g * i * (1 - i)
                    dzrow[size + j] = dc * cprev * f * (1 - f)
                    dzrow[2 * size + j] = dc * i * (1 - g * g)
                    dzrow[3 * size + j] = dh * tc * o * (1 - o)
                    dc_next[r, j] = dc * f
            # dh_next = dz[:, t] @ w_h.T
            _gemm(c'N', c'T', n_batch, size, s4, <floating>1.0,
                  &dz_all[0, t, 0], n_steps * s4, &w_h[0, 0], s4,
                  <floating>0.0, &dh_next[0, 0], size)
        # dw_h = sum_t h_{t-1}^T dz_t
        for t in range(1, n_steps):
            _gemm(c'T', c'N', size, s4, n_batch, <floating>1.0,
                  &hs[0, t - 1, 0], n_steps * size, &dz_all[0, t, 0], n_steps * s4,
                  <floating>1.0, &dw_h[0, 0], s4)
        _gemm(c'T', c'N', n_in, s4, n_batch * n_steps, <floating>1.0,
              &x[0, 0, 0], n_in, &dz_all[0, 0, 0], s4, <floating>0.0, &dw_x[0, 0], s4)
        _gemm(c'N', c'T', n_batch * n_steps, n_in, s4, <floating>1.0,
              &dz_all[0, 0, 0], s4, &w_x[0, 0], s4, <floating>0.0, &dx[0, 0, 0], n_in)
        for r in range(n_batch):
            for t in range(n_steps):
                for j in range(s4):
                    db[j] += dz_all[r, t, j]


def lstm_forward(x, w_x, w_h, b):
    """Run one LSTM layer over a whole sequence; returns ``(hs, gates, cs)``."""
    dtype = w_h.dtype
    x = np.ascontiguousarray(x, dtype=dtype)
    n_batch, n_steps, _ = x.shape
    size = w_h.shape[0]
    hs = np.empty((n_batch, n_steps, size), dtype=dtype)
    cs = np.empty((n_batch, n_steps, size), dtype=dtype)
    gates = np.empty((n_batch, n_steps, 4 * size), dtype=dtype)
    _forward(x, np.ascontiguousarray(w_x), np.ascontiguousarray(w_h),
             np.ascontiguousarray(b), hs, gates, cs)
    return hs, gates, cs


def lstm_backward(dhs, x, w_x, w_h, hs, gates, cs):
    """Backpropagate through time; returns ``(dx, dw_x, dw_h, db)``."""
    dtype = w_h.dtype
    n_batch, n_steps, n_in = x.shape
    size = w_h.shape[0]
    dz_all = np.empty((n_batch, n_steps, 4 * size), dtype=dtype)
    dx = np.empty((n_batch, n_steps, n_in), dtype=dtype)
    dw_x = np.empty((n_in, 4 * size), dtype=dtype)
    dw_h = np.zeros((size, 4 * size), dtype=dtype)
    db = np.zeros(4 * size, dtype=np.float64)
    _backward(np.ascontiguousarray(dhs, dtype=dtype), np.ascontiguousarray(x, dtype=dtype),
              np.ascontiguousarray(w_x), np.ascontiguousarray(w_h), hs, gates, cs,
              dz_all, dx, dw_x, dw_h, db)
    return dx, dw_x, dw_h, db.astype(dtype)

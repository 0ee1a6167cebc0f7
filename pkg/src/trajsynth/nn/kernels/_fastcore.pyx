# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the hot training kernels.

Mirrors kernels.reference exactly; the dispatcher in kernels/__init__
prefers this module when the extension built, and tests cross-check the
two backends numerically.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, pow, sqrt, tanh

BACKEND_NAME = "compiled"

cdef double GELU_C = 0.7978845608028654    # sqrt(2/pi)
cdef double GELU_A = 0.044715


def causal_softmax(double[:, :, :, ::1] scores):
    """Row-wise softmax over (B, H, T, T) scores restricted to j <= i."""
    cdef Py_ssize_t b = scores.shape[0], h = scores.shape[1], t = scores.shape[2]
    out_arr = np.empty((b, h, t, t), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ib, ih, i, j
    cdef double m, s, e
    for ib in range(b):
        for ih in range(h):
            for i in range(t):
                m = scores[ib, ih, i, 0]
                for j in range(1, i + 1):
                    if scores[ib, ih, i, j] > m:
                        m = scores[ib, ih, i, j]
                s = 0.0
                for j in range(i + 1):
                    e = exp(scores[ib, ih, i, j] - m)
                    out[ib, ih, i, j] = e
                    s += e
                for j in range(i + 1):
                    out[ib, ih, i, j] /= s
                for j in range(i + 1, t):
                    out[ib, ih, i, j] = 0.0
    return out_arr


def causal_softmax_grad(double[:, :, :, ::1] probs, double[:, :, :, ::1] dprobs):
    """Backward of causal_softmax; rows above the diagonal come out zero."""
    cdef Py_ssize_t b = probs.shape[0], h = probs.shape[1], t = probs.shape[2]
    out_arr = np.empty((b, h, t, t), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ib, ih, i, j
    cdef double inner
    for ib in range(b):
        for ih in range(h):
            for i in range(t):
                inner = 0.0
                for j in range(t):
                    inner += dprobs[ib, ih, i, j] * probs[ib, ih, i, j]
                for j in range(t):
                    out[ib, ih, i, j] = probs[ib, ih, i, j] * (dprobs[ib, ih, i, j] - inner)
    return out_arr


def softmax_xent(double[:, ::1] logits, cnp.int64_t[::1] targets, double[::1] weights):
    """Weighted-sum cross entropy over (N, V) logits; also returns softmax probs."""
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1]
    probs_arr = np.empty((n, v), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double m, z, e, lse, loss = 0.0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > m:
                m = logits[i, j]
        z = 0.0
        for j in range(v):
            e = exp(logits[i, j] - m)
            probs[i, j] = e
            z += e
        for j in range(v):
            probs[i, j] /= z
        if weights[i] > 0.0:
            lse = m + log(z)
            loss += weights[i] * (lse - logits[i, targets[i]])
    return loss, probs_arr


def softmax_xent_grad(double[:, ::1] probs, cnp.int64_t[::1] targets, double[::1] weights):
    cdef Py_ssize_t n = probs.shape[0], v = probs.shape[1]
    out_arr = np.empty((n, v), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(v):
            out[i, j] = probs[i, j] * weights[i]
        out[i, targets[i]] -= weights[i]
    return out_arr


def gelu(x_in):
    x_arr = np.ascontiguousarray(x_in, dtype=np.float64)
    out_arr = np.empty_like(x_arr)
    cdef double[::1] x = x_arr.reshape(-1)
    cdef double[::1] out = out_arr.reshape(-1)
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double u
    for i in range(n):
        u = GELU_C * (x[i] + GELU_A * x[i] * x[i] * x[i])
        out[i] = 0.5 * x[i] * (1.0 + tanh(u))
    return out_arr


def gelu_grad(x_in, dy_in):
    x_arr = np.ascontiguousarray(x_in, dtype=np.float64)
    dy_arr = np.ascontiguousarray(dy_in, dtype=np.float64)
    out_arr = np.empty_like(x_arr)
    cdef double[::1] x = x_arr.reshape(-1)
    cdef double[::1] dy = dy_arr.reshape(-1)
    cdef double[::1] out = out_arr.reshape(-1)
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double u, th, du
    for i in range(n):
        u = GELU_C * (x[i] + GELU_A * x[i] * x[i] * x[i])
        th = tanh(u)
        du = GELU_C * (1.0 + 3.0 * GELU_A * x[i] * x[i])
        out[i] = dy[i] * (0.5 * (1.0 + th) + 0.5 * x[i] * (1.0 - th * th) * du)
    return out_arr


def adamw_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                 cnp.int64_t step, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    """In-place decoupled-weight-decay adaptive-moment update on flat views."""
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, <double> step)
    cdef double bc2 = 1.0 - pow(beta2, <double> step)
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        param[i] -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * param[i])


cdef double LN_EPS = 1e-5


def layernorm(double[:, ::1] x, double[::1] gamma, double[::1] beta):
    """Row-normalize (N, D) activations; returns (y, xhat, rstd) for backward."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    y_arr = np.empty((n, d), dtype=np.float64)
    xhat_arr = np.empty((n, d), dtype=np.float64)
    rstd_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, xc, r
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            xc = x[i, j] - mu
            var += xc * xc
        var /= d
        r = 1.0 / sqrt(var + LN_EPS)
        rstd[i] = r
        for j in range(d):
            xc = (x[i, j] - mu) * r
            xhat[i, j] = xc
            y[i, j] = xc * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_grad(double[:, ::1] dy, double[:, ::1] xhat, double[::1] rstd,
                   double[::1] gamma):
    """Backward of layernorm; returns (dx, dgamma, dbeta)."""
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1]
    dx_arr = np.empty((n, d), dtype=np.float64)
    dgamma_arr = np.zeros(d, dtype=np.float64)
    dbeta_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, dxh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * gamma[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
            dgamma[j] += dy[i, j] * xhat[i, j]
            dbeta[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dx[i, j] = rstd[i] * (dy[i, j] * gamma[j] - m1 - xhat[i, j] * m2)
    return dx_arr, dgamma_arr, dbeta_arr

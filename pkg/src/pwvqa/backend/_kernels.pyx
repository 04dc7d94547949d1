# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations.

Elementwise fusion math as single C loops (one pass, no temporaries), which
beats chained NumPy ufuncs at the small batch sizes this package runs on.
Semantics match `_kernels_py` to floating-point rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, pow

cnp.import_array()

NAME = "c"


cdef inline double _sig(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _logsig(double x) noexcept nogil:
    if x >= 0.0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


cdef cnp.ndarray _as1d(object x):
    return np.ascontiguousarray(x, dtype=np.float64).ravel()


def sigmoid(object x):
    cdef double[::1] xv = _as1d(x)
    out = np.empty(xv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = _sig(xv[i])
    return out.reshape(np.shape(x))


def log_sigmoid(object x):
    cdef double[::1] xv = _as1d(x)
    out = np.empty(xv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = _logsig(xv[i])
    return out.reshape(np.shape(x))


cdef inline double _ea_sum(double sq, double sv, double sk, double alpha,
                           double* p_alpha, double* pair_sum) noexcept nogil:
    # Z = P^alpha * S2 with P and S2 computed over the sorted sigmoids, so the
    # result is bitwise invariant under permutation of the three branches.
    cdef double lo = sq, mid = sv, hi = sk, tmp
    if lo > mid:
        tmp = lo; lo = mid; mid = tmp
    if mid > hi:
        tmp = mid; mid = hi; hi = tmp
    if lo > mid:
        tmp = lo; lo = mid; mid = tmp
    p_alpha[0] = pow(lo * mid * hi, alpha)
    pair_sum[0] = (lo * mid + lo * hi) + mid * hi
    return p_alpha[0] * pair_sum[0]


def ea_forward(object zq, object zv, object zk, double alpha, double eps):
    cdef double[::1] q = _as1d(zq)
    cdef double[::1] v = _as1d(zv)
    cdef double[::1] k = _as1d(zk)
    if q.shape[0] != v.shape[0] or q.shape[0] != k.shape[0]:
        raise ValueError("branch arrays must have equal size")
    out = np.empty(q.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef double b = alpha + 1.0
    cdef double p_alpha, pair_sum, z
    cdef Py_ssize_t i
    for i in range(q.shape[0]):
        z = _ea_sum(_sig(q[i]), _sig(v[i]), _sig(k[i]), alpha, &p_alpha, &pair_sum)
        ov[i] = log(z + eps) / b
    return out.reshape(np.shape(zq))


def ea_backward(object zq, object zv, object zk, double alpha, double eps):
    cdef double[::1] q = _as1d(zq)
    cdef double[::1] v = _as1d(zv)
    cdef double[::1] k = _as1d(zk)
    if q.shape[0] != v.shape[0] or q.shape[0] != k.shape[0]:
        raise ValueError("branch arrays must have equal size")
    dq = np.empty(q.shape[0], dtype=np.float64)
    dv = np.empty(q.shape[0], dtype=np.float64)
    dk = np.empty(q.shape[0], dtype=np.float64)
    cdef double[::1] dqv = dq
    cdef double[::1] dvv = dv
    cdef double[::1] dkv = dk
    cdef double b = alpha + 1.0
    cdef double sq, sv, sk, p_alpha, pair_sum, denom
    cdef Py_ssize_t i
    for i in range(q.shape[0]):
        sq = _sig(q[i])
        sv = _sig(v[i])
        sk = _sig(k[i])
        denom = b * (_ea_sum(sq, sv, sk, alpha, &p_alpha, &pair_sum) + eps)
        dqv[i] = (1.0 - sq) * p_alpha * (alpha * pair_sum + sq * (sv + sk)) / denom
        dvv[i] = (1.0 - sv) * p_alpha * (alpha * pair_sum + sv * (sq + sk)) / denom
        dkv[i] = (1.0 - sk) * p_alpha * (alpha * pair_sum + sk * (sq + sv)) / denom
    shape = np.shape(zq)
    return dq.reshape(shape), dv.reshape(shape), dk.reshape(shape)


def sum_forward(object zq, object zv, object zk):
    cdef double[::1] q = _as1d(zq)
    cdef double[::1] v = _as1d(zv)
    cdef double[::1] k = _as1d(zk)
    out = np.empty(q.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(q.shape[0]):
        ov[i] = _logsig(q[i] + v[i] + k[i])
    return out.reshape(np.shape(zq))


def sum_backward(object zq, object zv, object zk):
    cdef double[::1] q = _as1d(zq)
    cdef double[::1] v = _as1d(zv)
    cdef double[::1] k = _as1d(zk)
    dq = np.empty(q.shape[0], dtype=np.float64)
    cdef double[::1] dqv = dq
    cdef Py_ssize_t i
    for i in range(q.shape[0]):
        dqv[i] = _sig(-(q[i] + v[i] + k[i]))
    shape = np.shape(zq)
    dq = dq.reshape(shape)
    return dq, dq.copy(), dq.copy()


def hm_forward(object zq, object zv, object zk):
    cdef double[::1] q = _as1d(zq)
    cdef double[::1] v = _as1d(zv)
    cdef double[::1] k = _as1d(zk)
    out = np.empty(q.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(q.shape[0]):
        ov[i] = _logsig(q[i]) + _logsig(v[i]) + _logsig(k[i])
    return out.reshape(np.shape(zq))


def hm_backward(object zq, object zv, object zk):
    cdef double[::1] q = _as1d(zq)
    cdef double[::1] v = _as1d(zv)
    cdef double[::1] k = _as1d(zk)
    dq = np.empty(q.shape[0], dtype=np.float64)
    dv = np.empty(q.shape[0], dtype=np.float64)
    dk = np.empty(q.shape[0], dtype=np.float64)
    cdef double[::1] dqv = dq
    cdef double[::1] dvv = dv
    cdef double[::1] dkv = dk
    cdef Py_ssize_t i
    for i in range(q.shape[0]):
        dqv[i] = _sig(-q[i])
        dvv[i] = _sig(-v[i])
        dkv[i] = _sig(-k[i])
    shape = np.shape(zq)
    return dq.reshape(shape), dv.reshape(shape), dk.reshape(shape)


def rubi_forward(object zk, object zq):
    cdef double[::1] k = _as1d(zk)
    cdef double[::1] q = _as1d(zq)
    out = np.empty(k.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(k.shape[0]):
        ov[i] = k[i] * _sig(q[i])
    return out.reshape(np.shape(zk))


def rubi_backward(object zk, object zq):
    cdef double[::1] k = _as1d(zk)
    cdef double[::1] q = _as1d(zq)
    dq = np.empty(k.shape[0], dtype=np.float64)
    dk = np.empty(k.shape[0], dtype=np.float64)
    cdef double[::1] dqv = dq
    cdef double[::1] dkv = dk
    cdef double s
    cdef Py_ssize_t i
    for i in range(k.shape[0]):
        s = _sig(q[i])
        dqv[i] = k[i] * s * (1.0 - s)
        dkv[i] = s
    shape = np.shape(zk)
    return dq.reshape(shape), np.zeros(shape, dtype=np.float64), dk.reshape(shape)

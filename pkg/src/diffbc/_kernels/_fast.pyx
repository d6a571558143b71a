# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the elementwise hot loops (training-time bottleneck).

All loops are elementwise or row-independent, so the OpenMP scheduling below
cannot change results: outputs are bit-identical for any thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport erf, exp, sqrt, pow

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865475244
cdef double INV_SQRT_2PI = 0.3989422804014326779

# below this, thread startup costs more than it saves
DEF PAR_THRESHOLD = 16384


def gelu(object x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xi = arr.ravel()
    cdef double[::1] oi = out.ravel()
    cdef Py_ssize_t i, n = xi.shape[0]
    if n >= PAR_THRESHOLD:
        for i in prange(n, nogil=True):
            oi[i] = 0.5 * xi[i] * (1.0 + erf(xi[i] * INV_SQRT2))
    else:
        for i in range(n):
            oi[i] = 0.5 * xi[i] * (1.0 + erf(xi[i] * INV_SQRT2))
    return out


def gelu_grad(object x, object upstream):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    up = np.ascontiguousarray(upstream, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xi = arr.ravel()
    cdef double[::1] ui = up.ravel()
    cdef double[::1] oi = out.ravel()
    cdef Py_ssize_t i, n = xi.shape[0]
    cdef double phi
    if n >= PAR_THRESHOLD:
        for i in prange(n, nogil=True):
            phi = INV_SQRT_2PI * exp(-0.5 * xi[i] * xi[i])
            oi[i] = ui[i] * (0.5 * (1.0 + erf(xi[i] * INV_SQRT2)) + xi[i] * phi)
    else:
        for i in range(n):
            phi = INV_SQRT_2PI * exp(-0.5 * xi[i] * xi[i])
            oi[i] = ui[i] * (0.5 * (1.0 + erf(xi[i] * INV_SQRT2)) + xi[i] * phi)
    return out


def leaky_relu(object x, double slope):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xi = arr.ravel()
    cdef double[::1] oi = out.ravel()
    cdef Py_ssize_t i, n = xi.shape[0]
    for i in range(n):
        oi[i] = xi[i] if xi[i] >= 0.0 else slope * xi[i]
    return out


def leaky_relu_grad(object x, object upstream, double slope):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    up = np.ascontiguousarray(upstream, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xi = arr.ravel()
    cdef double[::1] ui = up.ravel()
    cdef double[::1] oi = out.ravel()
    cdef Py_ssize_t i, n = xi.shape[0]
    for i in range(n):
        oi[i] = ui[i] if xi[i] >= 0.0 else slope * ui[i]
    return out


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    """In-place adaptive-moment update; single fused pass over the arrays."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double c1 = 1.0 - beta1
    cdef double c2 = 1.0 - beta2
    cdef double bc1 = 1.0 - pow(beta1, <double> t)
    cdef double bc2 = 1.0 - pow(beta2, <double> t)
    cdef double mhat, vhat
    if n >= PAR_THRESHOLD:
        for i in prange(n, nogil=True):
            m[i] = beta1 * m[i] + c1 * g[i]
            v[i] = beta2 * v[i] + c2 * (g[i] * g[i])
            mhat = m[i] / bc1
            vhat = v[i] / bc2
            p[i] -= lr * mhat / (sqrt(vhat) + eps)
    else:
        for i in range(n):
            m[i] = beta1 * m[i] + c1 * g[i]
            v[i] = beta2 * v[i] + c2 * (g[i] * g[i])
            mhat = m[i] / bc1
            vhat = v[i] / bc2
            p[i] -= lr * mhat / (sqrt(vhat) + eps)


def pairwise_sqdist(object x, object y, Py_ssize_t block=256):
    """Squared Euclidean distances between rows of x (n,d) and y (m,d)."""
    xa = np.ascontiguousarray(x, dtype=np.float64)
    ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] xm = xa
    cdef double[:, ::1] ym = ya
    cdef Py_ssize_t n = xm.shape[0], m = ym.shape[0], d = xm.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] om = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in prange(n, nogil=True):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = xm[i, k] - ym[j, k]
                acc = acc + diff * diff
            om[i, j] = acc
    return out

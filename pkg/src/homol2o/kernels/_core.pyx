# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise kernels for the training inner loop.

One fused, branchless pass per kernel: no intermediate arrays for the
penalty reductions and the Adam moment update. Matrix products stay in
BLAS; tanh stays in numpy (vectorized libm beats a scalar loop).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt as c_sqrt, fmax, pow as c_pow

cnp.import_array()

COMPILED = True

ctypedef cnp.float64_t f64


def relu(cnp.ndarray[f64, ndim=2] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.empty((n, d))
    for i in range(n):
        for j in range(d):
            out[i, j] = fmax(x[i, j], 0.0)
    return out


def relu_grad(cnp.ndarray[f64, ndim=2] x, cnp.ndarray[f64, ndim=2] gy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.empty((n, d))
    for i in range(n):
        for j in range(d):
            out[i, j] = gy[i, j] * <double>(x[i, j] > 0.0)
    return out


def abs_val(cnp.ndarray[f64, ndim=2] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.empty((n, d))
    for i in range(n):
        for j in range(d):
            out[i, j] = fmax(x[i, j], -x[i, j])
    return out


def abs_grad(cnp.ndarray[f64, ndim=2] x, cnp.ndarray[f64, ndim=2] gy):
    # subgradient 0 at exactly 0
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.empty((n, d))
    for i in range(n):
        for j in range(d):
            out[i, j] = gy[i, j] * (<double>(x[i, j] > 0.0) - <double>(x[i, j] < 0.0))
    return out


def square_row_sum(cnp.ndarray[f64, ndim=2] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.zeros((n, 1))
    cdef f64 acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += x[i, j] * x[i, j]
        out[i, 0] = acc
    return out


def square_row_sum_grad(cnp.ndarray[f64, ndim=2] x, cnp.ndarray[f64, ndim=2] gy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.empty((n, d))
    cdef f64 g2
    for i in range(n):
        g2 = 2.0 * gy[i, 0]
        for j in range(d):
            out[i, j] = x[i, j] * g2
    return out


def hinge_row_sum(cnp.ndarray[f64, ndim=2] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.zeros((n, 1))
    cdef f64 acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += fmax(x[i, j], 0.0)
        out[i, 0] = acc
    return out


def hinge_row_sum_grad(cnp.ndarray[f64, ndim=2] x, cnp.ndarray[f64, ndim=2] gy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[f64, ndim=2] out = np.empty((n, d))
    cdef f64 g
    for i in range(n):
        g = gy[i, 0]
        for j in range(d):
            out[i, j] = g * <double>(x[i, j] > 0.0)
    return out


def adam_update(cnp.ndarray[f64, ndim=2] p, cnp.ndarray[f64, ndim=2] g,
                cnp.ndarray[f64, ndim=2] m, cnp.ndarray[f64, ndim=2] v,
                double lr, double beta1, double beta2, double eps, long t):
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1], i, j
    cdef double bc1 = 1.0 - c_pow(beta1, t)
    cdef double bc2 = 1.0 - c_pow(beta2, t)
    cdef double gij, mhat, vhat
    for i in range(n):
        for j in range(d):
            gij = g[i, j]
            m[i, j] = beta1 * m[i, j] + (1.0 - beta1) * gij
            v[i, j] = beta2 * v[i, j] + (1.0 - beta2) * gij * gij
            mhat = m[i, j] / bc1
            vhat = v[i, j] / bc2
            p[i, j] -= lr * mhat / (c_sqrt(vhat) + eps)

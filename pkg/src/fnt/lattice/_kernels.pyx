# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled alignment-lattice kernels (hot path of training).

Mirrors _kernels_py exactly: same recurrences, same logadd arithmetic.
"""

from libc.math cimport exp, log1p, INFINITY

import numpy as np


cdef double NEG_INF = -INFINITY


cdef inline double logadd(double x, double y) noexcept nogil:
    cdef double t
    if x == NEG_INF:
        return y
    if y == NEG_INF:
        return x
    if x < y:
        t = x
        x = y
        y = t
    return x + log1p(exp(y - x))


def forward_alphas(double[:, :, ::1] logp, long[::1] targets):
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t U1 = logp.shape[1]
    cdef Py_ssize_t t, u
    a_arr = np.full((T, U1), NEG_INF)
    cdef double[:, ::1] a = a_arr
    a[0, 0] = 0.0
    for t in range(1, T):
        a[t, 0] = a[t - 1, 0] + logp[t - 1, 0, 0]
    for u in range(1, U1):
        a[0, u] = a[0, u - 1] + logp[0, u - 1, targets[u - 1]]
    with nogil:
        for t in range(1, T):
            for u in range(1, U1):
                a[t, u] = logadd(
                    a[t - 1, u] + logp[t - 1, u, 0],
                    a[t, u - 1] + logp[t, u - 1, targets[u - 1]],
                )
    return a_arr


def backward_betas(double[:, :, ::1] logp, long[::1] targets):
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t U = logp.shape[1] - 1
    cdef Py_ssize_t t, u
    b_arr = np.full((T + 1, U + 1), NEG_INF)
    cdef double[:, ::1] b = b_arr
    b[T, U] = 0.0
    with nogil:
        for t in range(T - 1, -1, -1):
            b[t, U] = logp[t, U, 0] + b[t + 1, U]
            for u in range(U - 1, -1, -1):
                b[t, u] = logadd(
                    logp[t, u, 0] + b[t + 1, u],
                    logp[t, u, targets[u]] + b[t, u + 1],
                )
    return b_arr


def loss_only(double[:, :, ::1] logp, long[::1] targets):
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t U = logp.shape[1] - 1
    a = forward_alphas(logp, targets)
    return -(a[T - 1, U] + logp[T - 1, U, 0])


def loss_and_grad(double[:, :, ::1] logp, long[::1] targets):
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t U = logp.shape[1] - 1
    cdef Py_ssize_t t, u, k
    a_arr = forward_alphas(logp, targets)
    b_arr = backward_betas(logp, targets)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] b = b_arr
    cdef double log_z = b[0, 0]
    if log_z == NEG_INF:
        raise ValueError("alignment set has zero probability")
    grad_arr = np.zeros((T, U + 1, logp.shape[2]))
    cdef double[:, :, ::1] grad = grad_arr
    with nogil:
        for t in range(T):
            for u in range(U + 1):
                grad[t, u, 0] = -exp(a[t, u] + logp[t, u, 0] + b[t + 1, u] - log_z)
                if u < U:
                    k = targets[u]
                    grad[t, u, k] = -exp(
                        a[t, u] + logp[t, u, k] + b[t, u + 1] - log_z
                    )
    return -log_z, grad_arr

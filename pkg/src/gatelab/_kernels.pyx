# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tabular-LM inner loops. See ``_kernels_py`` for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

BACKEND = "cython"


def logsumexp_rows(const double[:, ::1] theta):
    cdef Py_ssize_t n = theta.shape[0], k = theta.shape[1], i, j
    cdef double m, s
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        m = theta[i, 0]
        for j in range(1, k):
            if theta[i, j] > m:
                m = theta[i, j]
        s = 0.0
        for j in range(k):
            s += exp(theta[i, j] - m)
        o[i] = m + log(s)
    return out


def gather_logprobs(const double[:, ::1] theta, const double[::1] lse,
                    const cnp.int64_t[::1] ctx, const cnp.int64_t[::1] tok):
    cdef Py_ssize_t n = ctx.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = theta[ctx[i], tok[i]] - lse[ctx[i]]
    return out


def accumulate_grad(const double[:, ::1] theta, const double[::1] lse,
                    const cnp.int64_t[::1] ctx, const cnp.int64_t[::1] tok,
                    const double[::1] weights, double[:, ::1] grad):
    cdef Py_ssize_t n = ctx.shape[0], k = theta.shape[1], i, j
    cdef cnp.int64_t r
    cdef double w, z
    for i in range(n):
        r = ctx[i]
        w = weights[i]
        z = lse[r]
        for j in range(k):
            grad[r, j] -= w * exp(theta[r, j] - z)
    for i in range(n):
        grad[ctx[i], tok[i]] += weights[i]

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Picard pyramid for scalar stencil models.

Update rule on a flattened box: x_new[p] = act(sum_j w[j] * x[p + off[j]]) + beta * eps[p],
applied on a region that shrinks by delta per side each iteration.
"""

import numpy as np

from libc.math cimport exp, fabs, tanh

cdef enum:
    MAX_DIM = 8


cdef inline double _act(double x, int kind) noexcept nogil:
    if kind == 0:
        return x
    elif kind == 1:
        return tanh(x)
    elif kind == 2:
        return x if x > 0.0 else 0.0
    return 1.0 / (1.0 + exp(-x))


def pyramid_stencil(eps, delta, offsets, weights, double beta, int activation, int iterations,
                    double init, bint trace=False):
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    cdef Py_ssize_t R = eps.shape[0]
    shape = eps.shape[1:]
    cdef int kappa = len(shape)
    if kappa > MAX_DIM:
        raise ValueError("compiled kernel supports at most 8 lattice dimensions")
    offs = np.ascontiguousarray(offsets, dtype=np.int64).reshape(-1, kappa)
    w_arr = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n_off = offs.shape[0]

    cdef Py_ssize_t dims[MAX_DIM]
    cdef Py_ssize_t stride[MAX_DIM]
    cdef Py_ssize_t dlt[MAX_DIM]
    cdef Py_ssize_t lo[MAX_DIM]
    cdef Py_ssize_t hi[MAX_DIM]
    cdef Py_ssize_t idx[MAX_DIM]
    cdef Py_ssize_t i, j, r, p, q, size = 1, final_size = 1
    cdef int k
    for i in range(kappa - 1, -1, -1):
        dims[i] = shape[i]
        dlt[i] = delta[i]
        stride[i] = size
        size *= dims[i]
    final_shape = tuple(int(shape[i]) - 2 * iterations * int(delta[i]) for i in range(kappa))
    if any(s < 1 for s in final_shape):
        raise ValueError("box too small for the requested number of iterations")
    for i in range(kappa):
        final_size *= final_shape[i]

    off_flat_arr = np.zeros(n_off, dtype=np.int64)
    for j in range(n_off):
        off_flat_arr[j] = sum(int(offs[j, i]) * stride[i] for i in range(kappa))

    cdef const double[:, ::1] e = eps.reshape(R, size)
    cdef const double[::1] w = w_arr
    cdef const long long[::1] off = off_flat_arr
    out_arr = np.empty((R, final_size), dtype=np.float64)
    resid_arr = np.zeros((R, iterations if trace else 0), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] res = resid_arr
    buf_a = np.empty(size, dtype=np.float64)
    buf_b = np.empty(size, dtype=np.float64)
    cdef double[::1] a_view = buf_a
    cdef double[::1] b_view = buf_b
    cdef double* a
    cdef double* b
    cdef double* tmp
    cdef double acc, val, diff, worst
    cdef bint done

    with nogil:
        for r in range(R):
            a = &a_view[0]
            b = &b_view[0]
            for p in range(size):
                a[p] = init
            for k in range(1, iterations + 1):
                for i in range(kappa):
                    lo[i] = k * dlt[i]
                    hi[i] = dims[i] - k * dlt[i]
                    idx[i] = lo[i]
                worst = 0.0
                done = False
                while not done:
                    p = 0
                    for i in range(kappa):
                        p += idx[i] * stride[i]
                    acc = w[0] * a[p + off[0]]
                    for j in range(1, n_off):
                        acc = acc + w[j] * a[p + off[j]]
                    val = _act(acc, activation) + beta * e[r, p]
                    if trace:
                        diff = fabs(val - a[p])
                        if diff > worst:
                            worst = diff
                    b[p] = val
                    # odometer over the region, last axis fastest
                    i = kappa - 1
                    while True:
                        idx[i] += 1
                        if idx[i] < hi[i]:
                            break
                        idx[i] = lo[i]
                        if i == 0:
                            done = True
                            break
                        i -= 1
                if trace:
                    res[r, k - 1] = worst
                tmp = a
                a = b
                b = tmp
            # copy the surviving region in C order
            for i in range(kappa):
                lo[i] = iterations * dlt[i]
                hi[i] = dims[i] - iterations * dlt[i]
                idx[i] = lo[i]
            q = 0
            done = False
            while not done:
                p = 0
                for i in range(kappa):
                    p += idx[i] * stride[i]
                out[r, q] = a[p]
                q += 1
                i = kappa - 1
                while True:
                    idx[i] += 1
                    if idx[i] < hi[i]:
                        break
                    idx[i] = lo[i]
                    if i == 0:
                        done = True
                        break
                    i -= 1

    return out_arr.reshape((R,) + final_shape), (resid_arr if trace else None)

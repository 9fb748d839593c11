# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def bspline_basis(x, knots, int degree):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] t = np.ascontiguousarray(knots, dtype=np.float64)
    cdef Py_ssize_t p = degree
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t n_basis = t.shape[0] - p - 1
    out = np.zeros((n, n_basis), dtype=np.float64)
    cdef double[:, ::1] B = out
    cdef double[::1] N = np.zeros(p + 1)
    cdef double[::1] left = np.zeros(p + 1)
    cdef double[::1] right = np.zeros(p + 1)
    cdef Py_ssize_t i, s, j, r, last
    cdef double u, saved, tmp, hi = t[n_basis]
    last = n_basis - 1
    while last > p and t[last] == t[last + 1]:
        last -= 1
    for i in range(n):
        u = xv[i]
        if u >= hi:
            s = last
        else:
            s = p
            while s < n_basis - 1 and t[s + 1] <= u:
                s += 1
        # triangular Cox-de Boor table for the p+1 non-zero functions
        N[0] = 1.0
        for j in range(1, p + 1):
            left[j] = u - t[s + 1 - j]
            right[j] = t[s + j] - u
            saved = 0.0
            for r in range(j):
                tmp = right[r + 1] + left[j - r]
                if tmp != 0.0:
                    tmp = N[r] / tmp
                else:
                    tmp = 0.0
                N[r] = saved + right[r + 1] * tmp
                saved = left[j - r] * tmp
            N[j] = saved
        for j in range(p + 1):
            B[i, s - p + j] = N[j]
    return out


def mckp_dp(delta, costs, Py_ssize_t capacity, order):
    cdef double[:, ::1] d = np.ascontiguousarray(delta, dtype=np.float64)
    cdef long long[::1] c = np.ascontiguousarray(costs, dtype=np.int64)
    cdef long long[::1] ordv = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n = d.shape[0], m = ordv.shape[0], cap = capacity
    Z_arr = np.zeros(cap + 1)
    new_arr = np.empty(cap + 1)
    choice_arr = np.full((n, cap + 1), -1, dtype=np.int32)
    cdef double[::1] Z = Z_arr
    cdef double[::1] new = new_arr
    cdef int[:, ::1] choice = choice_arr
    cdef Py_ssize_t l, k, b, cj
    cdef long long j
    cdef double val, dv
    for l in range(n):
        for b in range(cap + 1):
            new[b] = -INFINITY
        for k in range(m):
            j = ordv[k]
            cj = c[j]
            if cj > cap:
                continue
            dv = d[l, j]
            for b in range(cj, cap + 1):
                val = Z[b - cj] + dv
                if val > new[b]:
                    new[b] = val
                    choice[l, b] = <int>j
        for b in range(cap + 1):
            Z[b] = new[b]
        if Z[cap] == -INFINITY:
            return Z_arr, choice_arr, l
    return Z_arr, choice_arr, -1

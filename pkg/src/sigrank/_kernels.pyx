# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the inner loops in :mod:`sigrank._pykernels`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def dtw_distance(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64).reshape(len(a), -1)
    cdef double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64).reshape(len(b), -1)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], d = A.shape[1]
    if B.shape[1] != d:
        raise ValueError("dimension mismatch")
    if n == 0 or m == 0:
        raise ValueError("empty sequence")
    cdef double[::1] prev = np.full(m + 1, INFINITY)
    cdef double[::1] cur = np.full(m + 1, INFINITY)
    cdef double[::1] tmp
    cdef Py_ssize_t i, j, k
    cdef double c, diff, best
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = INFINITY
        for j in range(1, m + 1):
            c = 0.0
            for k in range(d):
                diff = A[i - 1, k] - B[j - 1, k]
                c += diff * diff
            c = sqrt(c)
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = c + best
        tmp = prev
        prev = cur
        cur = tmp
    return float(prev[m])


def loss_augmented_dp(s1, s2, double eps_signed):
    cdef double[::1] g1 = np.ascontiguousarray(s1, dtype=np.float64)
    cdef double[::1] g2 = np.ascontiguousarray(s2, dtype=np.float64)
    cdef Py_ssize_t n1 = g1.shape[0], n2 = g2.shape[0]
    cdef double[::1] prefix = np.zeros(n2 + 1)
    cdef Py_ssize_t i, j
    cdef double norm = 1.0 / (n1 * n2)
    cdef double total, gain, a, b
    for j in range(n2):
        prefix[j + 1] = prefix[j] + g2[j]
    total = prefix[n2]
    V_arr = np.full((n1 + 1, n2 + 1), -INFINITY)
    C_arr = np.zeros((n1 + 1, n2 + 1), dtype=np.int8)
    cdef double[:, ::1] V = V_arr
    cdef cnp.int8_t[:, ::1] choice = C_arr
    V[0, 0] = eps_signed
    for i in range(n1 + 1):
        for j in range(n2 + 1):
            if i == 0 and j == 0:
                continue
            a = -INFINITY
            b = -INFINITY
            if i > 0:
                gain = ((n2 - 2 * j) * g1[i - 1] + 2.0 * prefix[j] - total) * norm
                a = V[i - 1, j] + gain - eps_signed * (<double>i / (i + j)) / n1
            if j > 0:
                b = V[i, j - 1]
            if a >= b:
                V[i, j] = a
                choice[i, j] = 1
            else:
                V[i, j] = b
                choice[i, j] = 0
    pattern = np.zeros(n1 + n2, dtype=bool)
    i = n1
    j = n2
    while i > 0 or j > 0:
        if choice[i, j] == 1:
            pattern[i + j - 1] = True
            i -= 1
        else:
            j -= 1
    return pattern, float(V[n1, n2])


# ---------------------------------------------------------------------------
# network elementwise kernels; all arrays are (batch, time, channels), C order

ctypedef fused real:
    float
    double

cdef double SELU_ALPHA = 1.6732632423543772848170429916717
cdef double SELU_SCALE = 1.0507009873554804934193349852946



def _selu_forward(real[:, :, ::1] z, real[:, :, ::1] em1, const cnp.int64_t[::1] lengths, real[:, :, ::1] out):
    cdef Py_ssize_t B = z.shape[0], L = z.shape[1], C = z.shape[2]
    cdef Py_ssize_t b, t, c, n
    cdef real scale = <real>SELU_SCALE, neg = <real>(SELU_SCALE * SELU_ALPHA)
    for b in range(B):
        n = lengths[b]
        for t in range(L):
            if t >= n:
                for c in range(C):
                    out[b, t, c] = 0
                continue
            for c in range(C):
                if z[b, t, c] > 0:
                    out[b, t, c] = scale * z[b, t, c]
                else:
                    out[b, t, c] = neg * em1[b, t, c]


def _selu_backward(real[:, :, ::1] dx, real[:, :, ::1] z, real[:, :, ::1] a, const cnp.int64_t[::1] lengths,
                   real[:, :, ::1] out):
    cdef Py_ssize_t B = z.shape[0], L = z.shape[1], C = z.shape[2]
    cdef Py_ssize_t b, t, c, n
    cdef real scale = <real>SELU_SCALE, neg = <real>(SELU_SCALE * SELU_ALPHA)
    for b in range(B):
        n = lengths[b]
        for t in range(L):
            if t >= n:
                for c in range(C):
                    out[b, t, c] = 0
                continue
            for c in range(C):
                if z[b, t, c] > 0:
                    out[b, t, c] = dx[b, t, c] * scale
                else:
                    out[b, t, c] = dx[b, t, c] * (a[b, t, c] + neg)


def _pool_forward(real[:, :, ::1] x, const cnp.int64_t[::1] out_lengths, real[:, :, ::1] out,
                  cnp.uint8_t[:, :, ::1] arg):
    cdef Py_ssize_t B = out.shape[0], H = out.shape[1], C = out.shape[2]
    cdef Py_ssize_t b, j, c, n
    cdef real a0, a1
    for b in range(B):
        n = out_lengths[b]
        for j in range(H):
            if j >= n:
                for c in range(C):
                    out[b, j, c] = 0
                    arg[b, j, c] = 0
                continue
            for c in range(C):
                a0 = x[b, 2 * j, c]
                a1 = x[b, 2 * j + 1, c]
                if a1 > a0:
                    out[b, j, c] = a1
                    arg[b, j, c] = 1
                else:
                    out[b, j, c] = a0
                    arg[b, j, c] = 0


def _pool_backward(real[:, :, ::1] dout, cnp.uint8_t[:, :, ::1] arg, const cnp.int64_t[::1] out_lengths,
                   real[:, :, ::1] dx):
    cdef Py_ssize_t B = dout.shape[0], C = dout.shape[2]
    cdef Py_ssize_t b, j, c, n
    for b in range(B):
        n = out_lengths[b]
        for j in range(n):
            for c in range(C):
                dx[b, 2 * j + arg[b, j, c], c] = dout[b, j, c]


def selu_mask_forward(z, lengths):
    # numpy's vectorised expm1 is far faster than scalar libm calls
    em1 = np.expm1(np.minimum(z, 0))
    out = np.empty_like(z)
    _selu_forward(z, em1, lengths, out)
    return out


def selu_mask_backward(dx, z, a, lengths):
    out = np.empty_like(z)
    _selu_backward(np.ascontiguousarray(dx), z, a, lengths, out)
    return out


def maxpool_forward(x, out_lengths):
    B, L, C = x.shape
    out = np.empty((B, L // 2, C), dtype=x.dtype)
    arg = np.empty((B, L // 2, C), dtype=np.uint8)
    _pool_forward(np.ascontiguousarray(x), out_lengths, out, arg)
    return out, arg


def maxpool_backward(dout, arg, out_lengths, L):
    B, H, C = dout.shape
    dx = np.zeros((B, L, C), dtype=dout.dtype)
    _pool_backward(np.ascontiguousarray(dout), arg, out_lengths, dx)
    return dx

# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Cython lane of the hot kernels.

Same contract and same random stream as ``reference``; transforms go through
BLAS dgemm, the OU update / RNG / inverse-CDF run as fused scalar loops, and
sorting uses adaptive insertion sort (the pre-rearrangement field is nearly
sorted) with a qsort fallback for disordered rows.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport qsort
from libc.string cimport memcpy

from scipy.linalg.cython_blas cimport dgemm
from scipy.special.cython_special cimport ndtri

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15UL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9UL
cdef uint64_t MIX2 = 0x94D049BB133111EBUL
cdef double TWO53INV = 1.0 / 9007199254740992.0


cdef inline uint64_t _finalize(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double _normal(uint64_t base, uint64_t step) nogil:
    cdef uint64_t z = _finalize(base + GOLDEN + step)
    return ndtri(((z >> 11) + 0.5) * TWO53INV)


cdef void _matmul(const double* a, const double* b, double* c, int n, int k, int m) nogil:
    """C (n x m) = A (n x k) @ B (k x m), all row-major."""
    cdef int mm = m, nn = n, kk = k
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "N", &mm, &nn, &kk, &one, <double*> b, &mm, <double*> a, &kk, &zero, c, &mm)


cdef int _cmp_double(const void* pa, const void* pb) noexcept nogil:
    cdef double x = (<const double*> pa)[0]
    cdef double y = (<const double*> pb)[0]
    if x < y:
        return -1
    elif x > y:
        return 1
    return 0


cdef void _sort_row(double* v, int m) nogil:
    """Ascending sort; insertion sort unless the row is badly disordered."""
    cdef int i, j, descents = 0
    cdef double key
    for i in range(1, m):
        if v[i] < v[i - 1]:
            descents += 1
    if descents == 0:
        return
    if descents > m // 8:
        qsort(v, m, sizeof(double), _cmp_double)
        return
    for i in range(1, m):
        key = v[i]
        j = i - 1
        while j >= 0 and v[j] > key:
            v[j + 1] = v[j]
            j -= 1
        v[j + 1] = key


def step_batch(const double[:, ::1] states, drift, const double[:, ::1] synth,
               const double[:, ::1] anal, const double[::1] decay, gain,
               const double[::1] noise_std, const cnp.uint64_t[:, ::1] base, step):
    """One splitting step for a batch; see the package docstring."""
    cdef int n = states.shape[0]
    cdef int m = states.shape[1]
    cdef int k1 = synth.shape[0]
    cdef uint64_t step_u = <uint64_t> step
    cdef bint has_noise = False
    cdef bint has_drift = drift is not None
    cdef int i, k

    for k in range(k1):
        if noise_std[k] != 0.0:
            has_noise = True
            break

    pre_arr = np.empty((n, m), dtype=np.float64)
    post_arr = np.empty((n, m), dtype=np.float64)
    coef_arr = np.empty((n, k1), dtype=np.float64)
    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] post = post_arr
    cdef double[:, ::1] coef = coef_arr
    cdef const double[:, ::1] dsec
    cdef double[:, ::1] dcoef
    cdef const double[::1] gv
    dcoef_arr = None
    if has_drift:
        dsec = np.ascontiguousarray(drift, dtype=np.float64)
        gv = np.ascontiguousarray(gain, dtype=np.float64)
        dcoef_arr = np.empty((n, k1), dtype=np.float64)
        dcoef = dcoef_arr

    with nogil:
        _matmul(&states[0, 0], &anal[0, 0], &coef[0, 0], n, m, k1)
        if has_drift:
            _matmul(&dsec[0, 0], &anal[0, 0], &dcoef[0, 0], n, m, k1)
        for i in range(n):
            for k in range(k1):
                coef[i, k] = coef[i, k] * decay[k]
                if has_drift:
                    coef[i, k] = coef[i, k] - dcoef[i, k] * gv[k]
                if has_noise and noise_std[k] != 0.0:
                    coef[i, k] = coef[i, k] + noise_std[k] * _normal(base[i, k], step_u)
        _matmul(&coef[0, 0], &synth[0, 0], &pre[0, 0], n, k1, m)
        memcpy(&post[0, 0], &pre[0, 0], n * m * sizeof(double))
        for i in range(n):
            _sort_row(&post[i, 0], m)
    return pre_arr, post_arr


def run_driftless(const double[:, ::1] states, const double[:, ::1] synth,
                  const double[:, ::1] anal, const double[::1] decay,
                  const double[::1] noise_std, const cnp.uint64_t[:, ::1] base,
                  step0, n_steps, snap_steps):
    """Advance ``n_steps`` with zero drift; fused step loop in C."""
    cdef int n = states.shape[0]
    cdef int m = states.shape[1]
    cdef int k1 = synth.shape[0]
    cdef uint64_t step_base = <uint64_t> step0
    cdef int64_t total = <int64_t> n_steps
    cdef bint has_noise = False
    cdef int i, k
    cdef int64_t s
    cdef double acc

    for k in range(k1):
        if noise_std[k] != 0.0:
            has_noise = True
            break

    snap_arr = np.asarray(snap_steps, dtype=np.int64)
    cdef const int64_t[::1] snaps_at = snap_arr
    cdef int n_snap = snap_arr.shape[0]
    out_arr = np.array(states, dtype=np.float64, copy=True)
    snaps_out = np.empty((n_snap, n, m), dtype=np.float64)
    refl_arr = np.zeros(n, dtype=np.float64)
    pre_arr = np.empty((n, m), dtype=np.float64)
    coef_arr = np.empty((n, k1), dtype=np.float64)
    cdef double[:, ::1] cur = out_arr
    cdef double[:, :, ::1] snaps = snaps_out
    cdef double[::1] refl = refl_arr
    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] coef = coef_arr
    cdef int j = 0

    with nogil:
        for s in range(total):
            _matmul(&cur[0, 0], &anal[0, 0], &coef[0, 0], n, m, k1)
            for i in range(n):
                for k in range(k1):
                    coef[i, k] = coef[i, k] * decay[k]
                    if has_noise and noise_std[k] != 0.0:
                        coef[i, k] = coef[i, k] + noise_std[k] * _normal(
                            base[i, k], step_base + <uint64_t> s)
            _matmul(&coef[0, 0], &synth[0, 0], &pre[0, 0], n, k1, m)
            memcpy(&cur[0, 0], &pre[0, 0], n * m * sizeof(double))
            for i in range(n):
                _sort_row(&cur[i, 0], m)
                acc = 0.0
                for k in range(m):
                    acc += cur[i, k] * (cur[i, k] - pre[i, k])
                refl[i] += acc / m
            if j < n_snap and snaps_at[j] == s + 1:
                memcpy(&snaps[j, 0, 0], &cur[0, 0], n * m * sizeof(double))
                j += 1
    return out_arr, snaps_out, refl_arr

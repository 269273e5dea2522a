# cython: boundscheck=False, wraparound=False, language_level=3
"""Compiled batch kernels: thin wrappers over the C hot loops.

Same contract as ``_ref.py``. The heavy lifting (particle-vectorized tanh
recursion) lives in ``_recursion.c``; results are deterministic for fixed
inputs on a fixed build.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "c"

cdef extern from "_recursion.h":
    int rnnhar_batch_loss(long m, const double *theta,
                          const double *rvd, const double *rvw, const double *rvm,
                          const double *y, long t_start, long t_end, double alpha,
                          const double *h0, double *loss, double *hout) nogil
    int rnnhar_batch_step(long m, const double *theta,
                          double rvd_t, double rvw_t, double rvm_t,
                          const double *h, double *hout, double *q) nogil


def batch_loss(theta, rv_d, rv_w, rv_m, y, long t_start, long t_end,
               double alpha, h0):
    cdef double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[::1] rd = np.ascontiguousarray(rv_d, dtype=np.float64)
    cdef double[::1] rw = np.ascontiguousarray(rv_w, dtype=np.float64)
    cdef double[::1] rm = np.ascontiguousarray(rv_m, dtype=np.float64)
    cdef double[::1] ret = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] hinit = np.ascontiguousarray(h0, dtype=np.float64)

    if t_start < 1:
        raise ValueError("t_start must be >= 1 (the recursion reads day t-1)")
    if t_end > ret.shape[0]:
        raise ValueError("t_end exceeds the data length")

    cdef long m = th.shape[0]
    loss_arr = np.empty(m, dtype=np.float64)
    hout_arr = np.empty((m, 3), dtype=np.float64)
    cdef double[::1] loss = loss_arr
    cdef double[:, ::1] hout = hout_arr
    cdef int rc
    with nogil:
        rc = rnnhar_batch_loss(m, &th[0, 0], &rd[0], &rw[0], &rm[0], &ret[0],
                               t_start, t_end, alpha, &hinit[0, 0],
                               &loss[0], &hout[0, 0])
    if rc != 0:
        raise MemoryError("kernel scratch allocation failed")
    return loss_arr, hout_arr


def batch_step(theta, double rvd_t, double rvw_t, double rvm_t, h):
    cdef double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[:, ::1] hin = np.ascontiguousarray(h, dtype=np.float64)
    cdef long m = th.shape[0]
    hout_arr = np.empty((m, 3), dtype=np.float64)
    q_arr = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] hout = hout_arr
    cdef double[::1] q = q_arr
    with nogil:
        rnnhar_batch_step(m, &th[0, 0], rvd_t, rvw_t, rvm_t,
                          &hin[0, 0], &hout[0, 0], &q[0])
    return hout_arr, q_arr

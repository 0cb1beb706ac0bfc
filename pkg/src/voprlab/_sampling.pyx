# Compiled sampling walks.  Both backends consume pre-drawn uniforms and do
# only integer work, so their outputs are bit-identical to _sampling_py.
import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


cdef inline Py_ssize_t _invcdf(const double* cum, Py_ssize_t k, double u) nogil:
    # number of cumulative entries <= u, clipped to the last bucket
    cdef Py_ssize_t j = 0
    while j < k - 1 and cum[j] <= u:
        j += 1
    return j


def sample_tuples(const double[::1] cum_mu, const double[:, ::1] cum_pi,
                  const double[:, :, ::1] cum_p, const double[:, ::1] u):
    """Draw n independent (s, a, s') index triples from uniforms u[i, 0:3]."""
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t S = cum_mu.shape[0]
    cdef Py_ssize_t A = cum_pi.shape[1]
    s_out = np.empty(n, dtype=np.int64)
    a_out = np.empty(n, dtype=np.int64)
    sp_out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] s_v = s_out
    cdef cnp.int64_t[::1] a_v = a_out
    cdef cnp.int64_t[::1] sp_v = sp_out
    cdef Py_ssize_t i, s, a
    with nogil:
        for i in range(n):
            s = _invcdf(&cum_mu[0], S, u[i, 0])
            a = _invcdf(&cum_pi[s, 0], A, u[i, 1])
            sp_v[i] = _invcdf(&cum_p[s, a, 0], S, u[i, 2])
            s_v[i] = s
            a_v[i] = a
    return s_out, a_out, sp_out


def restart_walk(const double[::1] cum_start, const double[:, ::1] cum_pi,
                 const double[:, :, ::1] cum_p, double restart_prob,
                 const double[:, ::1] u):
    """Walk the restart chain whose stationary law is the discounted occupancy.

    Step t consumes u[t, 0] (restart gate, reused for the restart or
    transition draw) and u[t, 1] (action draw on the transition branch).
    Step 0 is a forced restart.  Returns the visited (s, a) index sequences.
    """
    cdef Py_ssize_t T = u.shape[0]
    cdef Py_ssize_t S = cum_pi.shape[0]
    cdef Py_ssize_t A = cum_pi.shape[1]
    cdef Py_ssize_t SA = cum_start.shape[0]
    s_out = np.empty(T, dtype=np.int64)
    a_out = np.empty(T, dtype=np.int64)
    cdef cnp.int64_t[::1] s_v = s_out
    cdef cnp.int64_t[::1] a_v = a_out
    cdef Py_ssize_t t, pair, s, a
    with nogil:
        pair = _invcdf(&cum_start[0], SA, u[0, 0])
        s = pair // A
        a = pair % A
        s_v[0] = s
        a_v[0] = a
        for t in range(1, T):
            if u[t, 0] < restart_prob:
                pair = _invcdf(&cum_start[0], SA, u[t, 0] / restart_prob)
                s = pair // A
                a = pair % A
            else:
                s = _invcdf(&cum_p[s, a, 0], S,
                            (u[t, 0] - restart_prob) / (1.0 - restart_prob))
                a = _invcdf(&cum_pi[s, 0], A, u[t, 1])
            s_v[t] = s
            a_v[t] = a
    return s_out, a_out

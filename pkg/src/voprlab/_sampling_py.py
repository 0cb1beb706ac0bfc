"""Pure numpy/Python sampling walks; fallback for the compiled kernels.

Given the same pre-drawn uniforms these produce the same integer sequences,
bit for bit, as voprlab._sampling: the inverse-CDF rule (count of cumulative
entries <= u, clipped to the last bucket) and every float expression match
the compiled code.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def sample_tuples(cum_mu, cum_pi, cum_p, u):
    """Draw n independent (s, a, s') index triples from uniforms u[i, 0:3]."""
    S = cum_mu.shape[0]
    A = cum_pi.shape[1]
    s = np.minimum((cum_mu[None, :] <= u[:, 0:1]).sum(axis=1), S - 1)
    a = np.minimum((cum_pi[s] <= u[:, 1:2]).sum(axis=1), A - 1)
    sp = np.minimum((cum_p[s, a] <= u[:, 2:3]).sum(axis=1), S - 1)
    return s.astype(np.int64), a.astype(np.int64), sp.astype(np.int64)


def _invcdf(cum, k, u):
    j = 0
    while j < k - 1 and cum[j] <= u:
        j += 1
    return j


def restart_walk(cum_start, cum_pi, cum_p, restart_prob, u):
    """Sequential restart-chain walk; see the compiled twin for the contract."""
    T = u.shape[0]
    S = cum_pi.shape[0]
    A = cum_pi.shape[1]
    SA = cum_start.shape[0]
    # plain lists keep the inner loop cheap; the arithmetic is IEEE double
    # either way so the branch decisions match the compiled path exactly
    start = cum_start.tolist()
    pi_rows = cum_pi.tolist()
    p_rows = cum_p.tolist()
    uu = u.tolist()
    restart_prob = float(restart_prob)
    s_out = np.empty(T, dtype=np.int64)
    a_out = np.empty(T, dtype=np.int64)
    pair = _invcdf(start, SA, uu[0][0])
    s = pair // A
    a = pair % A
    s_out[0] = s
    a_out[0] = a
    for t in range(1, T):
        u0, u1 = uu[t]
        if u0 < restart_prob:
            pair = _invcdf(start, SA, u0 / restart_prob)
            s = pair // A
            a = pair % A
        else:
            s = _invcdf(p_rows[s][a], S, (u0 - restart_prob) / (1.0 - restart_prob))
            a = _invcdf(pi_rows[s], A, u1)
        s_out[t] = s
        a_out[t] = a
    return s_out, a_out

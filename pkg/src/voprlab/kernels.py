"""Backend selector for the sampling walks.

Imports the compiled extension when the build produced one, otherwise the
pure numpy fallback.  BACKEND names the active implementation.  Results do
not depend on the choice: both walks take pre-drawn uniforms and return the
same integer sequences bit for bit.
"""
from __future__ import annotations

import numpy as np

try:
    from voprlab import _sampling as _impl
except ImportError:  # pragma: no cover - depends on the build environment
    from voprlab import _sampling_py as _impl

BACKEND: str = _impl.BACKEND

__all__ = ["BACKEND", "sample_tuples", "restart_walk", "row_cumsum"]


def row_cumsum(p) -> np.ndarray:
    """Cumulative sums along the last axis, contiguous float64."""
    return np.ascontiguousarray(np.cumsum(np.asarray(p, dtype=np.float64), axis=-1))


def sample_tuples(cum_mu, cum_pi, cum_p, u):
    u = np.ascontiguousarray(u, dtype=np.float64)
    return _impl.sample_tuples(
        np.ascontiguousarray(cum_mu, dtype=np.float64),
        np.ascontiguousarray(cum_pi, dtype=np.float64),
        np.ascontiguousarray(cum_p, dtype=np.float64),
        u,
    )


def restart_walk(cum_start, cum_pi, cum_p, restart_prob, u):
    u = np.ascontiguousarray(u, dtype=np.float64)
    return _impl.restart_walk(
        np.ascontiguousarray(cum_start, dtype=np.float64),
        np.ascontiguousarray(cum_pi, dtype=np.float64),
        np.ascontiguousarray(cum_p, dtype=np.float64),
        float(restart_prob),
        u,
    )

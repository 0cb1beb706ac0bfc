"""Text round-trip helpers shared by the file formats."""
from __future__ import annotations

import numpy as np

__all__ = ["fmt_float", "fmt_vector", "parse_vector"]


def fmt_float(x) -> str:
    """Shortest decimal that round-trips to the same float64 bits."""
    return repr(float(x))


def fmt_vector(values) -> str:
    return " ".join(fmt_float(v) for v in np.asarray(values, dtype=np.float64).ravel())


def parse_vector(line: str) -> np.ndarray:
    parts = line.split()
    return np.array([float(p) for p in parts], dtype=np.float64)

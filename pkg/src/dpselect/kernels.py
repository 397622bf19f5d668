"""Backend selection for the sampling kernels.

The compiled extension is used when it imports cleanly. Setting
``DP_SELECT_PURE_PYTHON=1`` forces the fallback, which is handy for
debugging and for checking that both backends agree.
"""

from __future__ import annotations

import os

import numpy as np

from dpselect import _kernels_py

_force_pure = os.environ.get("DP_SELECT_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure-Python kernels requested")
    from dpselect import _kernels as _impl  # type: ignore[attr-defined]
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"
else:
    BACKEND = "compiled"

LAPLACE = _kernels_py.LAPLACE
STUDENT_T = _kernels_py.STUDENT_T
LLN = _kernels_py.LLN
GUMBEL = _kernels_py.GUMBEL
EXPONENTIAL = _kernels_py.EXPONENTIAL


def noisy_max_counts(utilities, scale, kind, trials, rng, dof=3.0, sigma=1.0) -> np.ndarray:
    u = np.ascontiguousarray(utilities, dtype=np.float64)
    return _impl.noisy_max_counts(u, float(scale), int(kind), int(trials), rng, float(dof), float(sigma))


def pf_counts(accept, trials, rng) -> np.ndarray:
    p = np.ascontiguousarray(accept, dtype=np.float64)
    return _impl.pf_counts(p, int(trials), rng)


def pf_enumerate(accept) -> np.ndarray:
    p = np.ascontiguousarray(accept, dtype=np.float64)
    return _impl.pf_enumerate(p)

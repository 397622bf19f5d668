import os
import subprocess
import sys

import numpy as np
import pytest

from dpselect import _kernels_py, kernels

KINDS = [kernels.LAPLACE, kernels.STUDENT_T, kernels.LLN, kernels.GUMBEL, kernels.EXPONENTIAL]


@pytest.mark.parametrize("kind", KINDS)
def test_backends_agree_bit_for_bit(kind):
    u = np.array([1.0, 0.0, 0.5, 0.5])
    a = kernels.noisy_max_counts(u, 0.7, kind, 20000, np.random.default_rng(3))
    b = _kernels_py.noisy_max_counts(u, 0.7, kind, 20000, np.random.default_rng(3), 3.0, 1.0)
    np.testing.assert_array_equal(a, b)
    assert a.sum() == 20000


def test_pf_backends_agree():
    p = np.array([1.0, 0.3, 0.6])
    a = kernels.pf_counts(p, 20000, np.random.default_rng(1))
    b = _kernels_py.pf_counts(p, 20000, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(kernels.pf_enumerate(p), _kernels_py.pf_enumerate(p), atol=1e-15)


def test_backend_name():
    assert kernels.BACKEND in ("compiled", "python")


def test_pure_python_switch():
    env = dict(os.environ, DP_SELECT_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from dpselect import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"

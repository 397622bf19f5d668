"""Pure-Python sampling kernels.

Reference implementation of the compiled kernels. The random stream is
consumed in the same order as the compiled version, chunk by chunk, so a
given generator state yields the same counts on either backend.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

CHUNK = 65536

LAPLACE = 0
STUDENT_T = 1
LLN = 2
GUMBEL = 3
EXPONENTIAL = 4


def _standard_draws(rng: np.random.Generator, kind: int, shape, dof: float, sigma: float):
    if kind == LAPLACE:
        return rng.laplace(0.0, 1.0, shape)
    if kind == STUDENT_T:
        return rng.standard_t(dof, shape)
    if kind == GUMBEL:
        return rng.gumbel(0.0, 1.0, shape)
    if kind == EXPONENTIAL:
        return rng.standard_exponential(shape)
    if kind == LLN:
        lap = rng.laplace(0.0, 1.0, shape)
        nrm = rng.standard_normal(shape)
        return lap * np.exp(sigma * nrm)
    raise ValueError(f"unknown noise code {kind}")


def noisy_max_counts(utilities, scale, kind, trials, rng, dof=3.0, sigma=1.0):
    """Count argmax winners of ``utilities + scale * Z`` over ``trials`` draws."""
    utilities = np.ascontiguousarray(utilities, dtype=np.float64)
    n_out = utilities.shape[0]
    counts = np.zeros(n_out, dtype=np.int64)
    if trials <= 0 or n_out == 0:
        return counts
    done = 0
    while done < trials:
        m = min(trials - done, CHUNK)
        z = _standard_draws(rng, kind, (m, n_out), dof, sigma)
        winners = np.argmax(utilities + scale * z, axis=1)
        counts += np.bincount(winners, minlength=n_out)
        done += m
    return counts


def pf_counts(accept, trials, rng):
    """Run permute-and-flip ``trials`` times with per-outcome acceptance probabilities."""
    accept = np.ascontiguousarray(accept, dtype=np.float64)
    n_out = accept.shape[0]
    counts = np.zeros(n_out, dtype=np.int64)
    if trials <= 0 or n_out == 0:
        return counts
    done = 0
    while done < trials:
        m = min(trials - done, CHUNK)
        keys = rng.random((m, n_out))
        coins = rng.random((m, n_out))
        order = np.argsort(keys, axis=1, kind="stable")
        accepted = coins < accept[order]
        first = accepted.argmax(axis=1)
        chosen = order[np.arange(m), first]
        counts += np.bincount(chosen, minlength=n_out)
        done += m
    return counts


def pf_enumerate(accept):
    """Exact permute-and-flip probabilities by walking every permutation."""
    accept = [float(a) for a in accept]
    n_out = len(accept)
    probs = [0.0] * n_out
    for perm in itertools.permutations(range(n_out)):
        survive = 1.0
        for r in perm:
            probs[r] += survive * accept[r]
            survive *= 1.0 - accept[r]
            if survive == 0.0:
                break
    return np.asarray(probs, dtype=np.float64) / float(math.factorial(n_out))

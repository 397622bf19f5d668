# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels.

Each kernel consumes the generator's bit stream in exactly the order used by
``dpselect._kernels_py`` so both backends return identical counts for the
same seed.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport exp
from libc.stdint cimport int64_t
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_gumbel,
    random_laplace,
    random_standard_exponential,
    random_standard_normal,
    random_standard_t,
    random_standard_uniform,
)

cnp.import_array()

cdef enum:
    CHUNK = 65536

# Noise codes shared with the fallback module.
cdef enum:
    C_LAPLACE = 0
    C_STUDENT_T = 1
    C_LLN = 2
    C_GUMBEL = 3
    C_EXPONENTIAL = 4

LAPLACE = C_LAPLACE
STUDENT_T = C_STUDENT_T
LLN = C_LLN
GUMBEL = C_GUMBEL
EXPONENTIAL = C_EXPONENTIAL


cdef bitgen_t* _bitgen(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("generator does not expose a numpy BitGenerator capsule")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _draw(bitgen_t* state, int kind, double dof) noexcept nogil:
    if kind == C_LAPLACE:
        return random_laplace(state, 0.0, 1.0)
    if kind == C_STUDENT_T:
        return random_standard_t(state, dof)
    if kind == C_GUMBEL:
        return random_gumbel(state, 0.0, 1.0)
    return random_standard_exponential(state)


def noisy_max_counts(double[::1] utilities, double scale, int kind, int64_t trials,
                     object rng, double dof=3.0, double sigma=1.0):
    """Count argmax winners of ``utilities + scale * Z`` over ``trials`` draws."""
    cdef Py_ssize_t n_out = utilities.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts_arr = np.zeros(n_out, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef double[::1] lap
    cdef double[::1] nrm
    cdef bitgen_t* state
    cdef int64_t done = 0, m, i
    cdef Py_ssize_t r, best_idx, base
    cdef double best, value

    if trials <= 0 or n_out == 0:
        return counts_arr
    bit_generator = rng.bit_generator
    state = _bitgen(bit_generator)
    if kind == C_LLN:
        lap = np.empty(min(trials, CHUNK) * n_out, dtype=np.float64)
        nrm = np.empty(min(trials, CHUNK) * n_out, dtype=np.float64)

    with bit_generator.lock, nogil:
        while done < trials:
            m = min(trials - done, <int64_t> CHUNK)
            if kind == C_LLN:
                for i in range(m * n_out):
                    lap[i] = random_laplace(state, 0.0, 1.0)
                for i in range(m * n_out):
                    nrm[i] = random_standard_normal(state)
                for i in range(m):
                    base = i * n_out
                    best_idx = 0
                    best = utilities[0] + scale * (lap[base] * exp(sigma * nrm[base]))
                    for r in range(1, n_out):
                        value = utilities[r] + scale * (lap[base + r] * exp(sigma * nrm[base + r]))
                        if value > best:
                            best = value
                            best_idx = r
                    counts[best_idx] += 1
            else:
                for i in range(m):
                    best_idx = 0
                    best = utilities[0] + scale * _draw(state, kind, dof)
                    for r in range(1, n_out):
                        value = utilities[r] + scale * _draw(state, kind, dof)
                        if value > best:
                            best = value
                            best_idx = r
                    counts[best_idx] += 1
            done += m
    return counts_arr


def pf_counts(double[::1] accept, int64_t trials, object rng):
    """Run permute-and-flip ``trials`` times with per-outcome acceptance probabilities."""
    cdef Py_ssize_t n_out = accept.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts_arr = np.zeros(n_out, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef double[::1] keys
    cdef double[::1] coins
    cdef Py_ssize_t[::1] order
    cdef bitgen_t* state
    cdef int64_t done = 0, m, i, j
    cdef Py_ssize_t a, b, pos, tmp, base
    cdef double key

    if trials <= 0 or n_out == 0:
        return counts_arr
    keys = np.empty(min(trials, CHUNK) * n_out, dtype=np.float64)
    coins = np.empty(min(trials, CHUNK) * n_out, dtype=np.float64)
    order = np.empty(n_out, dtype=np.intp)
    bit_generator = rng.bit_generator
    state = _bitgen(bit_generator)

    with bit_generator.lock, nogil:
        while done < trials:
            m = min(trials - done, <int64_t> CHUNK)
            for j in range(m * n_out):
                keys[j] = random_standard_uniform(state)
            for j in range(m * n_out):
                coins[j] = random_standard_uniform(state)
            for i in range(m):
                base = i * n_out
                # stable insertion sort of positions by key
                for a in range(n_out):
                    order[a] = a
                for a in range(1, n_out):
                    tmp = order[a]
                    key = keys[base + tmp]
                    b = a - 1
                    while b >= 0 and keys[base + order[b]] > key:
                        order[b + 1] = order[b]
                        b -= 1
                    order[b + 1] = tmp
                for pos in range(n_out):
                    if coins[base + pos] < accept[order[pos]]:
                        counts[order[pos]] += 1
                        break
            done += m
    return counts_arr


def pf_enumerate(double[::1] accept):
    """Exact permute-and-flip probabilities by walking every permutation."""
    cdef Py_ssize_t n_out = accept.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] probs_arr = np.zeros(n_out, dtype=np.float64)
    cdef double[::1] probs = probs_arr
    cdef Py_ssize_t[::1] perm = np.arange(n_out, dtype=np.intp)
    cdef Py_ssize_t k, l, a, b, tmp, r
    cdef double survive, total = 1.0

    if n_out == 0:
        return probs_arr
    for k in range(2, n_out + 1):
        total *= k
    with nogil:
        while True:
            survive = 1.0
            for k in range(n_out):
                r = perm[k]
                probs[r] += survive * accept[r]
                survive *= 1.0 - accept[r]
                if survive == 0.0:
                    break
            # next permutation in lexicographic order
            k = n_out - 2
            while k >= 0 and perm[k] >= perm[k + 1]:
                k -= 1
            if k < 0:
                break
            l = n_out - 1
            while perm[l] <= perm[k]:
                l -= 1
            tmp = perm[k]
            perm[k] = perm[l]
            perm[l] = tmp
            a = k + 1
            b = n_out - 1
            while a < b:
                tmp = perm[a]
                perm[a] = perm[b]
                perm[b] = tmp
                a += 1
                b -= 1
    for r in range(n_out):
        probs[r] /= total
    return probs_arr

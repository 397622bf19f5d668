"""Exact selection probabilities, expected errors and error bounds.

The noisy-max probability of outcome ``r`` with common noise scale ``N`` is
the one-dimensional integral

    Pr[r] = int f(z) prod_{s != r} F((u_r - u_s) / N + z) dz

which is evaluated here with adaptive Gauss-Kronrod quadrature. Outcomes
with equal utility share an integrand, so only one integral per distinct
utility value is computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, stats

from dpselect import kernels
from dpselect.noise import CalibratedNoise, NoiseKind

QUAD_TOL = 1e-6
PF_ENUMERATION_LIMIT = 8


class QuadratureError(RuntimeError):
    """The selection-probability integral failed to converge."""


@dataclass(frozen=True)
class SelectionPMF:
    probabilities: np.ndarray
    method: str  # "quadrature", "closed_form", "enumeration" or "monte_carlo"
    tolerance: float
    residual: float = 0.0

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    def __len__(self) -> int:
        return self.probabilities.size

    def __getitem__(self, i):
        return self.probabilities[i]

    def to_dict(self, outcomes: Optional[Sequence] = None) -> dict:
        keys = range(len(self)) if outcomes is None else outcomes
        return {
            "probabilities": {str(k): float(v) for k, v in zip(keys, self.probabilities)},
            "method": self.method,
            "tolerance": self.tolerance,
            "residual": self.residual,
        }


def _scores(utilities) -> np.ndarray:
    u = np.asarray(utilities, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("utilities must be a non-empty 1-d sequence")
    return u


def argmax_pmf(utilities) -> SelectionPMF:
    """Point mass on the lowest-index maximiser (the zero-noise limit)."""
    u = _scores(utilities)
    p = np.zeros(u.size)
    p[int(np.argmax(u))] = 1.0
    return SelectionPMF(p, "closed_form", 0.0)


# noisy max ----------------------------------------------------------------


def _group_integrand(noise: CalibratedNoise, gaps: np.ndarray, expo: np.ndarray):
    def f(z):
        c = noise.cdf(gaps + z)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(expo > 0, expo * np.log(c), 0.0)
        return noise.pdf(z) * np.exp(terms.sum(axis=1))

    return f


def _breakpoints(noise: CalibratedNoise, gaps: np.ndarray, lo: float, hi: float) -> list[float]:
    # Log-spaced anchors stop the adaptive rule from judging a huge first
    # interval by a handful of nodes and missing narrow features.
    pts = {0.0}
    for k in range(0, 6):
        pts.update((10.0**k, -(10.0**k)))
    pts.update((-gaps).ravel().tolist())
    return sorted(p for p in pts if lo < p < hi)


def noisy_max_pmf(
    utilities,
    noise: CalibratedNoise,
    scale: float,
    tol: float = QUAD_TOL,
) -> SelectionPMF:
    """Selection probabilities of ``argmax(u + scale * Z)`` by quadrature."""
    u = _scores(utilities)
    if not scale > 0:
        raise ValueError("noise scale must be positive")
    if u.size == 1:
        return SelectionPMF(np.ones(1), "quadrature", tol)
    values, inverse, counts = np.unique(u, return_inverse=True, return_counts=True)
    if values.size == 1:
        return SelectionPMF(np.full(u.size, 1.0 / u.size), "quadrature", tol)
    gaps = (values[:, None] - values[None, :]) / scale
    expo = counts[None, :] - np.eye(values.size)

    lo, hi = noise.truncation()
    for attempt in range(2):
        f = _group_integrand(noise, gaps, expo)
        pts = _breakpoints(noise, gaps, lo, hi)
        res, err = integrate.quad_vec(
            f, lo, hi, epsabs=1e-12, epsrel=1e-12, points=pts or None, limit=20000
        )
        per_group = np.clip(res, 0.0, None)
        total = float(np.dot(per_group, counts))
        residual = abs(total - 1.0)
        if residual <= tol:
            probs = per_group[inverse] / total
            return SelectionPMF(probs, "quadrature", tol, residual)
        lo, hi = 10.0 * lo, 10.0 * hi
    raise QuadratureError(
        f"selection integral did not normalise: total mass {total:.12g}, residual {residual:.3g}"
    )


# exponential mechanism and permute-and-flip --------------------------------


def em_pmf(utilities, epsilon: float, delta_u: float = 1.0) -> SelectionPMF:
    u = _scores(utilities)
    if not delta_u > 0:
        raise ValueError("sensitivity must be positive")
    w = np.exp(epsilon * (u - u.max()) / (2.0 * delta_u))
    return SelectionPMF(w / w.sum(), "closed_form", 1e-12)


def pf_accept_probabilities(utilities, epsilon: float, delta_u: float = 1.0) -> np.ndarray:
    u = _scores(utilities)
    if not delta_u > 0:
        raise ValueError("sensitivity must be positive")
    return np.exp(epsilon * (u - u.max()) / (2.0 * delta_u))


def pf_pmf_enumeration(utilities, epsilon: float, delta_u: float = 1.0) -> SelectionPMF:
    """Walk every permutation; exact but factorial in the number of outcomes."""
    p = pf_accept_probabilities(utilities, epsilon, delta_u)
    if p.size > 10:
        raise ValueError("permutation enumeration is limited to 10 outcomes")
    return SelectionPMF(kernels.pf_enumerate(p), "enumeration", 1e-12)


def pf_pmf_closed_form(utilities, epsilon: float, delta_u: float = 1.0) -> SelectionPMF:
    """Permute-and-flip probabilities in O(|R|^2).

    With independent acceptance coins, outcome ``r`` wins exactly when its
    coin accepts and it precedes every other accepting outcome in the random
    order. Given ``K`` other acceptances that happens with probability
    ``1/(K+1)``, so ``Pr[r] = p_r E[1/(1 + K_r)]`` where ``K_r`` is the
    Poisson-binomial count over the remaining outcomes.
    """
    p = pf_accept_probabilities(utilities, epsilon, delta_u)
    values, inverse, counts = np.unique(p, return_inverse=True, return_counts=True)
    group_binoms = [stats.binom.pmf(np.arange(c + 1), c, v) for v, c in zip(values, counts)]
    out = np.empty(values.size)
    for g, (v, c) in enumerate(zip(values, counts)):
        dist = np.ones(1)
        for h, binom in enumerate(group_binoms):
            part = stats.binom.pmf(np.arange(c), c - 1, v) if h == g else binom
            dist = np.convolve(dist, part)
        out[g] = v * np.dot(dist, 1.0 / np.arange(1, dist.size + 1))
    probs = out[inverse]
    total = probs.sum()
    return SelectionPMF(probs / total, "closed_form", 1e-10, abs(total - 1.0))


def pf_pmf(utilities, epsilon: float, delta_u: float = 1.0) -> SelectionPMF:
    """Exact permute-and-flip PMF: enumeration up to 8 outcomes, closed form above."""
    u = _scores(utilities)
    if u.size <= PF_ENUMERATION_LIMIT:
        return pf_pmf_enumeration(u, epsilon, delta_u)
    return pf_pmf_closed_form(u, epsilon, delta_u)


def monte_carlo_pmf(mechanism, utilities, trials: int, rng=None, smooth=None) -> SelectionPMF:
    counts = mechanism.sample_counts(utilities, trials, rng, smooth)
    return SelectionPMF(counts / float(trials), "monte_carlo", 3.0 / math.sqrt(trials))


# errors and bounds --------------------------------------------------------


def expected_error(pmf, utilities) -> float:
    """``sum_r Pr[r] (u* - u_r)``."""
    u = _scores(utilities)
    p = np.asarray(getattr(pmf, "probabilities", pmf), dtype=float)
    if p.shape != u.shape:
        raise ValueError("pmf and utilities must index the same outcomes")
    return float(np.dot(p, u.max() - u))


def absolute_expected_value_error(pmf, outcome_values, target_value: float) -> float:
    """``|target - E[released value]|``."""
    v = np.asarray(outcome_values, dtype=float)
    p = np.asarray(getattr(pmf, "probabilities", pmf), dtype=float)
    if p.shape != v.shape:
        raise ValueError("pmf and outcome values must index the same outcomes")
    return float(abs(target_value - np.dot(p, v)))


def snm_error_bound(smooth_sensitivity: float, epsilon: float, r_count: int) -> float:
    """Expected-error bound for Laplace smooth noisy max: ``4 S (ln|R| + 1) / eps``."""
    _check_bound_args(epsilon, r_count)
    return 4.0 * smooth_sensitivity * (math.log(r_count) + 1.0) / epsilon


def rnm_error_bound(delta_u: float, epsilon: float, r_count: int) -> float:
    """Expected-error bound for exponential-noise report-noisy-max: ``2 du (ln|R| + 1) / eps``."""
    _check_bound_args(epsilon, r_count)
    return 2.0 * delta_u * (math.log(r_count) + 1.0) / epsilon


def _check_bound_args(epsilon, r_count):
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if r_count < 1:
        raise ValueError("need at least one outcome")


@dataclass(frozen=True)
class ChebyshevComparison:
    preferred: str  # "a", "b" or "tie"
    variance_a: float
    variance_b: float


def chebyshev_preference(noise_a: CalibratedNoise, noise_b: CalibratedNoise, rtol: float = 1e-12):
    """Prefer the distribution with the smaller variance, hence the tighter Chebyshev tail."""
    for n in (noise_a, noise_b):
        if n.kind is NoiseKind.STUDENT_T and n.dof <= 2:
            raise ValueError("Student's t needs more than 2 degrees of freedom for a finite variance")
    va, vb = noise_a.variance(), noise_b.variance()
    if math.isclose(va, vb, rel_tol=rtol):
        pref = "tie"
    else:
        pref = "a" if va < vb else "b"
    return ChebyshevComparison(pref, va, vb)

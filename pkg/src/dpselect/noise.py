"""Noise distributions and their privacy calibration.

Every distribution is kept in standard (unit-scale) shape. Mechanisms apply
their own scale factor, so one ``CalibratedNoise`` can be shared freely
between threads and reused across databases.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from dpselect import kernels

__all__ = [
    "NoiseKind",
    "PrivacyBudget",
    "CalibratedNoise",
    "CalibrationError",
    "AdmissibilityViolation",
    "calibrate_laplace",
    "calibrate_student_t",
    "calibrate_lln",
    "baseline_noise",
    "sample",
    "pdf",
    "cdf",
    "sliding_violations",
    "dilation_violations",
]


class CalibrationError(ValueError):
    """Raised when a privacy budget cannot be mapped to valid noise parameters."""


class NoiseKind(str, enum.Enum):
    LAPLACE = "laplace"
    STUDENT_T = "student_t"
    LLN = "lln"
    GUMBEL = "gumbel"
    EXPONENTIAL = "exponential"

    @property
    def kernel_code(self) -> int:
        return _KERNEL_CODES[self]

    @property
    def smooth_compatible(self) -> bool:
        """True for the kinds usable with smooth-sensitivity scaling."""
        return self in (NoiseKind.LAPLACE, NoiseKind.STUDENT_T, NoiseKind.LLN)


_KERNEL_CODES = {
    NoiseKind.LAPLACE: kernels.LAPLACE,
    NoiseKind.STUDENT_T: kernels.STUDENT_T,
    NoiseKind.LLN: kernels.LLN,
    NoiseKind.GUMBEL: kernels.GUMBEL,
    NoiseKind.EXPONENTIAL: kernels.EXPONENTIAL,
}

# 64-point Gauss-Hermite rule for the log-normal mixing variable.
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(64)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class CalibratedNoise:
    """A noise distribution in standard shape plus its admissibility constants.

    ``alpha`` and ``beta`` are the sliding radius and dilation exponent used
    by smooth-sensitivity mechanisms. ``scale`` is only meaningful for the
    baseline (global-sensitivity) mechanisms.
    """

    kind: NoiseKind
    alpha: Optional[float] = None
    beta: Optional[float] = None
    scale: float = 1.0
    dof: Optional[float] = None
    sigma: Optional[float] = None
    budget: Optional[PrivacyBudget] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.kind is NoiseKind.STUDENT_T:
            if self.dof is None or self.dof <= 0:
                raise ValueError("Student's t noise needs positive degrees of freedom")
        if self.kind is NoiseKind.LLN:
            if self.sigma is None or self.sigma < 0:
                raise ValueError("LLN noise needs a non-negative sigma")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    # evaluation -----------------------------------------------------------

    def sample(self, rng: np.random.Generator, size=None):
        """Draw from the standard shape."""
        kind = self.kind
        if kind is NoiseKind.LAPLACE:
            return rng.laplace(0.0, 1.0, size)
        if kind is NoiseKind.STUDENT_T:
            return rng.standard_t(self.dof, size)
        if kind is NoiseKind.GUMBEL:
            return rng.gumbel(0.0, 1.0, size)
        if kind is NoiseKind.EXPONENTIAL:
            return rng.standard_exponential(size)
        lap = rng.laplace(0.0, 1.0, size)
        nrm = rng.standard_normal(size)
        return lap * np.exp(self.sigma * nrm)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        kind = self.kind
        if kind is NoiseKind.LAPLACE:
            return 0.5 * np.exp(-np.abs(z))
        if kind is NoiseKind.STUDENT_T:
            d = self.dof
            log_norm = special.gammaln((d + 1) / 2) - special.gammaln(d / 2) - 0.5 * math.log(d * math.pi)
            return np.exp(log_norm - 0.5 * (d + 1) * np.log1p(z * z / d))
        if kind is NoiseKind.GUMBEL:
            with np.errstate(over="ignore"):
                return np.exp(-(z + np.exp(-z)))
        if kind is NoiseKind.EXPONENTIAL:
            return np.where(z >= 0, np.exp(-np.maximum(z, 0.0)), 0.0)
        scales = self._lln_scales()
        zz = np.abs(z)[..., None] / scales
        return (0.5 * np.exp(-zz) / scales) @ _GH_WEIGHTS

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        kind = self.kind
        if kind is NoiseKind.LAPLACE:
            return _laplace_cdf(z)
        if kind is NoiseKind.STUDENT_T:
            return special.stdtr(self.dof, z)
        if kind is NoiseKind.GUMBEL:
            with np.errstate(over="ignore"):
                return np.exp(-np.exp(-z))
        if kind is NoiseKind.EXPONENTIAL:
            return np.where(z > 0, -np.expm1(-np.maximum(z, 0.0)), 0.0)
        return _laplace_cdf(z[..., None] / self._lln_scales()) @ _GH_WEIGHTS

    def sf(self, z):
        """Survival function, accurate in the right tail."""
        z = np.asarray(z, dtype=float)
        kind = self.kind
        if kind is NoiseKind.GUMBEL:
            with np.errstate(over="ignore"):
                return -np.expm1(-np.exp(-z))
        if kind is NoiseKind.EXPONENTIAL:
            return np.where(z > 0, np.exp(-np.maximum(z, 0.0)), 1.0)
        if kind is NoiseKind.STUDENT_T:
            return special.stdtr(self.dof, -z)
        return self.cdf(-z)

    def variance(self) -> float:
        """Variance of ``scale * Z``."""
        kind = self.kind
        if kind is NoiseKind.LAPLACE:
            base = 2.0
        elif kind is NoiseKind.STUDENT_T:
            if self.dof <= 2:
                raise ValueError("Student's t variance is infinite for dof <= 2")
            base = self.dof / (self.dof - 2.0)
        elif kind is NoiseKind.LLN:
            base = 2.0 * math.exp(2.0 * self.sigma**2)
        elif kind is NoiseKind.GUMBEL:
            base = math.pi**2 / 6.0
        else:
            base = 1.0
        return base * self.scale**2

    def truncation(self) -> tuple[float, float]:
        """Window used for numeric integration of this distribution."""
        if self.kind in (NoiseKind.STUDENT_T, NoiseKind.LLN):
            return (-1e4, 1e4)
        return (-50.0, 50.0)

    def _lln_scales(self) -> np.ndarray:
        return np.exp(self.sigma * math.sqrt(2.0) * _GH_NODES)


def _laplace_cdf(z):
    neg = 0.5 * np.exp(np.minimum(z, 0.0))
    pos = 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0))
    return np.where(z < 0, neg, pos)


# calibration ---------------------------------------------------------------


def calibrate_laplace(budget: PrivacyBudget) -> CalibratedNoise:
    """Laplace noise for approximate DP; needs ``delta > 0``."""
    if budget.delta <= 0:
        raise CalibrationError("Laplace smooth-sensitivity noise needs delta > 0")
    eps = budget.epsilon
    return CalibratedNoise(
        NoiseKind.LAPLACE,
        alpha=eps / 2.0,
        beta=eps / (2.0 * math.log(2.0 / budget.delta)),
        budget=budget,
    )


def calibrate_student_t(
    budget: PrivacyBudget,
    dof: int = 3,
    *,
    alpha: Optional[float] = None,
    beta: Optional[float] = None,
) -> CalibratedNoise:
    """Student's t noise for pure DP.

    By default ``alpha = eps*sqrt(d)/(d+1)`` and ``beta = eps/(2(d+1))``. The
    log-density of t(d) has slope at most ``(d+1)/(2 sqrt d)``, so the default
    alpha keeps the sliding loss at ``eps/2``, and dilation by ``e^beta``
    costs at most ``d*beta < eps/2``. Either constant may be overridden. The
    spot-checks in this module will flag an override that breaks the bounds.
    """
    if int(dof) != dof or dof < 3:
        raise CalibrationError(f"degrees of freedom must be an integer >= 3, got {dof}")
    d = int(dof)
    eps = budget.epsilon
    a = eps * math.sqrt(d) / (d + 1.0) if alpha is None else float(alpha)
    b = eps / (2.0 * (d + 1.0)) if beta is None else float(beta)
    if a <= 0 or b < 0:
        raise CalibrationError("alpha must be positive and beta non-negative")
    return CalibratedNoise(
        NoiseKind.STUDENT_T,
        alpha=a,
        beta=b,
        dof=float(d),
        budget=PrivacyBudget(eps, 0.0),
    )


def calibrate_lln(
    budget: PrivacyBudget,
    sigma: float = 1.0,
    *,
    beta: Optional[float] = None,
) -> CalibratedNoise:
    """Laplace log-normal noise; ``beta`` defaults to ``sigma*eps/2``."""
    if budget.delta <= 0:
        raise CalibrationError("LLN smooth-sensitivity noise needs delta > 0")
    if not sigma > 0:
        raise CalibrationError(f"sigma must be positive, got {sigma}")
    eps = budget.epsilon
    b = sigma * eps / 2.0 if beta is None else float(beta)
    if b < 0:
        raise CalibrationError("beta must be non-negative")
    if b >= sigma * eps:
        raise CalibrationError(
            f"beta={b} must stay below sigma*epsilon={sigma * eps}; alpha would be non-positive"
        )
    a = math.exp(-1.5 * sigma**2) * (eps - b / sigma)
    return CalibratedNoise(NoiseKind.LLN, alpha=a, beta=b, sigma=float(sigma), budget=budget)


def baseline_noise(kind, budget: PrivacyBudget, sensitivity: float = 1.0) -> CalibratedNoise:
    """Noise for report-noisy-max at scale ``2*sensitivity/epsilon``."""
    kind = NoiseKind(kind)
    if kind not in (NoiseKind.LAPLACE, NoiseKind.GUMBEL, NoiseKind.EXPONENTIAL):
        raise ValueError(f"{kind.value} is not a report-noisy-max noise kind")
    if sensitivity <= 0:
        raise ValueError("sensitivity must be positive")
    return CalibratedNoise(kind, scale=2.0 * sensitivity / budget.epsilon, budget=budget)


def sample(noise: CalibratedNoise, rng: np.random.Generator, size=None):
    return noise.sample(rng, size)


def pdf(noise: CalibratedNoise, z):
    return noise.pdf(z)


def cdf(noise: CalibratedNoise, z):
    return noise.cdf(z)


# admissibility spot-checks -------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityViolation:
    condition: str  # "sliding" or "dilation"
    parameter: float  # shift or log-dilation
    interval: tuple[float, float]
    mass: float
    moved_mass: float
    allowed: float


def _interval_mass(noise: CalibratedNoise, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # Take differences in whichever tail keeps precision.
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    right = lo >= 0
    left_mass = noise.cdf(hi) - noise.cdf(lo)
    right_mass = noise.sf(lo) - noise.sf(hi)
    return np.maximum(np.where(right, right_mass, left_mass), 0.0)


def _default_intervals(noise: CalibratedNoise) -> np.ndarray:
    reach = 12.0 if noise.kind is NoiseKind.LAPLACE else 25.0
    starts = np.linspace(-reach, reach, 97)
    widths = np.array([0.01, 0.1, 0.5, 2.0, 10.0, np.inf])
    lo = np.repeat(starts, widths.size)
    hi = lo + np.tile(widths, starts.size)
    tails = np.column_stack([np.full(starts.size, -np.inf), starts])
    return np.vstack([np.column_stack([lo, hi]), tails])


def _budget_terms(noise: CalibratedNoise) -> tuple[float, float]:
    if noise.budget is None:
        raise ValueError("spot-checks need a calibrated noise with an attached budget")
    return math.exp(noise.budget.epsilon / 2.0), noise.budget.delta / 2.0


def sliding_violations(
    noise: CalibratedNoise,
    shifts=None,
    intervals=None,
    rtol: float = 1e-9,
) -> list[AdmissibilityViolation]:
    """Check ``Pr[Z in S] <= e^(eps/2) Pr[Z in S + shift] + delta/2`` on a grid.

    Shifts default to 10 evenly spaced values in ``[-alpha, alpha]``.
    """
    factor, slack = _budget_terms(noise)
    if shifts is None:
        shifts = np.linspace(-noise.alpha, noise.alpha, 10)
    ivals = _default_intervals(noise) if intervals is None else np.asarray(intervals, float)
    lo, hi = ivals[:, 0], ivals[:, 1]
    base = _interval_mass(noise, lo, hi)
    out = []
    for shift in np.atleast_1d(shifts):
        moved = _interval_mass(noise, lo + shift, hi + shift)
        allowed = factor * moved + slack
        bad = base > allowed * (1.0 + rtol) + 1e-15
        for i in np.flatnonzero(bad):
            out.append(
                AdmissibilityViolation(
                    "sliding", float(shift), (float(lo[i]), float(hi[i])),
                    float(base[i]), float(moved[i]), float(allowed[i]),
                )
            )
    return out


def dilation_violations(
    noise: CalibratedNoise,
    log_factors=None,
    intervals=None,
    rtol: float = 1e-9,
) -> list[AdmissibilityViolation]:
    """Check ``Pr[Z in S] <= e^(eps/2) Pr[Z in e^lam S] + delta/2`` on a grid."""
    factor, slack = _budget_terms(noise)
    if log_factors is None:
        log_factors = np.linspace(-noise.beta, noise.beta, 10)
    ivals = _default_intervals(noise) if intervals is None else np.asarray(intervals, float)
    lo, hi = ivals[:, 0], ivals[:, 1]
    base = _interval_mass(noise, lo, hi)
    out = []
    for lam in np.atleast_1d(log_factors):
        stretch = math.exp(lam)
        with np.errstate(invalid="ignore"):
            moved = _interval_mass(noise, lo * stretch, hi * stretch)
        allowed = factor * moved + slack
        bad = base > allowed * (1.0 + rtol) + 1e-15
        for i in np.flatnonzero(bad):
            out.append(
                AdmissibilityViolation(
                    "dilation", float(lam), (float(lo[i]), float(hi[i])),
                    float(base[i]), float(moved[i]), float(allowed[i]),
                )
            )
    return out

"""Private selection mechanisms.

Each mechanism works on a score vector and exposes three views of the same
distribution: ``select`` for a single draw, ``sample_counts`` for many draws
through the sampling kernels, and ``pmf`` for the exact probabilities from
:mod:`dpselect.analysis`. Function wrappers at the bottom take a
``UtilityModel`` and a database instead.

Ties are always broken towards the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from dpselect import analysis, kernels
from dpselect.noise import (
    CalibratedNoise,
    NoiseKind,
    PrivacyBudget,
    baseline_noise,
    calibrate_laplace,
    calibrate_lln,
    calibrate_student_t,
)
from dpselect.sensitivity import SmoothSensitivityValue, UtilityModel, as_database

MECHANISM_NAMES = ("EM", "PF", "RNM-Lap", "RNM-Exp", "RNM-Gum", "SNM-Lap", "SNM-T", "SNM-LLN")


class SensitivityMismatch(ValueError):
    """Smooth sensitivity was computed with a different beta than the noise."""


class UnsafeMechanismError(RuntimeError):
    """An unsafe mechanism was called without acknowledging that it is not private."""


@dataclass(frozen=True)
class SelectionOutcome:
    index: int
    chosen: Any = None
    debug_noisy_scores: Optional[tuple] = None


def _as_scores(scores) -> np.ndarray:
    u = np.asarray(scores, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("scores must be a non-empty 1-d sequence")
    return u


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _noisy_argmax(u, scale, noise: CalibratedNoise, rng, injected, debug) -> SelectionOutcome:
    z = np.asarray(injected, dtype=float) if injected is not None else noise.sample(rng, u.size)
    if z.shape != u.shape:
        raise ValueError("injected noise must match the number of outcomes")
    noisy = u + scale * z
    idx = int(np.argmax(noisy))
    dbg = tuple(float(v) for v in noisy) if debug else None
    return SelectionOutcome(idx, idx, dbg)


@dataclass(frozen=True)
class ExponentialMechanism:
    epsilon: float
    sensitivity: float = 1.0
    name: str = "EM"
    needs_smooth = False

    def weights(self, scores) -> np.ndarray:
        u = _as_scores(scores)
        if not self.sensitivity > 0:
            raise ValueError("sensitivity must be positive")
        logits = self.epsilon * (u - u.max()) / (2.0 * self.sensitivity)
        w = np.exp(logits)
        return w / w.sum()

    def select(self, scores, rng=None, smooth=None) -> SelectionOutcome:
        p = self.weights(scores)
        idx = int(_rng(rng).choice(p.size, p=p))
        return SelectionOutcome(idx, idx)

    def sample_counts(self, scores, trials: int, rng=None, smooth=None) -> np.ndarray:
        return _rng(rng).multinomial(int(trials), self.weights(scores)).astype(np.int64)

    def pmf(self, scores, smooth=None) -> analysis.SelectionPMF:
        return analysis.em_pmf(scores, self.epsilon, self.sensitivity)


@dataclass(frozen=True)
class PermuteAndFlip:
    epsilon: float
    sensitivity: float = 1.0
    name: str = "PF"
    needs_smooth = False

    def log_accept(self, scores) -> np.ndarray:
        u = _as_scores(scores)
        if not self.sensitivity > 0:
            raise ValueError("sensitivity must be positive")
        return self.epsilon * (u - u.max()) / (2.0 * self.sensitivity)

    def select(self, scores, rng=None, smooth=None) -> SelectionOutcome:
        rng = _rng(rng)
        log_p = self.log_accept(scores)
        while True:
            for r in rng.permutation(log_p.size):
                if log_p[r] == 0.0 or math.log(rng.random()) < log_p[r]:
                    return SelectionOutcome(int(r), int(r))

    def sample_counts(self, scores, trials: int, rng=None, smooth=None) -> np.ndarray:
        return kernels.pf_counts(np.exp(self.log_accept(scores)), int(trials), _rng(rng))

    def pmf(self, scores, smooth=None) -> analysis.SelectionPMF:
        return analysis.pf_pmf(scores, self.epsilon, self.sensitivity)


@dataclass(frozen=True)
class ReportNoisyMax:
    """Noisy max with global-sensitivity scale ``2 * sensitivity / epsilon``."""

    kind: NoiseKind
    epsilon: float
    sensitivity: float = 1.0
    name: str = "RNM"
    needs_smooth = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        baseline_noise(self.kind, PrivacyBudget(self.epsilon), self.sensitivity)

    @property
    def noise(self) -> CalibratedNoise:
        return baseline_noise(self.kind, PrivacyBudget(self.epsilon), self.sensitivity)

    def scale(self, smooth=None) -> float:
        return self.noise.scale

    def select(self, scores, rng=None, smooth=None, *, injected_noise=None, debug=False):
        u = _as_scores(scores)
        return _noisy_argmax(u, self.scale(), self.noise, _rng(rng), injected_noise, debug)

    def sample_counts(self, scores, trials: int, rng=None, smooth=None) -> np.ndarray:
        u = _as_scores(scores)
        return kernels.noisy_max_counts(u, self.scale(), self.kind.kernel_code, int(trials), _rng(rng))

    def pmf(self, scores, smooth=None) -> analysis.SelectionPMF:
        return analysis.noisy_max_pmf(scores, self.noise, self.scale())


@dataclass(frozen=True)
class SmoothNoisyMax:
    """Noisy max scaled by smooth sensitivity.

    Scores get ``(2 S / alpha) * Z`` added, or ``(S / alpha) * Z`` when the
    utility is monotonic. ``S`` must be computed with the noise's ``beta``.
    """

    noise: CalibratedNoise
    monotonic: bool = False
    name: str = "SNM"
    needs_smooth = True

    def __post_init__(self) -> None:
        if not self.noise.kind.smooth_compatible:
            raise ValueError(f"{self.noise.kind.value} noise is not admissible for smooth noisy max")
        if self.noise.alpha is None or self.noise.beta is None:
            raise ValueError("smooth noisy max needs calibrated alpha and beta")

    @property
    def beta(self) -> float:
        return self.noise.beta

    def scale(self, smooth: SmoothSensitivityValue) -> float:
        if smooth is None:
            raise ValueError("smooth noisy max needs a smooth sensitivity value")
        if not math.isclose(smooth.beta, self.noise.beta, rel_tol=1e-12, abs_tol=1e-15):
            raise SensitivityMismatch(
                f"smooth sensitivity used beta={smooth.beta}, noise is calibrated for beta={self.noise.beta}"
            )
        factor = 1.0 if self.monotonic else 2.0
        return factor * smooth.value / self.noise.alpha

    def select(self, scores, rng=None, smooth=None, *, injected_noise=None, debug=False):
        u = _as_scores(scores)
        return _noisy_argmax(u, self.scale(smooth), self.noise, _rng(rng), injected_noise, debug)

    def sample_counts(self, scores, trials: int, rng=None, smooth=None) -> np.ndarray:
        u = _as_scores(scores)
        n = self.noise
        return kernels.noisy_max_counts(
            u, self.scale(smooth), n.kind.kernel_code, int(trials), _rng(rng),
            dof=n.dof or 3.0, sigma=n.sigma or 0.0,
        )

    def pmf(self, scores, smooth=None) -> analysis.SelectionPMF:
        scale = self.scale(smooth)
        if scale == 0.0:
            return analysis.argmax_pmf(scores)
        return analysis.noisy_max_pmf(scores, self.noise, scale)


@dataclass(frozen=True)
class UnsafeSmoothExponentialMechanism:
    """Exponential weights ``exp(eps u / (2 S))`` with smooth sensitivity ``S``.

    This is NOT differentially private. It exists so the counterexample can be
    reproduced and so the audit has a known-bad mechanism to catch.
    """

    epsilon: float
    acknowledge_unsafe: bool = False
    name: str = "EM-smooth-UNSAFE"
    needs_smooth = True
    beta: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.acknowledge_unsafe:
            raise UnsafeMechanismError(
                "exponential weights scaled by smooth sensitivity are not private; "
                "pass acknowledge_unsafe=True to use them anyway"
            )

    def _inner(self, smooth: SmoothSensitivityValue) -> ExponentialMechanism:
        if smooth is None or not smooth.value > 0:
            raise ValueError("needs a positive smooth sensitivity value")
        return ExponentialMechanism(self.epsilon, smooth.value)

    def select(self, scores, rng=None, smooth=None) -> SelectionOutcome:
        return self._inner(smooth).select(scores, rng)

    def sample_counts(self, scores, trials: int, rng=None, smooth=None) -> np.ndarray:
        return self._inner(smooth).sample_counts(scores, trials, rng)

    def pmf(self, scores, smooth=None) -> analysis.SelectionPMF:
        return self._inner(smooth).pmf(scores)


def make_mechanism(
    name: str,
    budget: PrivacyBudget,
    *,
    sensitivity: float = 1.0,
    dof: int = 3,
    sigma: float = 1.0,
    monotonic: bool = False,
):
    """Build a mechanism from its short name (see ``MECHANISM_NAMES``)."""
    eps = budget.epsilon
    if name == "EM":
        return ExponentialMechanism(eps, sensitivity)
    if name == "PF":
        return PermuteAndFlip(eps, sensitivity)
    if name == "RNM-Lap":
        return ReportNoisyMax(NoiseKind.LAPLACE, eps, sensitivity, name=name)
    if name == "RNM-Exp":
        return ReportNoisyMax(NoiseKind.EXPONENTIAL, eps, sensitivity, name=name)
    if name == "RNM-Gum":
        return ReportNoisyMax(NoiseKind.GUMBEL, eps, sensitivity, name=name)
    if name == "SNM-Lap":
        return SmoothNoisyMax(calibrate_laplace(budget), monotonic, name=name)
    if name == "SNM-T":
        return SmoothNoisyMax(calibrate_student_t(budget, dof), monotonic, name=name)
    if name == "SNM-LLN":
        return SmoothNoisyMax(calibrate_lln(budget, sigma), monotonic, name=name)
    raise ValueError(f"unknown mechanism {name!r}; expected one of {', '.join(MECHANISM_NAMES)}")


# utility-model wrappers ---------------------------------------------------


def _labelled(outcome: SelectionOutcome, u: UtilityModel) -> SelectionOutcome:
    return SelectionOutcome(outcome.index, u.outcomes[outcome.index], outcome.debug_noisy_scores)


def snm_select(
    u: UtilityModel,
    x,
    noise: CalibratedNoise,
    smooth: SmoothSensitivityValue,
    rng=None,
    *,
    injected_noise=None,
    debug: bool = False,
) -> SelectionOutcome:
    mech = SmoothNoisyMax(noise, u.monotonic)
    out = mech.select(u.scores(x), rng, smooth, injected_noise=injected_noise, debug=debug)
    return _labelled(out, u)


def exponential_mechanism(u: UtilityModel, x, budget: PrivacyBudget, rng=None) -> SelectionOutcome:
    mech = ExponentialMechanism(budget.epsilon, u.global_sensitivity)
    return _labelled(mech.select(u.scores(x), rng), u)


def permute_and_flip(u: UtilityModel, x, budget: PrivacyBudget, rng=None) -> SelectionOutcome:
    mech = PermuteAndFlip(budget.epsilon, u.global_sensitivity)
    return _labelled(mech.select(u.scores(x), rng), u)


def report_noisy_max(
    u: UtilityModel,
    x,
    budget: PrivacyBudget,
    noise_kind,
    rng=None,
    *,
    injected_noise=None,
    debug: bool = False,
) -> SelectionOutcome:
    mech = ReportNoisyMax(NoiseKind(noise_kind), budget.epsilon, u.global_sensitivity)
    out = mech.select(u.scores(x), rng, injected_noise=injected_noise, debug=debug)
    return _labelled(out, u)


def em_with_smooth_sensitivity_unsafe(
    u: UtilityModel,
    x,
    budget: PrivacyBudget,
    smooth: SmoothSensitivityValue,
    rng=None,
    *,
    acknowledge_unsafe: bool = False,
) -> SelectionOutcome:
    mech = UnsafeSmoothExponentialMechanism(budget.epsilon, acknowledge_unsafe)
    return _labelled(mech.select(u.scores(x), rng, smooth), u)

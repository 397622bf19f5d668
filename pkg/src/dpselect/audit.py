"""Empirical privacy audit.

Runs a mechanism many times on two neighbouring databases and compares
output frequencies against the ``(epsilon, delta)`` envelope. An outcome is
flagged when the lower Wilson bound on one side exceeds ``e^epsilon`` times
the upper Wilson bound on the other side plus ``delta``. A flag is strong
evidence of a privacy violation. No flag proves nothing.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from dpselect.mechanisms import MECHANISM_NAMES, UnsafeSmoothExponentialMechanism, make_mechanism
from dpselect.noise import PrivacyBudget
from dpselect.percentile import percentile_utility_model
from dpselect.sensitivity import (
    UtilityModel,
    as_database,
    distance,
    enumerate_databases,
    neighbors,
    smooth_sensitivity,
)
from dpselect.trees import VOTING_Y, VOTING_X, leaf_count_model

UNSAFE_NAME = "EM-smooth-UNSAFE"
AUDITED_MECHANISMS = tuple(MECHANISM_NAMES)
DEFAULT_TRIALS = 10**6
DEFAULT_CONFIDENCE = 0.99


class AuditInputError(ValueError):
    """The two databases are not neighbours, or the trial count is too small."""


def wilson_interval(successes, trials: int, confidence: float = DEFAULT_CONFIDENCE) -> tuple[np.ndarray, np.ndarray]:
    counts = np.atleast_1d(np.asarray(successes, dtype=np.int64))
    lo = np.empty(counts.size)
    hi = np.empty(counts.size)
    for i, k in enumerate(counts):
        ci = stats.binomtest(int(k), int(trials)).proportion_ci(confidence, method="wilson")
        lo[i], hi[i] = ci.low, ci.high
    return lo, hi


@dataclass
class AuditFlag:
    outcome: str
    direction: str  # "x>y" or "y>x"
    lower: float
    envelope: float


@dataclass
class AuditReport:
    mechanism: str
    epsilon: float
    delta: float
    x: tuple
    y: tuple
    trials: int
    confidence: float
    outcomes: list
    frequencies_x: list
    frequencies_y: list
    intervals_x: list
    intervals_y: list
    flags: list = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["x"] = list(self.x)
        out["y"] = list(self.y)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=str)


def build_audited_mechanism(name: str, budget: PrivacyBudget, model: UtilityModel, *, dof: int = 3, sigma: float = 1.0):
    """Mechanism by short name; the unsafe one uses ``beta = epsilon`` for its smooth sensitivity."""
    if name == UNSAFE_NAME:
        return UnsafeSmoothExponentialMechanism(budget.epsilon, acknowledge_unsafe=True, beta=budget.epsilon)
    return make_mechanism(
        name, budget, sensitivity=model.global_sensitivity, dof=dof, sigma=sigma, monotonic=model.monotonic
    )


def _smooth_for(mech, model: UtilityModel, db, universe):
    if not getattr(mech, "needs_smooth", False):
        return None
    return smooth_sensitivity(model, db, mech.beta, universe)


def _counts(mech, model, db, universe, trials, seed_seq) -> np.ndarray:
    smooth = _smooth_for(mech, model, db, universe)
    return mech.sample_counts(model.scores(db), trials, np.random.default_rng(seed_seq), smooth)


def compare_counts(
    name: str,
    budget: PrivacyBudget,
    model: UtilityModel,
    x,
    y,
    counts_x: np.ndarray,
    counts_y: np.ndarray,
    trials: int,
    confidence: float = DEFAULT_CONFIDENCE,
) -> AuditReport:
    """Turn two count vectors into a report with Wilson intervals and flags."""
    lo_x, hi_x = wilson_interval(counts_x, trials, confidence)
    lo_y, hi_y = wilson_interval(counts_y, trials, confidence)
    scale = math.exp(budget.epsilon)
    flags = []
    for r, outcome in enumerate(model.outcomes):
        for direction, lo, hi in (("x>y", lo_x[r], hi_y[r]), ("y>x", lo_y[r], hi_x[r])):
            envelope = scale * hi + budget.delta
            if lo > envelope:
                flags.append(AuditFlag(str(outcome), direction, float(lo), float(envelope)))
    return AuditReport(
        mechanism=name,
        epsilon=budget.epsilon,
        delta=budget.delta,
        x=tuple(x),
        y=tuple(y),
        trials=int(trials),
        confidence=confidence,
        outcomes=[str(o) for o in model.outcomes],
        frequencies_x=(counts_x / trials).tolist(),
        frequencies_y=(counts_y / trials).tolist(),
        intervals_x=list(zip(lo_x.tolist(), hi_x.tolist())),
        intervals_y=list(zip(lo_y.tolist(), hi_y.tolist())),
        flags=[asdict(f) for f in flags],
    )


def dp_audit(
    mechanism: str,
    model: UtilityModel,
    x,
    y,
    budget: PrivacyBudget,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    universe: Optional[Sequence] = None,
    confidence: float = DEFAULT_CONFIDENCE,
    dof: int = 3,
    sigma: float = 1.0,
) -> AuditReport:
    """Audit one mechanism on one neighbouring pair."""
    x, y = as_database(x), as_database(y)
    if distance(x, y) != 1:
        raise AuditInputError(f"databases must be neighbours; their distance is {distance(x, y)}")
    if trials < 10**5:
        raise AuditInputError("an audit needs at least 1e5 trials")
    universe = model.outcomes if universe is None else universe
    start = time.perf_counter()
    mech = build_audited_mechanism(mechanism, budget, model, dof=dof, sigma=sigma)
    ss_x, ss_y = np.random.SeedSequence(seed).spawn(2)
    cx = _counts(mech, model, x, universe, trials, ss_x)
    cy = _counts(mech, model, y, universe, trials, ss_y)
    report = compare_counts(mechanism, budget, model, x, y, cx, cy, trials, confidence)
    report.runtime_s = time.perf_counter() - start
    return report


# suite --------------------------------------------------------------------


@dataclass(frozen=True)
class AuditCase:
    label: str
    model: UtilityModel
    universe: tuple
    pairs: tuple


def neighbor_pairs(universe: Sequence, max_size: int, count: int, seed: int = 0) -> list[tuple]:
    """``count`` distinct neighbouring pairs with both sides of at most ``max_size`` records."""
    pairs = set()
    for x in enumerate_databases(universe, max_size - 1):
        for y in neighbors(x, universe):
            pairs.add((x, y) if len(x) <= len(y) else (y, x))
    ordered = sorted(pairs, key=lambda p: (len(p[0]), p))
    idx = np.random.default_rng(seed).choice(len(ordered), size=min(count, len(ordered)), replace=False)
    return [ordered[i] for i in sorted(idx)]


def default_cases(pairs_per_model: int = 18, seed: int = 0) -> list[AuditCase]:
    """Percentile (p=50, p=25) on four values and leaf voting on three labels."""
    values = (1.0, 2.0, 3.0, 4.0)
    cases = []
    for i, (label, model, universe) in enumerate(
        (
            ("percentile-p50", percentile_utility_model(values, 50), values),
            ("percentile-p25", percentile_utility_model(values, 25), values),
            ("leaf-3", leaf_count_model(3), (0, 1, 2)),
        )
    ):
        pairs = neighbor_pairs(universe, 6, pairs_per_model, seed + i)
        cases.append(AuditCase(label, model, universe, tuple(pairs)))
    return cases


def voting_case() -> AuditCase:
    x = as_database(np.repeat(np.arange(5), VOTING_X).tolist())
    y = as_database(np.repeat(np.arange(5), VOTING_Y).tolist())
    return AuditCase("voting", leaf_count_model(5), (0, 1, 2, 3, 4), ((x, y),))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DP_SELECT_THREADS", "1")))
    except ValueError:
        return 1


def run_audit_suite(
    mechanisms: Sequence[str] = AUDITED_MECHANISMS,
    epsilons: Sequence[float] = (0.5, 1.0, 2.0),
    cases: Optional[Sequence[AuditCase]] = None,
    *,
    delta: float = 0.01,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    confidence: float = DEFAULT_CONFIDENCE,
    dof: int = 3,
    sigma: float = 1.0,
) -> list[AuditReport]:
    """Audit every mechanism at every epsilon on every pair of every case.

    Each database is sampled once per (mechanism, epsilon) and shared by all
    pairs it appears in. Every sample has its own seed stream, so results do
    not depend on ``DP_SELECT_THREADS``.
    """
    cases = default_cases(seed=seed) if cases is None else list(cases)
    jobs = []
    for ci, case in enumerate(cases):
        dbs = sorted({db for pair in case.pairs for db in pair}, key=lambda d: (len(d), d))
        for mi, name in enumerate(mechanisms):
            for ei, eps in enumerate(epsilons):
                budget = PrivacyBudget(eps, delta)
                mech = build_audited_mechanism(name, budget, case.model, dof=dof, sigma=sigma)
                for di, db in enumerate(dbs):
                    ss = np.random.SeedSequence([seed, ci, mi, ei, di])
                    jobs.append(((ci, mi, ei, db), mech, case, ss))

    def work(job):
        key, mech, case, ss = job
        return key, _counts(mech, case.model, key[3], case.universe, trials, ss)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        samples = dict(pool.map(work, jobs))

    reports = []
    for ci, case in enumerate(cases):
        for mi, name in enumerate(mechanisms):
            for ei, eps in enumerate(epsilons):
                budget = PrivacyBudget(eps, delta)
                for x, y in case.pairs:
                    cx, cy = samples[(ci, mi, ei, x)], samples[(ci, mi, ei, y)]
                    rep = compare_counts(name, budget, case.model, x, y, cx, cy, trials, confidence)
                    reports.append(rep)
    return reports

"""Utility models and their global, local and smooth sensitivities.

Databases are multisets of hashable, orderable records stored as sorted
tuples. Two databases are neighbours when one is obtained from the other by
adding or removing a single record.

The brute-force routines walk the edit graph breadth first and are meant as
test oracles on small record universes. Applications plug in analytic
formulas through ``UtilityModel.smooth``.
"""

from __future__ import annotations

import bisect
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Iterable, Iterator, Optional, Sequence

import numpy as np

Database = tuple
MAX_CANDIDATES = 10**6


class EnumerationBudgetExceeded(RuntimeError):
    """The brute-force search would visit too many databases."""


@dataclass(frozen=True)
class SmoothSensitivityValue:
    value: float
    beta: float
    witness_t: int

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("smooth sensitivity cannot be negative")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass(frozen=True)
class UtilityModel:
    """A utility ``u(x, r)`` over a finite outcome set.

    ``evaluate(x)`` returns the whole score vector for database ``x`` in
    outcome order. ``smooth(x, beta)`` may supply an analytic smooth
    sensitivity; without it ``smooth_sensitivity`` falls back to brute force.
    """

    outcomes: tuple
    evaluate: Callable[[Database], Sequence[float]]
    global_sensitivity: float = 1.0
    monotonic: bool = False
    local_at_distance: Optional[Callable[[Database, int], float]] = None
    smooth: Optional[Callable[[Database, float], SmoothSensitivityValue]] = None
    name: str = "utility"

    def __post_init__(self) -> None:
        if len(self.outcomes) == 0:
            raise ValueError("a utility model needs at least one outcome")
        if not self.global_sensitivity > 0:
            raise ValueError("global sensitivity must be positive")

    def scores(self, x: Iterable) -> np.ndarray:
        return np.asarray(self.evaluate(as_database(x)), dtype=float)


def as_database(records: Iterable) -> Database:
    return tuple(sorted(records))


def distance(x: Iterable, y: Iterable) -> int:
    """Size of the multiset symmetric difference."""
    cx, cy = Counter(x), Counter(y)
    return sum(((cx - cy) + (cy - cx)).values())


def neighbors(x: Database, universe: Sequence) -> list[Database]:
    """All databases at distance one: each universe element added, each present record removed."""
    out = []
    for record in universe:
        pos = bisect.bisect_right(x, record)
        out.append(x[:pos] + (record,) + x[pos:])
    seen = set()
    for i, record in enumerate(x):
        if record in seen:
            continue
        seen.add(record)
        out.append(x[:i] + x[i + 1 :])
    return out


def enumerate_databases(universe: Sequence, max_size: int) -> Iterator[Database]:
    """Every multiset over ``universe`` with at most ``max_size`` records."""
    elems = sorted(universe)
    for size in range(max_size + 1):
        yield from itertools.combinations_with_replacement(elems, size)


def _ball_layers(x: Database, universe: Sequence, t_max: int, max_candidates: int):
    """Yield sets of databases at exact edit distance 0, 1, ..., t_max."""
    seen = {x}
    frontier = [x]
    yield frontier
    for _ in range(t_max):
        nxt = []
        for db in frontier:
            for nb in neighbors(db, universe):
                if nb not in seen:
                    seen.add(nb)
                    nxt.append(nb)
        if len(seen) > max_candidates:
            raise EnumerationBudgetExceeded(
                f"ball exceeds {max_candidates} databases; use the analytic sensitivity path"
            )
        frontier = nxt
        yield frontier


class _LocalCache:
    def __init__(self, u: UtilityModel, universe: Sequence):
        self.u = u
        self.universe = tuple(universe)
        self._scores: dict = {}
        self._local: dict = {}

    def scores(self, db: Database) -> np.ndarray:
        s = self._scores.get(db)
        if s is None:
            s = np.asarray(self.u.evaluate(db), dtype=float)
            self._scores[db] = s
        return s

    def local(self, db: Database) -> float:
        v = self._local.get(db)
        if v is None:
            base = self.scores(db)
            v = 0.0
            for nb in neighbors(db, self.universe):
                v = max(v, float(np.max(np.abs(base - self.scores(nb)))))
            self._local[db] = v
        return v


def local_sensitivity(u: UtilityModel, x: Iterable, universe: Sequence) -> float:
    """Largest score change over all neighbours and outcomes."""
    return _LocalCache(u, universe).local(as_database(x))


def local_sensitivity_at_distance_bruteforce(
    u: UtilityModel,
    x: Iterable,
    t: int,
    universe: Sequence,
    max_candidates: int = MAX_CANDIDATES,
) -> float:
    """Worst local sensitivity over databases within ``t`` edits of ``x``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    cache = _LocalCache(u, universe)
    best = 0.0
    for layer in _ball_layers(as_database(x), universe, t, max_candidates):
        for db in layer:
            best = max(best, cache.local(db))
    return best


def local_sensitivity_profile(
    u: UtilityModel,
    x: Iterable,
    universe: Sequence,
    t_max: Optional[int] = None,
    max_candidates: int = MAX_CANDIDATES,
) -> list[float]:
    """``[LS(x, 0), LS(x, 1), ..., LS(x, t_max)]`` from one breadth-first sweep."""
    x = as_database(x)
    t_max = len(x) if t_max is None else t_max
    cache = _LocalCache(u, universe)
    out = []
    running = 0.0
    for layer in _ball_layers(x, universe, t_max, max_candidates):
        for db in layer:
            running = max(running, cache.local(db))
        out.append(running)
    return out


def smooth_sensitivity_bruteforce(
    u: UtilityModel,
    x: Iterable,
    beta: float,
    universe: Sequence,
    max_candidates: int = MAX_CANDIDATES,
) -> SmoothSensitivityValue:
    """``max_t e^(-t beta) LS(x, t)`` over ``t = 0..|x|``, smallest maximiser kept."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    x = as_database(x)
    cache = _LocalCache(u, universe)
    best, witness = -1.0, 0
    running = 0.0
    for t, layer in enumerate(_ball_layers(x, universe, len(x), max_candidates)):
        for db in layer:
            running = max(running, cache.local(db))
        value = math.exp(-t * beta) * running
        if value > best:
            best, witness = value, t
        if running >= u.global_sensitivity:
            # later terms are at most e^(-t beta) * global sensitivity
            break
    return SmoothSensitivityValue(best, beta, witness)


def smooth_sensitivity(
    u: UtilityModel,
    x: Iterable,
    beta: float,
    universe: Optional[Sequence] = None,
    max_candidates: int = MAX_CANDIDATES,
) -> SmoothSensitivityValue:
    """Analytic smooth sensitivity when the model has one, brute force otherwise."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if u.smooth is not None:
        return u.smooth(as_database(x), beta)
    if universe is None:
        raise ValueError(f"{u.name} has no analytic smooth sensitivity; pass a record universe")
    return smooth_sensitivity_bruteforce(u, x, beta, universe, max_candidates)


def global_sensitivity_bruteforce(u: UtilityModel, universe: Sequence, max_size: int) -> float:
    """Largest local sensitivity over every database of at most ``max_size`` records."""
    cache = _LocalCache(u, universe)
    return max(cache.local(db) for db in enumerate_databases(universe, max_size))


@dataclass(frozen=True)
class SmoothBoundViolation:
    kind: str  # "upper" (S(x) < LS(x)) or "smooth" (S(x) > e^beta S(y))
    x: Database
    y: Optional[Database]
    s_x: float
    reference: float


def verify_smooth_bound(
    u: UtilityModel,
    beta: float,
    universe: Sequence,
    max_size: int,
    bound: Optional[Callable[[Database], float]] = None,
    rtol: float = 1e-12,
) -> list[SmoothBoundViolation]:
    """Exhaustively check that ``bound`` is a ``beta``-smooth upper bound on local sensitivity.

    ``bound`` defaults to the model's smooth sensitivity. Every database of at
    most ``max_size`` records is checked against all of its neighbours.
    """
    if bound is None:
        def bound(db):
            return smooth_sensitivity(u, db, beta, universe).value
    cache = _LocalCache(u, universe)
    memo: dict = {}

    def s(db):
        v = memo.get(db)
        if v is None:
            v = float(bound(db))
            memo[db] = v
        return v

    growth = math.exp(beta)
    out = []
    for x in enumerate_databases(universe, max_size):
        sx = s(x)
        ls = cache.local(x)
        if sx < ls * (1 - rtol) - 1e-15:
            out.append(SmoothBoundViolation("upper", x, None, sx, ls))
        for y in neighbors(x, universe):
            sy = s(y)
            if sx > growth * sy * (1 + rtol) + 1e-15:
                out.append(SmoothBoundViolation("smooth", x, y, sx, sy))
    return out


# indicator-of-argmax utilities --------------------------------------------


def argmax_edit_distance(scores: Sequence[float]) -> float:
    """Edits needed before the lowest-index argmax can lose, when each edit moves every score by at most one.

    With top index ``a`` the winner changes once some ``b`` closes the gap
    ``s_a - s_b`` (ties go to the lower index, so a higher-index ``b`` needs
    one extra edit). Returns ``inf`` for a single outcome.
    """
    s = np.asarray(scores, dtype=float)
    if s.size < 2:
        return math.inf
    a = int(np.argmax(s))
    best = math.inf
    for b in range(s.size):
        if b == a:
            continue
        best = min(best, s[a] - s[b] + (1 if b > a else 0))
    return float(best)


def argmax_indicator_smooth_sensitivity(scores: Sequence[float], beta: float) -> SmoothSensitivityValue:
    """Smooth sensitivity of ``r -> [r is the lowest-index argmax]`` from the edit distance.

    Local sensitivity at distance ``t`` is 1 exactly when ``t >= D - 1`` where
    ``D`` is the edit distance to a database with a different winner, giving
    ``e^(-(D-1) beta)``. This is exact when an edit can move a single gap by
    one (class counts) and an upper bound otherwise.
    """
    d = argmax_edit_distance(scores)
    if math.isinf(d):
        return SmoothSensitivityValue(0.0, beta, 0)
    t = max(int(d) - 1, 0)
    return SmoothSensitivityValue(math.exp(-t * beta), beta, t)

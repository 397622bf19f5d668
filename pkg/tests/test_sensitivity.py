import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpselect.percentile import percentile_utility_model
from dpselect.sensitivity import (
    EnumerationBudgetExceeded,
    SmoothSensitivityValue,
    UtilityModel,
    as_database,
    distance,
    enumerate_databases,
    global_sensitivity_bruteforce,
    local_sensitivity,
    local_sensitivity_at_distance_bruteforce,
    local_sensitivity_profile,
    neighbors,
    smooth_sensitivity,
    smooth_sensitivity_bruteforce,
    verify_smooth_bound,
)

DIGITS = tuple(range(1, 10))


def constant_model(outcomes=("a", "b")):
    return UtilityModel(tuple(outcomes), lambda db: np.zeros(len(outcomes)), 1.0, name="zero")


def count_model(universe):
    """How many records equal each outcome: monotonic, sensitivity 1, LS = 1 everywhere."""
    universe = tuple(universe)

    def evaluate(db):
        return np.array([sum(1 for r in db if r == o) for o in universe], dtype=float)

    return UtilityModel(universe, evaluate, 1.0, monotonic=True, name="count")


class TestDatabases:
    def test_distance_is_symmetric_difference(self):
        assert distance([1, 2, 2], [2, 2]) == 1
        assert distance([1, 2], [1, 3]) == 2
        assert distance([], [4, 4]) == 2

    def test_neighbors_are_at_distance_one(self):
        x = as_database([2, 1, 2])
        ns = neighbors(x, (1, 2, 3))
        assert all(distance(x, y) == 1 for y in ns)
        # three additions and two distinct removals
        assert len(ns) == 5

    def test_enumeration_counts_multisets(self):
        assert sum(1 for _ in enumerate_databases((1, 2, 3), 2)) == math.comb(3 + 2, 2)


class TestLocalSensitivity:
    def test_constant_utility_is_zero(self):
        u = constant_model()
        for t in range(3):
            assert local_sensitivity_at_distance_bruteforce(u, (1, 2), t, (1, 2, 3)) == 0.0

    def test_percentile_triple_five(self):
        u = percentile_utility_model(DIGITS, 50)
        assert local_sensitivity_at_distance_bruteforce(u, (5, 5, 5), 0, DIGITS) == 0.0
        assert local_sensitivity_at_distance_bruteforce(u, (5, 5, 5), 3, DIGITS) == 1.0

    def test_profile_of_triple_five(self):
        u = percentile_utility_model(DIGITS, 50)
        assert local_sensitivity_profile(u, (5, 5, 5), DIGITS) == [0.0, 0.0, 1.0, 1.0]

    def test_enumeration_guard(self):
        u = percentile_utility_model(DIGITS, 50)
        with pytest.raises(EnumerationBudgetExceeded):
            local_sensitivity_at_distance_bruteforce(u, (5, 5, 5), 6, DIGITS, max_candidates=1000)

    def test_bounded_by_global_sensitivity(self):
        universe = (1, 2, 3, 4)
        u = percentile_utility_model(universe, 50)
        gs = global_sensitivity_bruteforce(u, universe, 4)
        assert gs == 1.0
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = as_database(rng.choice(universe, rng.integers(0, 5)).tolist())
            for t in range(3):
                assert local_sensitivity_at_distance_bruteforce(u, x, t, universe) <= gs


class TestSmoothSensitivity:
    def test_worst_case_everywhere(self):
        u = count_model((1, 2, 3))
        s = smooth_sensitivity_bruteforce(u, (1, 2), 0.3, (1, 2, 3))
        assert (s.value, s.witness_t) == (1.0, 0)

    def test_beta_zero_gives_global(self):
        u = percentile_utility_model(DIGITS, 50, rule="exact")
        s = smooth_sensitivity_bruteforce(u, (5, 5, 5), 0.0, DIGITS)
        assert s.value == 1.0

    def test_triple_five_brute_force(self):
        # first change of the median needs two edits, so the first t with LS = 1 is 2
        u = percentile_utility_model(DIGITS, 50)
        s = smooth_sensitivity_bruteforce(u, (5, 5, 5), 0.2, DIGITS)
        assert s.value == pytest.approx(math.exp(-0.4))
        assert s.witness_t == 2

    def test_analytic_path_used_when_available(self):
        u = percentile_utility_model(DIGITS, 50)
        assert smooth_sensitivity(u, (5, 5, 5), 0.2).value == pytest.approx(math.exp(-0.4))

    def test_no_analytic_path_needs_universe(self):
        with pytest.raises(ValueError):
            smooth_sensitivity(count_model((1, 2)), (1,), 0.1)

    @pytest.mark.parametrize("x", [(1,), (2, 2), (1, 2, 3), (3, 3, 1, 1), (2, 2, 2, 4)])
    def test_attenuation_is_monotone_in_beta(self, x):
        universe = (1, 2, 3, 4)
        u = percentile_utility_model(universe, 50)
        vals = [smooth_sensitivity_bruteforce(u, x, b, universe).value for b in (0.0, 0.1, 0.5, 1.0, 3.0)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert all(v <= u.global_sensitivity for v in vals)


class TestVerifySmoothBound:
    @pytest.mark.parametrize("size", [3, 4, 5])
    @pytest.mark.parametrize("p", [25, 50, 90])
    def test_percentile_exact_rule_has_no_violations(self, size, p):
        universe = tuple(range(1, size + 1))
        u = percentile_utility_model(universe, p, rule="exact")
        assert verify_smooth_bound(u, 0.3, universe, 6 if size <= 4 else 5) == []

    def test_global_sensitivity_is_a_smooth_bound(self):
        universe = (1, 2, 3)
        u = percentile_utility_model(universe, 50)
        assert verify_smooth_bound(u, 0.3, universe, 5, bound=lambda db: 1.0) == []

    def test_raw_local_sensitivity_is_not_smooth(self):
        universe = (1, 5, 9)
        u = percentile_utility_model(universe, 50)
        bad = verify_smooth_bound(u, 0.1, universe, 4, bound=lambda db: local_sensitivity(u, db, universe))
        assert any(v.kind == "smooth" for v in bad)


class TestSmoothRatioProperty:
    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.sampled_from((1, 2, 3, 4)), max_size=5),
        st.sampled_from((1, 2, 3, 4)),
        st.floats(0.01, 2.0),
        st.sampled_from((10, 50, 75)),
    )
    def test_neighbors_within_e_beta(self, records, extra, beta, p):
        universe = (1, 2, 3, 4)
        u = percentile_utility_model(universe, p, rule="exact")
        x = as_database(records)
        y = as_database(records + [extra])
        sx = smooth_sensitivity(u, x, beta).value
        sy = smooth_sensitivity(u, y, beta).value
        assert sx <= math.exp(beta) * sy * (1 + 1e-12)
        assert sy <= math.exp(beta) * sx * (1 + 1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.sampled_from((1, 2, 3)), max_size=4), st.sampled_from((1, 2, 3)))
    def test_monotonic_flag_holds(self, records, extra):
        u = count_model((1, 2, 3))
        before = u.scores(as_database(records))
        after = u.scores(as_database(records + [extra]))
        assert np.all(after >= before)


def test_smooth_value_type_fields():
    s = SmoothSensitivityValue(0.5, 0.1, 3)
    assert (s.value, s.beta, s.witness_t) == (0.5, 0.1, 3)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpselect import analysis
from dpselect.analysis import (
    QuadratureError,
    absolute_expected_value_error,
    argmax_pmf,
    chebyshev_preference,
    em_pmf,
    expected_error,
    monte_carlo_pmf,
    noisy_max_pmf,
    pf_pmf,
    pf_pmf_closed_form,
    pf_pmf_enumeration,
    rnm_error_bound,
    snm_error_bound,
)
from dpselect.mechanisms import ReportNoisyMax, SmoothNoisyMax
from dpselect.noise import (
    CalibratedNoise,
    NoiseKind,
    PrivacyBudget,
    baseline_noise,
    calibrate_laplace,
    calibrate_lln,
    calibrate_student_t,
)
from dpselect.sensitivity import SmoothSensitivityValue

B = PrivacyBudget(1.0, 0.01)
LAP = calibrate_laplace(B)
NOISES = {
    "laplace": LAP,
    "student_t": calibrate_student_t(B, 3),
    "lln": calibrate_lln(B, 1.0),
    "gumbel": baseline_noise(NoiseKind.GUMBEL, B),
    "exponential": baseline_noise(NoiseKind.EXPONENTIAL, B),
}


class TestNoisyMaxPMF:
    @pytest.mark.parametrize("name", list(NOISES))
    def test_equal_pair_is_half_half(self, name):
        p = noisy_max_pmf([2.0, 2.0], NOISES[name], 0.7).probabilities
        np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("name", list(NOISES))
    def test_small_scale_recovers_argmax(self, name):
        p = noisy_max_pmf([1.0, 0.0], NOISES[name], 1e-4).probabilities
        assert p[0] == pytest.approx(1.0, abs=1e-6)

    def test_laplace_three_outcomes_vs_monte_carlo(self):
        u = [1.0, 0.0, 0.0]
        exact = noisy_max_pmf(u, LAP, 1.0).probabilities
        from dpselect import kernels

        counts = kernels.noisy_max_counts(np.asarray(u), 1.0, kernels.LAPLACE, 10**7, np.random.default_rng(0))
        assert np.max(np.abs(counts / 1e7 - exact)) <= 0.002

    @pytest.mark.parametrize("name", list(NOISES))
    def test_sums_to_one(self, name):
        rng = np.random.default_rng(1)
        for _ in range(5):
            u = rng.normal(size=rng.integers(2, 8))
            pmf = noisy_max_pmf(u, NOISES[name], float(rng.uniform(0.1, 5)))
            assert pmf.probabilities.sum() == pytest.approx(1.0, abs=1e-6)
            assert pmf.residual <= 1e-6
            assert np.all((pmf.probabilities >= 0) & (pmf.probabilities <= 1))

    def test_unreachable_tolerance_raises(self):
        with pytest.raises(QuadratureError):
            noisy_max_pmf([1.0, 0.0, 0.5], NOISES["lln"], 1.0, tol=1e-30)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            noisy_max_pmf([1.0, 0.0], LAP, 0.0)

    @settings(max_examples=20, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=2, max_size=5),
        st.floats(-50, 50),
        st.sampled_from(["laplace", "gumbel", "student_t"]),
    )
    def test_shift_invariance(self, u, shift, name):
        a = noisy_max_pmf(u, NOISES[name], 1.3).probabilities
        b = noisy_max_pmf(np.asarray(u) + shift, NOISES[name], 1.3).probabilities
        np.testing.assert_allclose(a, b, atol=1e-6)

    @settings(max_examples=20, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=2, max_size=5),
        st.floats(0.1, 10),
        st.sampled_from(["laplace", "exponential", "lln"]),
    )
    def test_joint_scaling_invariance(self, u, c, name):
        a = noisy_max_pmf(u, NOISES[name], 0.8).probabilities
        b = noisy_max_pmf(np.asarray(u) * c, NOISES[name], 0.8 * c).probabilities
        np.testing.assert_allclose(a, b, atol=1e-6)

    @pytest.mark.parametrize("name", ["laplace", "student_t", "lln"])
    def test_quadrature_vs_monte_carlo_random_instances(self, name):
        noise = NOISES[name]
        mech = SmoothNoisyMax(noise)
        rng = np.random.default_rng(7)
        for _ in range(20):
            u = rng.integers(0, 4, rng.integers(2, 7)).astype(float)
            s = SmoothSensitivityValue(float(rng.uniform(0.2, 1.0)), noise.beta, 0)
            exact = mech.pmf(u, s).probabilities
            mc = monte_carlo_pmf(mech, u, 10**6, rng, s).probabilities
            assert np.max(np.abs(exact - mc)) <= 0.002


class TestClosedForms:
    def test_uniform(self):
        for pmf in (em_pmf([1.0] * 4, 1.0), pf_pmf([1.0] * 4, 1.0)):
            np.testing.assert_allclose(pmf.probabilities, 0.25, atol=1e-12)

    def test_em_two_outcomes(self):
        np.testing.assert_allclose(em_pmf([1.0, 0.0], 2.0).probabilities, [0.7311, 0.2689], atol=5e-5)

    @pytest.mark.parametrize("size", [2, 3, 4])
    def test_pf_equals_exponential_noisy_max(self, size):
        rng = np.random.default_rng(size)
        for _ in range(5):
            u = rng.normal(size=size) * 2
            eps = float(rng.uniform(0.3, 3))
            noise = baseline_noise(NoiseKind.EXPONENTIAL, PrivacyBudget(eps))
            rnm = noisy_max_pmf(u, noise, noise.scale).probabilities
            np.testing.assert_allclose(pf_pmf(u, eps).probabilities, rnm, atol=1e-4)

    @pytest.mark.parametrize("size", [1, 2, 5, 8])
    def test_pf_closed_form_matches_enumeration(self, size):
        rng = np.random.default_rng(10 + size)
        u = rng.integers(0, 3, size).astype(float)
        a = pf_pmf_enumeration(u, 1.7).probabilities
        b = pf_pmf_closed_form(u, 1.7).probabilities
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_pf_large_outcome_set(self):
        u = np.linspace(0, 5, 30)
        p = pf_pmf(u, 1.0)
        assert p.method == "closed_form"
        assert p.probabilities.sum() == pytest.approx(1.0, abs=1e-12)

    def test_argmax_pmf(self):
        np.testing.assert_array_equal(argmax_pmf([0.0, 2.0, 2.0]).probabilities, [0, 1, 0])


class TestErrors:
    def test_point_mass_on_best(self):
        assert expected_error([0.0, 1.0, 0.0], [0.0, 3.0, 1.0]) == 0.0

    def test_uniform_symmetric_values(self):
        assert absolute_expected_value_error([0.5, 0.5], [0.0, 10.0], 5.0) == 0.0

    def test_expected_error_arithmetic(self):
        assert expected_error([0.8, 0.1, 0.1], [1.0, 0.0, 0.0]) == pytest.approx(0.2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            expected_error([1.0], [1.0, 2.0])


class TestBounds:
    def test_half_sensitivity_makes_bounds_equal(self):
        for eps, r in [(0.5, 3), (1.0, 8), (2.0, 100)]:
            assert snm_error_bound(0.5, eps, r) == pytest.approx(rnm_error_bound(1.0, eps, r), rel=1e-15)

    def test_single_outcome(self):
        assert snm_error_bound(1.0, 1.0, 1) == 4.0

    def test_rnm_arithmetic(self):
        assert rnm_error_bound(1.0, 2.0, 8) == pytest.approx(math.log(8) + 1)
        assert rnm_error_bound(1.0, 2.0, 8) == pytest.approx(3.0794, abs=5e-5)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            snm_error_bound(1.0, 0.0, 3)
        with pytest.raises(ValueError):
            rnm_error_bound(1.0, 1.0, 0)


class TestChebyshev:
    lap = CalibratedNoise(NoiseKind.LAPLACE, scale=1.0)

    def test_t3_vs_laplace(self):
        c = chebyshev_preference(CalibratedNoise(NoiseKind.STUDENT_T, dof=3), self.lap)
        assert c.preferred == "b"
        assert (c.variance_a, c.variance_b) == (3.0, 2.0)

    def test_t5_vs_laplace(self):
        c = chebyshev_preference(CalibratedNoise(NoiseKind.STUDENT_T, dof=5), self.lap)
        assert c.preferred == "a"
        assert c.variance_a == pytest.approx(5 / 3)

    def test_degenerate_lln_ties(self):
        assert chebyshev_preference(CalibratedNoise(NoiseKind.LLN, sigma=0.0), self.lap).preferred == "tie"

    def test_infinite_variance_refused(self):
        with pytest.raises(ValueError):
            chebyshev_preference(CalibratedNoise(NoiseKind.STUDENT_T, dof=2), self.lap)


def test_monte_carlo_pmf_tolerance_and_sum():
    mech = ReportNoisyMax(NoiseKind.GUMBEL, 1.0)
    pmf = monte_carlo_pmf(mech, [1.0, 0.0, 0.0], 10**5, np.random.default_rng(0))
    assert pmf.method == "monte_carlo"
    assert pmf.tolerance == pytest.approx(3 / math.sqrt(1e5))
    assert pmf.probabilities.sum() == pytest.approx(1.0, abs=1e-12)


def test_pmf_serializes():
    d = analysis.em_pmf([1.0, 0.0], 1.0).to_dict(["a", "b"])
    assert set(d["probabilities"]) == {"a", "b"}
    assert d["method"] == "closed_form"

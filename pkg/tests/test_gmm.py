import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from mixmap.gmm import Component, EmConfig, MixtureModel, fit_gmm_em, gaussian_pdf

INV_SQRT_2PI = 0.3989422804014327


class TestGaussianPdf:
    def test_standard_normal_mode(self):
        assert gaussian_pdf(0.0, 0.0, 1.0) == pytest.approx(INV_SQRT_2PI, rel=1e-15)

    def test_value_at_mean_is_inverse_sigma_scaling(self):
        for var in (0.25, 1.0, 4.0, 9.0):
            expected = 1.0 / (math.sqrt(var) * math.sqrt(2.0 * math.pi))
            assert gaussian_pdf(1.7, 1.7, var) == pytest.approx(expected, rel=1e-15)

    def test_off_mode_value_and_quadrature_normalization(self):
        # Independent check: the density must integrate to 1 over +/- 40 sigma.
        total, _ = quad(lambda t: gaussian_pdf(t, 0.0, 4.0), -80.0, 80.0)
        assert total == pytest.approx(1.0, abs=1e-10)
        assert gaussian_pdf(2.0, 0.0, 4.0) == pytest.approx(
            math.exp(-0.5) / math.sqrt(8.0 * math.pi), rel=1e-14
        )

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            gaussian_pdf(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            gaussian_pdf(0.0, 0.0, -1.0)


class TestDegenerateFits:
    def test_constant_values_collapse(self):
        model = fit_gmm_em(np.full(50, 3.25), EmConfig(k=3))
        floor = 1e-9  # variance_floor_scale * max(pop_var=0, 1)
        for comp in model.components:
            assert comp.mean == pytest.approx(3.25)
            assert comp.variance == pytest.approx(floor)
            assert comp.weight == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_more_components_than_distinct_values(self):
        model = fit_gmm_em([1.0, 1.0, 2.0], EmConfig(k=5))
        assert sum(c.weight for c in model.components) == pytest.approx(1.0, abs=1e-12)
        assert all(c.variance > 0 for c in model.components)

    def test_k1_matches_closed_form(self, rng):
        for _ in range(10):
            x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3), size=200)
            model = fit_gmm_em(x, EmConfig(k=1))
            (comp,) = model.components
            assert comp.weight == 1.0
            assert comp.mean == pytest.approx(float(np.mean(x)), rel=1e-10)
            assert comp.variance == pytest.approx(float(np.var(x)), rel=1e-10)


class TestRecovery:
    def test_two_component_recovery(self):
        rng = np.random.default_rng(42)
        n = 20_000
        comp = rng.random(n) >= 0.3
        x = np.where(comp, rng.normal(5.0, 0.5, n), rng.normal(0.0, 1.0, n))
        model = fit_gmm_em(x, EmConfig(k=2))
        assert model.converged
        np.testing.assert_allclose(model.weights, [0.3, 0.7], atol=0.02)
        np.testing.assert_allclose(model.means, [0.0, 5.0], atol=0.05)
        np.testing.assert_allclose(np.sqrt(model.variances), [1.0, 0.5], atol=0.05)

    def test_seed_only_affects_refinement(self):
        rng = np.random.default_rng(3)
        x = np.concatenate([rng.normal(-4, 0.5, 500), rng.normal(4, 0.5, 500)])
        base = fit_gmm_em(x, EmConfig(k=2, seed=1))
        other = fit_gmm_em(x, EmConfig(k=2, seed=99))
        assert base.components == other.components

    def test_refined_init_agrees_on_separated_data(self):
        rng = np.random.default_rng(3)
        x = np.concatenate([rng.normal(-4, 0.5, 500), rng.normal(4, 0.5, 500)])
        plain = fit_gmm_em(x, EmConfig(k=2))
        for seed in (0, 7):
            refined = fit_gmm_em(x, EmConfig(k=2, seed=seed, kmeans_refine=True))
            np.testing.assert_allclose(refined.means, plain.means, atol=1e-6)
            np.testing.assert_allclose(refined.weights, plain.weights, atol=1e-6)


class TestEmProperties:
    @settings(max_examples=30, deadline=None)
    @given(
        seed=st.integers(0, 2**31),
        size=st.integers(20, 400),
        k=st.integers(1, 5),
    )
    def test_monotone_loglik_and_simplex(self, seed, size, k):
        r = np.random.default_rng(seed)
        x = r.normal(r.uniform(-2, 2), r.uniform(0.5, 2), size) * r.uniform(0.5, 2)
        trace = []
        model = fit_gmm_em(x, EmConfig(k=k), trace=trace)
        diffs = np.diff(trace)
        assert np.all(diffs >= -1e-9)
        assert abs(sum(c.weight for c in model.components) - 1.0) <= 1e-12
        floor = 1e-9 * max(float(np.var(x)), 1.0)
        assert all(c.variance >= floor * (1 - 1e-15) for c in model.components)

    def test_permutation_invariance_is_exact(self, rng):
        x = rng.normal(size=500)
        perm = rng.permutation(500)
        a = fit_gmm_em(x, EmConfig(k=3))
        b = fit_gmm_em(x[perm], EmConfig(k=3))
        assert a.components == b.components
        assert a.log_likelihood == b.log_likelihood

    def test_components_sorted_by_mean(self, rng):
        x = rng.normal(size=300)
        model = fit_gmm_em(x, EmConfig(k=4))
        means = model.means
        assert np.all(np.diff(means) >= 0)

    def test_iteration_budget_respected(self, rng):
        x = rng.uniform(size=200)
        model = fit_gmm_em(x, EmConfig(k=3, max_iterations=4))
        assert model.iterations_run <= 4

    def test_empty_and_nonfinite_inputs_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            fit_gmm_em([], EmConfig(k=1))
        with pytest.raises(ValueError, match="non-finite"):
            fit_gmm_em([1.0, np.nan], EmConfig(k=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EmConfig(k=0)
        with pytest.raises(ValueError):
            EmConfig(k=1, rel_tolerance=0.0)

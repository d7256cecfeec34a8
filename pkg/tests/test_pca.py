import io

import numpy as np
import pytest

from mixmap.descriptors import EncodeError
from mixmap.fmap import FeatureMap, FeatureMapSet, Layer
from mixmap.pca import (
    PcaBasis,
    PcaError,
    fit_layer_bases,
    fit_pca,
    layer_observations,
    pca_encode,
    read_bases,
    write_bases,
)
from tests.conftest import make_sample, make_sets


def jacobi_eigh(matrix, sweeps=100, tol=1e-14):
    """Brute-force symmetric eigensolver by explicit Jacobi rotations."""
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a).copy(), v


def oracle_basis(x, pc_count):
    """Top components straight from the explicit covariance, Jacobi-solved."""
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = jacobi_eigh(cov)
    order = np.argsort(vals)[::-1][:pc_count]
    comps = []
    for idx in order:
        u = vecs[:, idx]
        i = int(np.argmax(np.abs(u)))
        comps.append(-u if u[i] < 0 else u)
    return np.array(comps), vals[order]


def assert_matches_up_to_sign(got, want, atol):
    for g, w in zip(got, want):
        err = min(np.max(np.abs(g - w)), np.max(np.abs(g + w)))
        assert err < atol, f"component differs by {err}"


class TestFitPca:
    def test_rank_one_data(self, rng):
        direction = rng.normal(size=9)
        direction /= np.linalg.norm(direction)
        t = rng.normal(size=30)
        x = 5.0 + np.outer(t, direction)
        basis = fit_pca(x, 3)
        total = basis.explained_variance.sum()
        assert basis.explained_variance[0] == pytest.approx(total, rel=1e-10)
        # top-1 reconstruction is exact for data on a line
        xc = x - basis.mean_vector
        recon = np.outer(xc @ basis.components[0], basis.components[0])
        assert np.max(np.abs(recon - xc)) < 1e-8

    def test_isotropic_data_keeps_invariants_only(self):
        x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        basis = fit_pca(x, 2)
        np.testing.assert_allclose(
            basis.components @ basis.components.T, np.eye(2), atol=1e-8
        )
        assert basis.explained_variance[0] == pytest.approx(
            basis.explained_variance[1], rel=1e-8
        )

    def test_tall_matrix_matches_jacobi_oracle(self, rng):
        x = rng.normal(size=(50, 12)) @ np.diag(rng.uniform(0.5, 3.0, 12))
        basis = fit_pca(x, 3)
        want_comps, want_vals = oracle_basis(x, 3)
        assert_matches_up_to_sign(basis.components, want_comps, 1e-8)
        np.testing.assert_allclose(basis.explained_variance, want_vals, rtol=1e-8)

    def test_wide_matrix_gram_branch_matches_oracle(self, rng):
        x = rng.normal(size=(8, 12))
        basis = fit_pca(x, 3)
        want_comps, want_vals = oracle_basis(x, 3)
        assert_matches_up_to_sign(basis.components, want_comps, 1e-8)
        np.testing.assert_allclose(basis.explained_variance, want_vals, rtol=1e-8)

    def test_projected_training_variance_equals_explained(self, rng):
        x = rng.normal(size=(40, 6)) * np.array([3.0, 2.0, 1.5, 1.0, 0.5, 0.2])
        basis = fit_pca(x, 3)
        coeff = (x - basis.mean_vector) @ basis.components.T
        for p in range(3):
            assert np.var(coeff[:, p], ddof=1) == pytest.approx(
                basis.explained_variance[p], rel=1e-6
            )

    def test_training_reconstruction_beats_random_bases(self, rng):
        x = rng.normal(size=(30, 8)) * np.linspace(3.0, 0.3, 8)
        basis = fit_pca(x, 2)
        xc = x - x.mean(axis=0)

        def recon_error(comps):
            proj = xc @ comps.T @ comps
            return float(np.mean((xc - proj) ** 2))

        ours = recon_error(basis.components)
        for trial in range(20):
            q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
            assert ours <= recon_error(q[:, :2].T) + 1e-12

    def test_sign_convention(self, rng):
        x = rng.normal(size=(25, 5))
        basis = fit_pca(x, 3)
        for comp in basis.components:
            assert comp[int(np.argmax(np.abs(comp)))] > 0

    def test_preconditions(self, rng):
        with pytest.raises(PcaError, match="at least 2"):
            fit_pca(rng.normal(size=(1, 4)), 1)
        with pytest.raises(PcaError, match="pc_count"):
            fit_pca(rng.normal(size=(5, 4)), 5)
        with pytest.raises(PcaError, match="pc_count"):
            fit_pca(rng.normal(size=(3, 10)), 3)

    def test_basis_invariants_enforced(self):
        with pytest.raises(PcaError, match="orthonormal"):
            PcaBasis(1, np.zeros(2), np.array([[1.0, 1.0]]), np.array([1.0]))
        with pytest.raises(PcaError, match="non-increasing"):
            PcaBasis(
                1, np.zeros(2), np.array([[1.0, 0.0], [0.0, 1.0]]),
                np.array([1.0, 2.0]),
            )


class TestPcaEncode:
    def layer_bases(self, rng, samples, pc):
        return fit_layer_bases(samples, pc)

    def test_layer_mean_projects_to_zero(self, rng):
        samples = make_sets(rng, 4, layer_specs=((1, 3, 3, 3),))
        bases = self.layer_bases(rng, samples, 2)
        mean_map = bases[1].mean_vector.reshape(3, 3).astype(np.float32)
        # float32 narrowing of the mean must still give ~zero coefficients
        sample = FeatureMapSet(
            "m", 0, "net", (Layer(1, (FeatureMap(1, 1, mean_map),)),)
        )
        d = pca_encode(sample, bases)
        np.testing.assert_allclose(d.values, 0.0, atol=1e-6)

    def test_descriptor_length_and_names(self, rng):
        samples = make_sets(rng, 5, layer_specs=((1, 2, 3, 3), (2, 3, 2, 2)))
        bases = self.layer_bases(rng, samples, 3)
        d = pca_encode(samples[0], bases)
        assert d.values.size == 3 * (2 + 3)
        assert d.schema[0] == "net/layer1/map1/pc1"
        assert d.schema[-1] == "net/layer2/map3/pc3"

    def test_missing_basis_rejected(self, rng):
        samples = make_sets(rng, 3, layer_specs=((1, 2, 2, 2), (2, 2, 2, 2)))
        bases = self.layer_bases(rng, samples, 1)
        del bases[2]
        with pytest.raises(PcaError, match="no basis for layer 2"):
            pca_encode(samples[0], bases)

    def test_dimension_mismatch_rejected(self, rng):
        samples = make_sets(rng, 3, layer_specs=((1, 2, 2, 2),))
        bases = self.layer_bases(rng, samples, 1)
        other = make_sample(rng, "x", 0, layer_specs=((1, 2, 3, 3),))
        with pytest.raises(PcaError, match="basis dimension"):
            pca_encode(other, bases)

    def test_pooled_observation_counts(self, rng):
        samples = make_sets(rng, 4, layer_specs=((1, 3, 2, 2), (2, 1, 4, 4)))
        obs = layer_observations(samples)
        assert obs[1].shape == (12, 4)
        assert obs[2].shape == (4, 16)


class TestBasisIo:
    def test_round_trip(self, rng):
        samples = make_sets(rng, 4, layer_specs=((1, 2, 3, 3), (2, 2, 2, 2)))
        bases = fit_layer_bases(samples, 2)
        buf = io.BytesIO()
        write_bases(bases, buf, "net")
        buf.seek(0)
        back, tag = read_bases(buf)
        assert tag == "net"
        assert set(back) == set(bases)
        for lid in bases:
            np.testing.assert_array_equal(back[lid].components, bases[lid].components)
            np.testing.assert_array_equal(
                back[lid].explained_variance, bases[lid].explained_variance
            )
            np.testing.assert_array_equal(
                back[lid].mean_vector, bases[lid].mean_vector
            )

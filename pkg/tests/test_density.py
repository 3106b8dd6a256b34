import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxvacua import density
from fluxvacua.errors import InputError, SignatureError


def ensemble_from_gram_multiple(h21, c, seed=0):
    y = density.YukawaData.random(h21, seed)
    G = density.gram(density.hessian_basis(y))
    return density.HessianEnsemble.from_qform(y, c * G)


def direct_gaussian_density(y, q, n, seed):
    """Sample basis coordinates w with weight exp(-w^T q w), no orthonormal frame involved."""
    basis = np.asarray(density.hessian_basis(y))
    rng = np.random.default_rng(seed)
    cov = np.linalg.inv(q) / 2
    w = rng.multivariate_normal(np.zeros(len(q)), cov, size=n)
    H = np.einsum("na,aij->nij", w, basis)
    x = (rng.normal(size=n) + 1j * rng.normal(size=n)) / math.sqrt(2)
    M = np.conj(np.swapaxes(H, 1, 2)) @ H - (np.abs(x) ** 2)[:, None, None] * np.eye(y.m)
    vals = np.abs(np.linalg.det(M))
    detC = np.linalg.det(density.gram(list(basis))) / np.linalg.det(q)
    c = math.pi ** y.m / (math.factorial(y.b3) * math.sqrt(detC))
    return c * vals.mean(), c * vals.std(ddof=1) / math.sqrt(n)


class TestYukawa:
    def test_rejects_non_symmetric(self):
        with pytest.raises(InputError):
            density.YukawaData(2, ([[1, 2], [0, 1]], [[1, 0], [0, 1]]))

    def test_wrong_count(self):
        with pytest.raises(InputError):
            density.YukawaData(2, ([[1, 0], [0, 1]],))

    def test_sizes(self):
        y = density.YukawaData.random(3, seed=1)
        assert (y.m, y.b3) == (4, 8)


class TestBasis:
    def test_h21_one_example(self):
        y = density.YukawaData(1, ([[2.0]],))
        B = density.hessian_basis(y)
        assert len(B) == 2
        assert np.array_equal(B[0], np.array([[0, 1], [1, 2]], dtype=complex))
        assert np.array_equal(B[1], np.array([[0, 1j], [1j, -2j]]))

    def test_basis_symmetric(self):
        for B in density.hessian_basis(density.YukawaData.random(2, seed=3)):
            assert np.allclose(B, B.T)

    def test_orthonormal_frame(self):
        ens = density.HessianEnsemble.from_qform(density.YukawaData.random(2, 5), np.eye(4))
        assert np.allclose(density.gram(list(ens.E)), np.eye(4), atol=1e-12)

    def test_covariance_identity_when_q_is_gram(self):
        ens = ensemble_from_gram_multiple(2, 1.0)
        assert np.allclose(ens.C, np.eye(4), atol=1e-12)
        assert ens.detC == pytest.approx(1.0)

    def test_covariance_half_when_q_is_twice_gram(self):
        ens = ensemble_from_gram_multiple(2, 2.0)
        assert np.allclose(ens.C, np.eye(4) / 2, atol=1e-12)
        assert ens.detC == pytest.approx(1 / 16)

    @pytest.mark.parametrize("h21", [1, 2, 3])
    def test_defining_identity(self, h21):
        rng = np.random.default_rng(h21)
        a = rng.normal(size=(2 * h21, 2 * h21))
        q = a @ a.T + np.eye(2 * h21)
        ens = density.HessianEnsemble.from_qform(density.YukawaData.random(h21, seed=h21), q)
        assert ens.defining_residual() < 1e-10
        assert np.allclose(ens.qform(), q)

    def test_coordinates_round_trip(self):
        ens = density.HessianEnsemble.random(2, seed=1)
        v = np.array([0.3, -1.0, 2.0, 0.5])
        assert np.allclose(ens.coordinates(ens.hessian(v)), v)

    def test_indefinite_qform(self):
        with pytest.raises(SignatureError) as info:
            density.HessianEnsemble.from_qform(density.YukawaData.random(1), np.diag([1.0, -1.0]))
        assert min(info.value.eigenvalues) < 0


class TestSampling:
    def test_covariance_of_samples(self):
        ens = density.HessianEnsemble.random(1, seed=2)
        n = 40_000
        H, x = density.sample_hessian(ens, seed=7, size=n)
        v = ens.coordinates(H)
        emp = v.T @ v / n
        # Var of the entries of an empirical second moment is (C_ii C_jj + C_ij^2)/(4n).
        C = ens.C / 2
        se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / n)
        assert np.all(np.abs(emp - C) < 3 * se)
        assert np.mean(np.abs(x) ** 2) == pytest.approx(1.0, abs=3 * 1 / math.sqrt(n))

    def test_deterministic(self):
        ens = density.HessianEnsemble.random(2, seed=2)
        a, xa = density.sample_hessian(ens, seed=11)
        b, xb = density.sample_hessian(ens, seed=11)
        assert np.array_equal(a, b) and xa == xb


class TestPfDensity:
    @pytest.mark.parametrize("fn", [density.pf_density_gaussian, density.pf_density_indicator])
    def test_h21_zero(self, fn):
        ens = density.HessianEnsemble.from_qform(density.YukawaData(0), np.zeros((0, 0)))
        est = fn(ens, N=100_000, seed=0)
        assert abs(est.value - math.pi / 2) < 3 * est.stderr

    def test_stderr_scaling(self):
        ens = density.HessianEnsemble.random(1, seed=0)
        a = density.pf_density_gaussian(ens, N=20_000, seed=1)
        b = density.pf_density_gaussian(ens, N=80_000, seed=1)
        assert 0.4 < b.stderr / a.stderr < 0.6

    @pytest.mark.parametrize("h21", [1, 2])
    def test_forms_agree(self, h21):
        ens = density.HessianEnsemble.random(h21, seed=4)
        g = density.pf_density_gaussian(ens, N=50_000, seed=2)
        i = density.pf_density_indicator(ens, N=50_000, seed=2)
        assert g.value > 0 and i.value > 0
        assert abs(g.value - i.value) < 3 * math.hypot(g.stderr, i.stderr)

    def test_matches_direct_basis_sampling(self):
        y = density.YukawaData.random(1, seed=8)
        q = np.array([[2.0, 0.3], [0.3, 1.0]])
        ens = density.HessianEnsemble.from_qform(y, q)
        est = density.pf_density_gaussian(ens, N=50_000, seed=3)
        ref, ref_se = direct_gaussian_density(y, q, 50_000, seed=9)
        assert abs(est.value - ref) < 3 * math.hypot(est.stderr, ref_se)

    def test_workers_bitwise_identical(self):
        ens = density.HessianEnsemble.random(1, seed=0)
        a = density.pf_density_gaussian(ens, N=30_000, seed=5, workers=1)
        b = density.pf_density_gaussian(ens, N=30_000, seed=5, workers=3)
        assert (a.value, a.stderr) == (b.value, b.stderr)

    def test_too_few_samples(self):
        ens = density.HessianEnsemble.random(1, seed=0)
        with pytest.raises(InputError):
            density.pf_density_gaussian(ens, N=999)


class TestIntegrand:
    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=4, max_size=4),
        st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
        st.floats(0.1, 5),
    )
    def test_homogeneous_degree_2m(self, v, x, t):
        ens = density.HessianEnsemble.random(2, seed=1)
        v = np.array([v])
        base = density.integrand(ens, v, np.array([x]))[0]
        scaled = density.integrand(ens, t * v, np.array([t * x]))[0]
        assert scaled == pytest.approx(t ** (2 * ens.m) * base, rel=1e-8, abs=1e-10 * t ** (2 * ens.m))

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=2, max_size=2),
        st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
    )
    def test_matches_determinant(self, v, x):
        ens = density.HessianEnsemble.random(1, seed=1)
        H = ens.hessian(np.array(v))
        direct = abs(np.linalg.det(H.conj().T @ H - abs(x) ** 2 * np.eye(2)))
        assert density.integrand(ens, np.array([v]), np.array([x]))[0] == pytest.approx(direct, rel=1e-8, abs=1e-9)

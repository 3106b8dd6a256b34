import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxvacua import critsolve, geometry
from fluxvacua.errors import ConfigError, DomainError, InputError, NotCriticalError

FLAT = geometry.FlatModel(1)
Z2M1 = geometry.PolySection(1, {(2,): 1, (0,): -1})


def poly(m, terms):
    return geometry.PolySection(m, terms)


def exact_covariant_gradient(K, f, z, zb, point):
    """e^K d(e^-K f)/dz_j with z, zb independent symbols, evaluated exactly."""
    subs = {**{z[j]: point[j] for j in range(len(z))}, **{zb[j]: np.conj(point[j]) for j in range(len(z))}}
    out = []
    for j in range(len(z)):
        e = sp.exp(K) * sp.diff(sp.exp(-K) * f, z[j])
        out.append(complex(sp.N(e.subs(subs), 30)))
    return np.array(out)


coeff = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
point = st.complex_numbers(max_magnitude=1.5, allow_nan=False, allow_infinity=False)


class TestCovariantGradient:
    def test_examples(self):
        assert geometry.covariant_gradient(FLAT, poly(1, {(1,): 1}), [0j]) == pytest.approx([1])
        z0 = 0.3 - 0.7j
        assert geometry.covariant_gradient(FLAT, poly(1, {(0,): 1}), [z0]) == pytest.approx([-np.conj(z0)])
        assert abs(geometry.covariant_gradient(FLAT, Z2M1, [math.sqrt(3)])[0]) < 1e-14

    def test_vectorised_over_points(self):
        Z = np.array([[0.1], [0.2 + 0.3j], [-1j]])
        g = geometry.covariant_gradient(FLAT, Z2M1, Z)
        assert g.shape == (3, 1)
        for i in range(3):
            assert g[i] == pytest.approx(geometry.covariant_gradient(FLAT, Z2M1, Z[i]))

    @settings(max_examples=25, deadline=None)
    @given(coeff, coeff, coeff, point, point)
    def test_matches_exact_second_form(self, a, b, c, p, q):
        z, zb = sp.symbols("z0:2"), sp.symbols("zb0:2")
        model = geometry.ProjectiveModel(2, 2)
        f = poly(2, {(0, 0): a, (1, 1): b, (0, 2): c})
        K = 2 * sp.log(1 + z[0] * zb[0] + z[1] * zb[1])
        fx = a + b * z[0] * z[1] + c * z[1] ** 2
        P = np.array([p, q])
        exact = exact_covariant_gradient(K, fx, z, zb, P)
        assert np.max(np.abs(geometry.covariant_gradient(model, f, P) - exact)) < 1e-10

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_domain_error(self):
        model = geometry.CustomModel(1, "-log(1 - z0*zb0)", validate=False)
        with pytest.raises(DomainError):
            geometry.covariant_gradient(model, Z2M1, [1.0 + 0j])


class TestCurvature:
    def test_flat_identity(self):
        assert geometry.curvature(geometry.FlatModel(2), [0.3j, 1.0]) == pytest.approx(np.eye(2))

    def test_projective_origin(self):
        assert geometry.curvature(geometry.ProjectiveModel(2, 3), [0j, 0j]) == pytest.approx(3 * np.eye(2))

    def test_projective_z1(self):
        assert geometry.curvature(geometry.ProjectiveModel(1, 1), [1 + 0j])[0, 0] == pytest.approx(0.25)

    @pytest.mark.parametrize("model", [geometry.ProjectiveModel(2, 2), geometry.FlatModel(3)])
    def test_builtin_models_validate(self, model):
        geometry.validate_model(model)


class TestComplexHessian:
    def test_z2_minus_1_at_origin(self):
        h = geometry.complex_hessian(FLAT, Z2M1, [0j])
        assert h.hprime[0, 0] == pytest.approx(2)
        assert h.hdoubleprime[0, 0] == pytest.approx(1)
        assert h.absdet == pytest.approx(3)
        assert h.det == pytest.approx(abs(h.hprime[0, 0]) ** 2 - abs(h.hdoubleprime[0, 0]) ** 2)

    def test_projective_constant(self):
        h = geometry.complex_hessian(geometry.ProjectiveModel(1, 1), poly(1, {(0,): 1}), [0j])
        assert h.hprime[0, 0] == pytest.approx(0, abs=1e-15)
        assert h.hdoubleprime[0, 0] == pytest.approx(-1)

    def test_vanishing_section(self):
        # f = z^2 on the flat model: Z = 0 is critical and f(0) = 0.
        h = geometry.complex_hessian(FLAT, poly(1, {(2,): 1}), [0j])
        assert np.all(h.hdoubleprime == 0)

    def test_not_critical(self):
        with pytest.raises(NotCriticalError) as info:
            geometry.complex_hessian(FLAT, Z2M1, [0.5 + 0j])
        assert info.value.gradnorm > 0

    def test_block_pattern(self):
        h = geometry.complex_hessian(FLAT, Z2M1, [1j])
        A = h.assembled
        assert np.allclose(A[:1, :1], h.hprime) and np.allclose(A[:1, 1:], h.hdoubleprime)
        assert np.allclose(A[1:, :1], np.conj(h.hdoubleprime)) and np.allclose(A[1:, 1:], np.conj(h.hprime))

    @pytest.mark.parametrize("Z", [[0j], [math.sqrt(3) + 0j], [1j], [-1j]])
    def test_finite_difference_blocks(self, Z):
        h = geometry.complex_hessian(FLAT, Z2M1, Z)
        dg, dgb = geometry.wirtinger(lambda w: geometry.covariant_gradient(FLAT, Z2M1, w), np.array(Z))
        assert np.max(np.abs(dg - h.hprime)) < 1e-6
        assert np.max(np.abs(dgb - h.hdoubleprime)) < 1e-6

    def test_symmetric_hprime_m2(self):
        model = geometry.ProjectiveModel(2, 3)
        f = poly(2, {(0, 0): 1.0, (2, 0): 0.5, (1, 1): -0.3j, (0, 2): 0.2})
        pts = critsolve.find_critical_points(model, f, critsolve.Region.ball(1.0, 2), grid_density=2)
        assert len(pts) > 0
        for p in pts:
            assert np.allclose(p.hessian.hprime, p.hessian.hprime.T, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(coeff, coeff, coeff, point)
    def test_jacobian_matches_finite_differences(self, a, b, c, p):
        model = geometry.ProjectiveModel(1, 2)
        f = poly(1, {(0,): a, (1,): b, (3,): c})
        A, B = geometry.gradient_jacobian(model, f, np.array([p]))
        dg, dgb = geometry.wirtinger(lambda w: geometry.covariant_gradient(model, f, w), np.array([p]))
        scale = max(1.0, np.abs(A).max(), np.abs(B).max())
        assert np.max(np.abs(A - dg)) < 1e-6 * scale
        assert np.max(np.abs(B - dgb)) < 1e-6 * scale


class TestSections:
    def test_records_round_trip(self):
        f = poly(2, {(1, 0): 1 + 2j, (0, 3): -0.5})
        g = geometry.PolySection.from_records(2, f.to_records())
        assert g.terms == f.terms

    def test_bad_record(self):
        with pytest.raises(ConfigError):
            geometry.PolySection.from_records(1, [[[1], 2.0]])

    def test_bad_multi_index(self):
        with pytest.raises(InputError):
            poly(2, {(1,): 1})

    @settings(max_examples=25, deadline=None)
    @given(coeff, coeff, point)
    def test_derivatives_match_finite_differences(self, a, b, p):
        for f in (poly(1, {(0,): a, (2,): b, (5,): 1}), geometry.ExprSection(1, f"exp(z0) * ({a.real}) + z0**3")):
            Z = np.array([p])
            d, db = geometry.wirtinger(f.eval, Z)
            assert np.max(np.abs(d - f.grad(Z))) < 1e-6 * max(1.0, np.abs(f.grad(Z)).max())
            assert np.max(np.abs(db)) < 1e-6 * max(1.0, np.abs(f.grad(Z)).max())
            dd, _ = geometry.wirtinger(f.grad, Z)
            assert np.max(np.abs(dd - f.hess(Z))) < 1e-5 * max(1.0, np.abs(f.hess(Z)).max())

    def test_linearity_of_combination(self):
        basis = [poly(1, {(0,): 1}), poly(1, {(1,): 1j, (2,): 1})]
        Z = np.array([[0.3 + 0.1j], [-1.2j]])
        G1, G2 = np.array([1.0, -2.0]), np.array([0.5, 3.0])
        lhs = geometry.combine(basis, G1 + G2).eval(Z)
        rhs = geometry.combine(basis, G1).eval(Z) + geometry.combine(basis, G2).eval(Z)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


class TestCustomModel:
    def test_symbolic_flat_matches_builtin(self):
        model = geometry.CustomModel(1, "z0*zb0")
        Z = np.array([0.4 - 0.2j])
        assert model.grad_potential(Z) == pytest.approx(FLAT.grad_potential(Z))
        assert model.curvature(Z) == pytest.approx(FLAT.curvature(Z))

    def test_wrong_supplied_gradient_rejected(self):
        with pytest.raises(ConfigError):
            geometry.CustomModel(1, "z0*zb0", grad=["2*zb0"])

    def test_unknown_symbol(self):
        with pytest.raises(ConfigError):
            geometry.CustomModel(1, "z0*zb0 + w")


class TestFrameChange:
    def test_critical_points_invariant(self):
        region = critsolve.Region.ball(2.0)
        g = "0.3*z0 + 0.1j*z0**2"
        model2, f2 = geometry.frame_change(FLAT, Z2M1, g)
        a = critsolve.find_critical_points(FLAT, Z2M1, region)
        b = critsolve.find_critical_points(model2, f2, region)
        assert len(a) == len(b) == 5
        za = sorted((p.Z[0] for p in a), key=lambda z: (round(z.real, 6), round(z.imag, 6)))
        zb = sorted((p.Z[0] for p in b), key=lambda z: (round(z.real, 6), round(z.imag, 6)))
        assert np.max(np.abs(np.array(za) - np.array(zb))) < 1e-8

    def test_log_norm_stationary_at_critical_points(self):
        for z0 in (math.sqrt(3), 1j):
            _, db = geometry.wirtinger(lambda w: geometry.log_norm(FLAT, Z2M1, w).astype(complex), np.array([z0]))
            assert abs(db[0]) < 1e-8

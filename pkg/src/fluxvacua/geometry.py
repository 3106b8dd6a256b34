"""Local calculus of a Hermitian holomorphic line bundle.

A chart carries a Kähler potential K with |e_L|^2 = exp(-K); a section is
s = f e_L with f holomorphic.  All evaluators accept a point of shape (m,)
or a stack of shape (k, m) and broadcast over the leading axes.

Derivative conventions: ``grad_potential`` is dK/dZ_j, ``hess_potential``
is d^2K/dZ_j dZ_q (both holomorphic directions) and ``curvature`` is
Theta_jq = d^2K/dZ_j dZbar_q.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from . import _expr
from ._rng import as_generator
from .errors import ConfigError, DomainError, InputError, NotCriticalError

TOL_CRIT = 1e-9


def _points(Z, m):
    Z = np.asarray(Z, dtype=complex)
    if Z.shape[-1:] != (m,):
        raise InputError(f"expected points in C^{m}, got shape {Z.shape}")
    return Z


# ---------------------------------------------------------------- potentials


class HermitianModel:
    kind = "abstract"

    def __init__(self, m):
        if m < 1:
            raise InputError("complex dimension must be at least 1")
        self.m = int(m)

    def potential(self, Z):
        raise NotImplementedError

    def grad_potential(self, Z):
        raise NotImplementedError

    def hess_potential(self, Z):
        raise NotImplementedError

    def curvature(self, Z):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind, "m": self.m}


class FlatModel(HermitianModel):
    """K = |Z|^2."""

    kind = "flat"

    def potential(self, Z):
        Z = _points(Z, self.m)
        return np.sum(np.abs(Z) ** 2, axis=-1)

    def grad_potential(self, Z):
        return np.conj(_points(Z, self.m))

    def hess_potential(self, Z):
        Z = _points(Z, self.m)
        return np.zeros(Z.shape + (self.m,), dtype=complex)

    def curvature(self, Z):
        Z = _points(Z, self.m)
        return np.broadcast_to(np.eye(self.m, dtype=complex), Z.shape[:-1] + (self.m, self.m)).copy()


class ProjectiveModel(HermitianModel):
    """K = N log(1 + |Z|^2), the O(N) bundle on an affine chart of CP^m."""

    kind = "projective"

    def __init__(self, m, N=1):
        super().__init__(m)
        self.N = float(N)

    def describe(self):
        return {"kind": self.kind, "m": self.m, "N": self.N}

    def potential(self, Z):
        Z = _points(Z, self.m)
        return self.N * np.log1p(np.sum(np.abs(Z) ** 2, axis=-1))

    def grad_potential(self, Z):
        Z = _points(Z, self.m)
        rho = 1 + np.sum(np.abs(Z) ** 2, axis=-1)
        return self.N * np.conj(Z) / rho[..., None]

    def hess_potential(self, Z):
        Z = _points(Z, self.m)
        rho = 1 + np.sum(np.abs(Z) ** 2, axis=-1)
        zb = np.conj(Z)
        return -self.N * zb[..., :, None] * zb[..., None, :] / (rho**2)[..., None, None]

    def curvature(self, Z):
        Z = _points(Z, self.m)
        rho = 1 + np.sum(np.abs(Z) ** 2, axis=-1)
        eye = np.eye(self.m)
        outer = np.conj(Z)[..., :, None] * Z[..., None, :]
        return self.N * (eye / rho[..., None, None] - outer / (rho**2)[..., None, None])


class CustomModel(HermitianModel):
    """Potential given as an expression in z0.. and zb0.. (zb stands for conj z).

    Derivatives that are not supplied are obtained by symbolic differentiation;
    all derivative evaluators are checked against finite differences when the
    model is built.
    """

    kind = "custom"

    def __init__(self, m, potential, grad=None, hess=None, curvature=None, validate=True, seed=0):
        super().__init__(m)
        z, zb = _expr.complex_symbols(m)
        names = {s.name: s for s in (*z, *zb)}

        def parse(text):
            e = _expr.parse(text, list(names.values())) if isinstance(text, str) else sp.sympify(text)
            extra = e.free_symbols - set(names.values())
            if extra:
                raise ConfigError(f"potential uses unknown symbols {sorted(s.name for s in extra)}")
            return e

        self._source = {"potential": str(potential)}
        Kexpr = parse(potential)
        gexpr = [parse(t) for t in grad] if grad is not None else [sp.diff(Kexpr, z[j]) for j in range(m)]
        if hess is not None:
            hexpr = [[parse(t) for t in row] for row in hess]
        else:
            hexpr = [[sp.diff(gexpr[j], z[q]) for q in range(m)] for j in range(m)]
        if curvature is not None:
            cexpr = [[parse(t) for t in row] for row in curvature]
        else:
            cexpr = [[sp.diff(gexpr[j], zb[q]) for q in range(m)] for j in range(m)]
        for label, given in (("grad", grad), ("hess", hess), ("curvature", curvature)):
            if given is not None:
                self._source[label] = given
        self._K = _expr.complex_function(Kexpr, z, zb)
        self._g = [_expr.complex_function(e, z, zb) for e in gexpr]
        self._h = [[_expr.complex_function(e, z, zb) for e in row] for row in hexpr]
        self._c = [[_expr.complex_function(e, z, zb) for e in row] for row in cexpr]
        if validate:
            validate_model(self, seed=seed)

    def describe(self):
        return {"kind": self.kind, "m": self.m, **self._source}

    def potential(self, Z):
        return self._K(_points(Z, self.m)).real

    def grad_potential(self, Z):
        Z = _points(Z, self.m)
        return np.stack([g(Z) for g in self._g], axis=-1)

    def hess_potential(self, Z):
        Z = _points(Z, self.m)
        return np.stack([np.stack([h(Z) for h in row], axis=-1) for row in self._h], axis=-2)

    def curvature(self, Z):
        Z = _points(Z, self.m)
        return np.stack([np.stack([c(Z) for c in row], axis=-1) for row in self._c], axis=-2)


def wirtinger(F, Z, h=1e-5):
    """Central-difference Wirtinger derivatives of F at a single point.

    Returns (dF/dZ_j, dF/dZbar_j) stacked on a new last axis of length m.
    """
    Z = np.asarray(Z, dtype=complex)
    m = Z.shape[-1]
    d, db = [], []
    for j in range(m):
        e = np.zeros(m, dtype=complex)
        e[j] = h
        dx = (F(Z + e) - F(Z - e)) / (2 * h)
        dy = (F(Z + 1j * e) - F(Z - 1j * e)) / (2 * h)
        d.append((dx - 1j * dy) / 2)
        db.append((dx + 1j * dy) / 2)
    return np.stack(d, axis=-1), np.stack(db, axis=-1)


def validate_model(model, n_points=100, seed=0, radius=0.8, tol=1e-6):
    """Finite-difference check of every derivative evaluator at random chart points."""
    rng = as_generator(seed, "model-check")
    m = model.m
    Zs = radius * (rng.uniform(-1, 1, size=(n_points, m)) + 1j * rng.uniform(-1, 1, size=(n_points, m)))
    for Z in Zs:
        gK = model.grad_potential(Z)
        dK, _ = wirtinger(lambda w: model.potential(w).astype(complex), Z)
        _fd_check("grad_potential", gK, dK, Z, tol)
        dg, dgb = wirtinger(model.grad_potential, Z)
        _fd_check("hess_potential", model.hess_potential(Z), dg, Z, tol)
        theta = model.curvature(Z)
        _fd_check("curvature", theta, dgb, Z, tol)
        if not np.allclose(theta, np.conj(theta.T), atol=tol):
            raise ConfigError(f"curvature is not Hermitian at {Z.tolist()}")


def _fd_check(name, exact, approx, Z, tol):
    if not np.all(np.isfinite(exact)):
        raise ConfigError(f"{name} is not finite at {Z.tolist()}")
    err = np.max(np.abs(exact - approx)) / max(1.0, np.max(np.abs(exact)))
    if err > tol:
        raise ConfigError(f"{name} disagrees with finite differences ({err:.2e}) at {Z.tolist()}")


# ------------------------------------------------------------------ sections


class HoloSection:
    """Holomorphic function f on a chart with first and second derivatives."""

    m: int
    scale: float = 1.0

    def eval(self, Z):
        raise NotImplementedError

    def grad(self, Z):
        raise NotImplementedError

    def hess(self, Z):
        raise NotImplementedError

    def __call__(self, Z):
        return self.eval(Z)


class PolySection(HoloSection):
    """Polynomial sum_alpha c_alpha Z^alpha."""

    def __init__(self, m, terms):
        self.m = int(m)
        merged = {}
        for alpha, c in (terms.items() if isinstance(terms, dict) else terms):
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.m or min(alpha, default=0) < 0:
                raise InputError(f"multi-index {alpha} does not fit dimension {self.m}")
            merged[alpha] = merged.get(alpha, 0) + complex(c)
        self.terms = {a: c for a, c in sorted(merged.items()) if c != 0}
        self.exps = np.array(list(self.terms.keys()), dtype=np.int64).reshape(-1, self.m)
        self.coeffs = np.array(list(self.terms.values()), dtype=complex)
        self.scale = float(np.abs(self.coeffs).max()) if len(self.coeffs) else 0.0
        self._grad = None
        self._hess = None

    @classmethod
    def from_records(cls, m, records):
        """Records are [multi-index, re, im] triples as stored in config files."""
        terms = []
        for rec in records:
            if len(rec) != 3:
                raise ConfigError(f"polynomial term must be [multi-index, re, im], got {rec!r}")
            alpha, re, im = rec
            alpha = [alpha] if isinstance(alpha, int) else alpha
            terms.append((alpha, complex(float(re), float(im))))
        return cls(m, terms)

    def to_records(self):
        return [[list(a), c.real, c.imag] for a, c in self.terms.items()]

    def derivative(self, j):
        terms = {}
        for alpha, c in self.terms.items():
            if alpha[j] > 0:
                beta = list(alpha)
                beta[j] -= 1
                terms[tuple(beta)] = c * alpha[j]
        return PolySection(self.m, terms)

    def _derivs(self):
        if self._grad is None:
            self._grad = [self.derivative(j) for j in range(self.m)]
            self._hess = [[g.derivative(q) for q in range(self.m)] for g in self._grad]
        return self._grad, self._hess

    def eval(self, Z):
        Z = _points(Z, self.m)
        if not len(self.coeffs):
            return np.zeros(Z.shape[:-1], dtype=complex)
        powers = np.prod(Z[..., None, :] ** self.exps, axis=-1)
        return powers @ self.coeffs

    def grad(self, Z):
        g, _ = self._derivs()
        return np.stack([gj.eval(Z) for gj in g], axis=-1)

    def hess(self, Z):
        _, h = self._derivs()
        return np.stack([np.stack([hjq.eval(Z) for hjq in row], axis=-1) for row in h], axis=-2)

    def __repr__(self):
        return f"PolySection(m={self.m}, terms={self.terms})"


class ExprSection(HoloSection):
    """Section given by a sympy expression (or string) in z0, z1, ..."""

    def __init__(self, m, expr, scale=1.0):
        self.m = int(m)
        z, _ = _expr.complex_symbols(m)
        e = _expr.parse(expr, z) if isinstance(expr, str) else sp.sympify(expr)
        extra = e.free_symbols - set(z)
        if extra:
            raise ConfigError(f"section uses unknown symbols {sorted(s.name for s in extra)}")
        self.expr = e
        self.scale = float(scale)
        self._f = _expr.complex_function(e, z)
        self._g = [_expr.complex_function(sp.diff(e, z[j]), z) for j in range(m)]
        self._h = [[_expr.complex_function(sp.diff(e, z[j], z[q]), z) for q in range(m)] for j in range(m)]

    def eval(self, Z):
        return self._f(_points(Z, self.m))

    def grad(self, Z):
        Z = _points(Z, self.m)
        return np.stack([g(Z) for g in self._g], axis=-1)

    def hess(self, Z):
        Z = _points(Z, self.m)
        return np.stack([np.stack([h(Z) for h in row], axis=-1) for row in self._h], axis=-2)


class LinearCombination(HoloSection):
    """sum_a G_a f_a with real coefficients G."""

    def __init__(self, basis, coeffs):
        self.basis = list(basis)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.m = self.basis[0].m
        self.scale = float(sum(abs(c) * b.scale for c, b in zip(self.coeffs, self.basis)))

    def _combine(self, method, Z):
        out = 0
        for c, b in zip(self.coeffs, self.basis):
            if c:
                out = out + c * getattr(b, method)(Z)
        if isinstance(out, int):
            shape = {"eval": (), "grad": (self.m,), "hess": (self.m, self.m)}[method]
            return np.zeros(np.shape(Z)[:-1] + shape, dtype=complex)
        return out

    def eval(self, Z):
        return self._combine("eval", Z)

    def grad(self, Z):
        return self._combine("grad", Z)

    def hess(self, Z):
        return self._combine("hess", Z)


def combine(basis, coeffs):
    """Real-linear combination; stays polynomial when every basis element is."""
    if all(isinstance(b, PolySection) for b in basis):
        m = basis[0].m
        terms = []
        for c, b in zip(coeffs, basis):
            terms += [(a, float(c) * v) for a, v in b.terms.items()]
        return PolySection(m, terms)
    return LinearCombination(basis, coeffs)


# ------------------------------------------------------------ covariant calculus


def _check_domain(model, Z):
    K = model.potential(Z)
    if not np.all(np.isfinite(K)):
        raise DomainError(f"Kähler potential is not finite at {np.asarray(Z).tolist()}")


def covariant_gradient(model, f, Z):
    """df/dZ_j - f dK/dZ_j."""
    Z = _points(Z, model.m)
    _check_domain(model, Z)
    return f.grad(Z) - f.eval(Z)[..., None] * model.grad_potential(Z)


def curvature(model, Z):
    Z = _points(Z, model.m)
    _check_domain(model, Z)
    return model.curvature(Z)


def gradient_jacobian(model, f, Z):
    """Wirtinger Jacobian of Z -> covariant gradient, valid at any point.

    Returns (A, B) with A_jq = d(grad_j)/dZ_q and B_jq = d(grad_j)/dZbar_q
    = -f Theta_jq.  At a critical point A equals H'.
    """
    Z = _points(Z, model.m)
    fv = f.eval(Z)[..., None, None]
    fg = f.grad(Z)
    Kg = model.grad_potential(Z)
    A = f.hess(Z) - Kg[..., :, None] * fg[..., None, :] - fv * model.hess_potential(Z)
    B = -fv * model.curvature(Z)
    return A, B


@dataclass
class ComplexHessian:
    hprime: np.ndarray
    hdoubleprime: np.ndarray

    @property
    def m(self):
        return self.hprime.shape[-1]

    @property
    def assembled(self):
        hp, hpp = self.hprime, self.hdoubleprime
        return np.block([[hp, hpp], [np.conj(hpp), np.conj(hp)]])

    @property
    def det(self):
        # The assembled matrix is the complex form of a real Jacobian, so its
        # determinant is real up to rounding.
        return float(np.linalg.det(self.assembled).real)

    @property
    def absdet(self):
        return abs(self.det)

    @property
    def scale(self):
        return float(np.abs(self.assembled).max())


def complex_hessian(model, f, Z, tol_crit=TOL_CRIT):
    """H' and H'' = -f(Z) Theta at a critical point Z."""
    Z = _points(Z, model.m)
    if Z.ndim != 1:
        raise InputError("complex_hessian takes a single point")
    g = covariant_gradient(model, f, Z)
    gn = float(np.linalg.norm(g))
    if gn > tol_crit * max(1.0, f.scale):
        raise NotCriticalError(f"gradient norm {gn:.3e} exceeds tol_crit at {Z.tolist()}", gradnorm=gn)
    fz = f.eval(Z)
    Kg = model.grad_potential(Z)
    hp = f.hess(Z) - fz * (model.hess_potential(Z) + np.outer(Kg, Kg))
    hpp = -fz * model.curvature(Z)
    return ComplexHessian(hp, hpp)


def log_norm(model, f, Z):
    """log |s(Z)|_h = log |f| - K/2; its critical points off the zero set coincide with those of s."""
    return np.log(np.abs(f.eval(Z))) - model.potential(Z) / 2


def frame_change(model, f, g):
    """(model', f') for the frame change f -> e^g f, K -> K + g + conj(g); ``g`` is an expression in z."""
    m = model.m
    z, zb = _expr.complex_symbols(m)
    gexpr = _expr.parse(g, z) if isinstance(g, str) else sp.sympify(g)
    gbar = _conjugate_coefficients(gexpr, z, zb)
    if isinstance(f, PolySection):
        fexpr = sum(c * sp.prod([z[j] ** a[j] for j in range(m)]) for a, c in f.terms.items())
    elif isinstance(f, ExprSection):
        fexpr = f.expr
    else:
        raise InputError("frame_change needs a polynomial or expression section")
    if isinstance(model, FlatModel):
        Kexpr = sum(z[j] * zb[j] for j in range(m))
    elif isinstance(model, ProjectiveModel):
        Kexpr = model.N * sp.log(1 + sum(z[j] * zb[j] for j in range(m)))
    elif isinstance(model, CustomModel):
        Kexpr = _expr.parse(model._source["potential"], [*z, *zb])
    else:
        raise InputError("frame_change does not know this model")
    new_model = CustomModel(m, Kexpr + gexpr + gbar, validate=False)
    new_f = ExprSection(m, sp.exp(gexpr) * fexpr, scale=f.scale)
    return new_model, new_f


def _conjugate_coefficients(expr, z, zb):
    """conj(g(z)) written as a function of zb: conjugate numbers, rename z -> zb."""
    return expr.xreplace({z[j]: zb[j] for j in range(len(z))}).xreplace({sp.I: -sp.I})


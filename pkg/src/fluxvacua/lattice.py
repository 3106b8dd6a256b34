"""Lattice points in dilated star-shaped shells and their radial sums.

The shell of level ``L`` for a body ``Q`` is the set of nonzero integer
vectors ``k`` with ``|k|_Q <= sqrt(L)``.  ``radial_sum`` adds a degree-0
homogeneous observable over that shell, ``leading_coefficient`` computes the
volume-type integral that governs its growth, and ``remainder_exponent_fit``
measures how fast the difference between the two grows.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, stats

from . import _expr
from ._parallel import ordered_map
from ._rng import as_generator
from .errors import (
    CapacityError,
    DegenerateFitError,
    EvaluationError,
    InputError,
    ToleranceError,
)

MAX_COORDINATE = 2**31 - 1


@dataclass(frozen=True, eq=False)
class StarBody:
    """Star-shaped body given by its gauge (Minkowski functional).

    ``gauge_fn`` maps an array of shape (k, dim) to k nonnegative reals.
    ``extent`` holds the half-widths of the unit body along each axis and
    drives the bounding box used for enumeration.
    """

    dim: int
    gauge_fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    matrix: np.ndarray | None = None
    extent: np.ndarray | None = None
    label: str = ""

    @classmethod
    def ellipsoid(cls, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InputError("ellipsoid matrix must be square")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise InputError("ellipsoid matrix must be symmetric")
        A = (A + A.T) / 2
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise InputError(
                f"ellipsoid matrix is not positive definite (eigenvalues {np.linalg.eigvalsh(A)})"
            ) from None
        A.setflags(write=False)

        def gauge(X):
            return np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", X, A, X), 0.0))

        extent = np.sqrt(np.diag(np.linalg.inv(A)))
        return cls(A.shape[0], gauge, "ellipsoid", A, extent, label=f"ellipsoid{A.shape[0]}")

    @classmethod
    def ball(cls, dim):
        return cls.ellipsoid(np.eye(dim))

    @classmethod
    def custom(cls, dim, gauge, extent=None, validate=True, seed=0, label="custom"):
        """Body from an arbitrary gauge; ``gauge`` may be a callable or an expression in x0, x1, ..."""
        if isinstance(gauge, str):
            label = gauge
            gauge = _expr.real_function(gauge, dim)
        if validate:
            validate_gauge(gauge, dim, seed=seed)
        if extent is None:
            extent = estimate_extent(gauge, dim, seed=seed)
        extent = np.asarray(extent, dtype=float)
        if extent.shape != (dim,) or np.any(extent <= 0):
            raise InputError("extent must list one positive half-width per coordinate")
        return cls(dim, gauge, "custom", None, extent, label=label)

    def gauge(self, x):
        """|x|_Q for a single vector or a stack of shape (k, dim)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise InputError(f"expected vectors of dimension {self.dim}, got shape {x.shape}")
        if x.ndim == 1:
            return float(self.gauge_fn(x[None, :])[0])
        return self.gauge_fn(x)

    # Inside tests compare a "level" with a "threshold".  For ellipsoids the
    # level is the quadratic form itself, which is exact on integer input.
    def level(self, X):
        if self.kind == "ellipsoid":
            return np.einsum("...i,ij,...j->...", X, self.matrix, X)
        return self.gauge_fn(X)

    def threshold(self, L):
        return float(L) if self.kind == "ellipsoid" else math.sqrt(L)

    def contains(self, X, L):
        return self.level(np.asarray(X, dtype=float)) <= self.threshold(L)

    def volume(self):
        if self.kind != "ellipsoid":
            raise InputError("closed-form volume only for ellipsoids")
        n = self.dim
        return math.pi ** (n / 2) / math.gamma(n / 2 + 1) / math.sqrt(np.linalg.det(self.matrix))


def validate_gauge(gauge, dim, n_checks=200, seed=0, rtol=1e-9):
    """Randomised check of gauge(0)=0, positivity and positive homogeneity."""
    rng = as_generator(seed, "gauge-check")
    zero = np.asarray(gauge(np.zeros((1, dim))), dtype=float)
    if zero.shape != (1,) or abs(zero[0]) > 0:
        raise InputError(f"gauge(0) must be 0, got {zero}")
    X = rng.normal(size=(n_checks, dim))
    t = np.exp(rng.uniform(np.log(0.05), np.log(20.0), size=n_checks))
    gx = np.asarray(gauge(X), dtype=float)
    if not np.all(np.isfinite(gx)) or np.any(gx <= 0):
        bad = int(np.argmax(~(np.isfinite(gx) & (gx > 0))))
        raise InputError(f"gauge must be positive away from 0; fails at {X[bad].tolist()}")
    gtx = np.asarray(gauge(X * t[:, None]), dtype=float)
    err = np.abs(gtx - t * gx) / (t * gx)
    if np.any(err > rtol):
        bad = int(np.argmax(err))
        raise InputError(
            f"gauge is not positively homogeneous: |g(tx) - t g(x)|/(t g(x)) = {err[bad]:.3g} "
            f"at x={X[bad].tolist()}, t={t[bad]:.4g}"
        )


def estimate_extent(gauge, dim, n_dirs=20000, seed=0, margin=1.1):
    """Axis half-widths of {gauge <= 1} from boundary points on random rays, padded by ``margin``."""
    rng = as_generator(seed, "extent")
    U = rng.normal(size=(n_dirs, dim))
    U = np.vstack([U, np.eye(dim), -np.eye(dim)])
    g = np.asarray(gauge(U), dtype=float)
    boundary = U / g[:, None]
    return margin * np.abs(boundary).max(axis=0)


@dataclass(frozen=True, eq=False)
class RadialObservable:
    """Degree-0 homogeneous function on R^n minus the origin, vectorised over rows."""

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    sharp: bool = False

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return float(self.fn(X[None, :])[0])
        return np.asarray(self.fn(X), dtype=float)

    @classmethod
    def constant(cls, dim, value=1.0):
        value = float(value)
        return cls(dim, lambda X: np.full(X.shape[0], value), name=f"constant({value:g})")

    @classmethod
    def coordinate_ratio(cls, dim, index=0):
        """x_i^2 / |x|^2."""
        if not 0 <= index < dim:
            raise InputError(f"coordinate index {index} out of range for dim {dim}")
        return cls(
            dim,
            lambda X: X[:, index] ** 2 / np.einsum("ij,ij->i", X, X),
            name=f"x{index}^2/|x|^2",
        )

    @classmethod
    def cone_indicator(cls, dim, direction, half_angle):
        """Sharp indicator of the cone of directions within ``half_angle`` of ``direction``."""
        d = np.asarray(direction, dtype=float)
        if d.shape != (dim,) or not np.any(d):
            raise InputError("cone direction must be a nonzero vector of the right dimension")
        d = d / np.linalg.norm(d)
        cos_a = math.cos(half_angle)

        def fn(X):
            c = X @ d / np.linalg.norm(X, axis=1)
            return (c >= cos_a).astype(float)

        return cls(dim, fn, name=f"cone({half_angle:g})", sharp=True)

    @classmethod
    def expression(cls, dim, text, validate=True, seed=0):
        fn = _expr.real_function(text, dim)
        obs = cls(dim, fn, name=text)
        if validate:
            validate_homogeneous(obs, seed=seed)
        return obs


def validate_homogeneous(f, n_checks=200, seed=0, atol=1e-9):
    rng = as_generator(seed, "homogeneity")
    X = rng.normal(size=(n_checks, f.dim))
    t = np.exp(rng.uniform(np.log(0.05), np.log(20.0), size=n_checks))
    a, b = f(X), f(X * t[:, None])
    scale = np.maximum(1.0, np.abs(a))
    if not np.all(np.abs(a - b) <= atol * scale):
        raise InputError(f"observable {f.name!r} is not homogeneous of degree 0")


def homogenized(f, body):
    """The observable x -> f(x / |x|_Q); equal to f for degree-0 homogeneous f."""

    def fn(X):
        return f(X / body.gauge_fn(X)[:, None])

    return RadialObservable(f.dim, fn, name=f"{f.name}∘radial", sharp=f.sharp)


def gauge_norm(body, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (body.dim,):
        raise InputError(f"expected a vector of dimension {body.dim}, got shape {x.shape}")
    return body.gauge(x)


def _box_radius(body, L):
    if not L > 0:
        raise InputError(f"L must be positive, got {L}")
    reach = body.extent * math.sqrt(L)
    if not np.all(np.isfinite(reach)) or np.any(reach >= MAX_COORDINATE):
        raise CapacityError(f"bounding box for L={L:g} exceeds the coordinate range ±{MAX_COORDINATE}")
    return np.floor(reach).astype(np.int64)


def _slab_points(body, L, radius, a, rest):
    pts = np.empty((rest.shape[0], body.dim), dtype=np.int64)
    pts[:, 0] = a
    pts[:, 1:] = rest
    keep = body.contains(pts, L)
    if a == 0:
        keep &= np.any(pts != 0, axis=1)
    return pts[keep]


def _rest_box(radius):
    axes = [np.arange(-r, r + 1, dtype=np.int64) for r in radius[1:]]
    if not axes:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def enumerate_shell(body, L):
    """Yield the shell's integer vectors slab by slab (arrays of shape (k, dim)).

    Slabs run over the first coordinate in increasing order; within a slab the
    remaining coordinates are in lexicographic order.
    """
    radius = _box_radius(body, L)
    rest = _rest_box(radius)
    for a in range(-int(radius[0]), int(radius[0]) + 1):
        pts = _slab_points(body, L, radius, a, rest)
        if len(pts):
            yield pts


def shell_points(body, L):
    """All shell vectors as one (N, dim) array."""
    slabs = list(enumerate_shell(body, L))
    if not slabs:
        return np.zeros((0, body.dim), dtype=np.int64)
    return np.concatenate(slabs)


@dataclass
class ShellScanResult:
    L: float
    count: int
    sum: float
    elapsed: float = field(default=0.0, compare=False)


def _observable_values(f, pts):
    vals = f(pts.astype(float))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        k = pts[int(np.argmax(bad))]
        raise EvaluationError(f"observable {f.name!r} is not finite at {k.tolist()}", point=k.tolist())
    return vals


def _check_dims(body, f):
    if f.dim != body.dim:
        raise InputError(f"observable dimension {f.dim} does not match body dimension {body.dim}")


def radial_sum(body, f, L, workers=1):
    """S_f(L): sum of ``f`` over the shell of level ``L`` (exactly rounded with math.fsum)."""
    _check_dims(body, f)
    start = time.perf_counter()
    radius = _box_radius(body, L)
    rest = _rest_box(radius)

    def slab(a):
        pts = _slab_points(body, L, radius, a, rest)
        if not len(pts):
            return 0, []
        return len(pts), _observable_values(f, pts).tolist()

    parts = ordered_map(slab, range(-int(radius[0]), int(radius[0]) + 1), workers)
    count = sum(c for c, _ in parts)
    total = math.fsum(v for _, vals in parts for v in vals)
    return ShellScanResult(float(L), int(count), total, time.perf_counter() - start)


def radial_sum_series(body, f, L_grid, workers=1):
    """S_f(L) for every L in ``L_grid`` from a single enumeration at the largest level.

    Points are bucketed by the smallest grid level that contains them; each
    bucket is summed with fsum and the running totals are fsums of buckets.
    """
    _check_dims(body, f)
    start = time.perf_counter()
    Ls = np.asarray(sorted(set(float(v) for v in L_grid)))
    if len(Ls) == 0:
        raise InputError("empty L grid")
    Lmax = Ls[-1]
    thresholds = np.array([body.threshold(v) for v in Ls])
    radius = _box_radius(body, Lmax)
    rest = _rest_box(radius)
    nb = len(Ls)

    def slab(a):
        pts = _slab_points(body, Lmax, radius, a, rest)
        counts = np.zeros(nb, dtype=np.int64)
        buckets = [[] for _ in range(nb)]
        if len(pts):
            idx = np.searchsorted(thresholds, body.level(pts.astype(float)), side="left")
            vals = _observable_values(f, pts)
            counts += np.bincount(idx, minlength=nb)[:nb]
            order = np.argsort(idx, kind="stable")
            split = np.split(vals[order], np.cumsum(np.bincount(idx, minlength=nb))[:-1])
            for i, chunk in enumerate(split):
                if len(chunk):
                    buckets[i] = chunk.tolist()
        return counts, buckets

    parts = ordered_map(slab, range(-int(radius[0]), int(radius[0]) + 1), workers)
    counts = np.sum([c for c, _ in parts], axis=0)
    bucket_sums = [math.fsum(v for _, b in parts for v in b[i]) for i in range(nb)]
    elapsed = time.perf_counter() - start
    out = []
    for i, L in enumerate(Ls):
        out.append(
            ShellScanResult(float(L), int(counts[: i + 1].sum()), math.fsum(bucket_sums[: i + 1]), elapsed)
        )
    return out


@dataclass
class Estimate:
    value: float
    stderr: float = 0.0
    method: str = "quadrature"


def leading_coefficient(body, f, method="quadrature", n_samples=200_000, seed=0, tol=1e-8):
    """Integral of ``f`` over the unit body Q.

    ``quadrature`` integrates r(u)^n f(u) / n over the unit sphere, where
    r(u) = 1/|u|_Q, and is available for n <= 3.  ``monte-carlo`` samples the
    bounding box uniformly and reports a standard error.
    """
    _check_dims(body, f)
    n = body.dim
    if method == "quadrature":
        if n == 2:

            def integrand(theta):
                u = np.array([[math.cos(theta), math.sin(theta)]])
                return f(u)[0] / body.gauge_fn(u)[0] ** 2 / 2

            value, err = integrate.quad(integrand, 0.0, 2 * math.pi, limit=500, epsabs=tol / 10, epsrel=tol / 10)
        elif n == 3:

            def integrand(phi, theta):
                s = math.sin(theta)
                u = np.array([[s * math.cos(phi), s * math.sin(phi), math.cos(theta)]])
                return f(u)[0] / body.gauge_fn(u)[0] ** 3 / 3 * s

            value, err = integrate.dblquad(
                integrand, 0.0, math.pi, 0.0, 2 * math.pi, epsabs=tol / 10, epsrel=tol / 10
            )
        else:
            raise InputError("quadrature supports dimension 2 or 3; use method='monte-carlo'")
        if not err <= tol * max(1.0, abs(value)):
            raise ToleranceError(
                f"quadrature error estimate {err:.3g} above tolerance {tol:.3g}", estimate=value, error=err
            )
        return Estimate(float(value), 0.0, "quadrature")
    if method == "monte-carlo":
        if n_samples < 2:
            raise InputError("monte-carlo needs at least two samples")
        rng = as_generator(seed, "leading-coefficient")
        X = rng.uniform(-1.0, 1.0, size=(n_samples, n)) * body.extent
        inside = body.gauge_fn(X) <= 1.0
        vals = np.zeros(n_samples)
        vals[inside] = f(X[inside])
        box = float(np.prod(2 * body.extent))
        return Estimate(box * vals.mean(), box * vals.std(ddof=1) / math.sqrt(n_samples), "monte-carlo")
    raise InputError(f"unknown method {method!r}")


@dataclass
class ExponentFit:
    beta: float
    stderr: float
    band: tuple
    intercept: float
    n_points: int
    n_dropped: int = 0


def remainder_exponent_fit(L, S, c, n, min_points=6, min_decades=2.0, z=2.0):
    """Least-squares slope of log|S - c L^{n/2}| against log L.

    Points whose residual vanishes (to rounding) are dropped; if all vanish
    the series is exactly the leading term and ``DegenerateFitError`` is raised.
    """
    L = np.asarray(L, dtype=float)
    S = np.asarray(S, dtype=float)
    if L.shape != S.shape or L.ndim != 1:
        raise InputError("L and S must be one-dimensional and of equal length")
    if np.any(L <= 0):
        raise InputError("L values must be positive")
    if len(np.unique(L)) < min_points:
        raise InputError(f"need at least {min_points} distinct L values, got {len(np.unique(L))}")
    if math.log10(L.max() / L.min()) < min_decades:
        raise InputError(f"L values must span at least {min_decades:g} decades")
    lead = c * L ** (n / 2)
    resid = S - lead
    zero = np.abs(resid) <= 1e-12 * np.maximum(1.0, np.abs(S))
    if np.all(zero):
        raise DegenerateFitError("residuals vanish identically; nothing to fit")
    keep = ~zero
    if keep.sum() < 3:
        raise DegenerateFitError(f"only {int(keep.sum())} nonzero residuals")
    fit = stats.linregress(np.log(L[keep]), np.log(np.abs(resid[keep])))
    se = float(fit.stderr)
    return ExponentFit(
        float(fit.slope), se, (fit.slope - z * se, fit.slope + z * se), float(fit.intercept), int(keep.sum()),
        int(zero.sum()),
    )


def remainder_bound_exponent(n):
    """Remainder exponent n/2 - n/(n+1) for a smooth observable."""
    return n / 2 - n / (n + 1)

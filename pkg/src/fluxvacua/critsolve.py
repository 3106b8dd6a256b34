"""Critical points of sections and vacuum counts over integer flux families."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import geometry, lattice
from ._parallel import ordered_map
from ._rng import as_generator
from .errors import ContinuumWarning, InputError, SignatureError

TOL_DEG = 1e-8


@dataclass(frozen=True, eq=False)
class Region:
    """Compact region of C^m: a coordinate box, optionally cut down to a ball |Z| <= radius."""

    lo: np.ndarray
    hi: np.ndarray
    radius: float | None = None

    @classmethod
    def ball(cls, radius, m=1):
        r = float(radius)
        lo = np.full(m, -r - 1j * r)
        return cls(lo, -lo, r)

    disk = ball

    @classmethod
    def box(cls, re_lo, re_hi, im_lo, im_hi, m=1):
        lo = np.full(m, complex(re_lo, im_lo))
        hi = np.full(m, complex(re_hi, im_hi))
        if np.any(lo.real > hi.real) or np.any(lo.imag > hi.imag):
            raise InputError("box bounds are inverted")
        return cls(lo, hi, None)

    @property
    def m(self):
        return len(self.lo)

    @property
    def diameter(self):
        d = np.sqrt(np.sum((self.hi.real - self.lo.real) ** 2 + (self.hi.imag - self.lo.imag) ** 2))
        if self.radius is not None:
            d = min(d, 2 * self.radius)
        return float(d)

    @property
    def is_empty(self):
        return self.diameter == 0.0

    def contains(self, Z, pad=0.0):
        Z = np.atleast_2d(Z)
        ok = np.all(
            (Z.real >= self.lo.real - pad)
            & (Z.real <= self.hi.real + pad)
            & (Z.imag >= self.lo.imag - pad)
            & (Z.imag <= self.hi.imag + pad),
            axis=1,
        )
        if self.radius is not None:
            ok &= np.linalg.norm(Z, axis=1) <= self.radius + pad
        return ok

    def boundary_distance(self, Z):
        Z = np.atleast_2d(Z)
        gaps = np.concatenate(
            [Z.real - self.lo.real, self.hi.real - Z.real, Z.imag - self.lo.imag, self.hi.imag - Z.imag], axis=1
        )
        d = np.abs(gaps).min(axis=1)
        if self.radius is not None:
            d = np.minimum(d, np.abs(self.radius - np.linalg.norm(Z, axis=1)))
        return d

    def seeds(self, density, jitter=0.1, seed=0):
        """Uniform grid with ``density`` points per unit length per real axis, plus random jitter seeds."""
        axes = []
        for lo, hi in zip(self.lo, self.hi):
            for a, b in ((lo.real, hi.real), (lo.imag, hi.imag)):
                n = max(2, int(math.ceil((b - a) * density)) + 1)
                axes.append(np.linspace(a, b, n))
        grids = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=1)
        Z = flat[:, 0::2] + 1j * flat[:, 1::2]
        n_extra = int(math.ceil(jitter * len(Z)))
        if n_extra:
            rng = as_generator(seed, "newton-jitter")
            re = rng.uniform(self.lo.real, self.hi.real, size=(n_extra, self.m))
            im = rng.uniform(self.lo.imag, self.hi.imag, size=(n_extra, self.m))
            Z = np.vstack([Z, re + 1j * im])
        return Z[self.contains(Z)]

    def describe(self):
        return {"lo": [[z.real, z.imag] for z in self.lo], "hi": [[z.real, z.imag] for z in self.hi],
                "radius": self.radius}


@dataclass
class CriticalPoint:
    Z: np.ndarray
    gradnorm: float
    hessian: geometry.ComplexHessian
    degenerate: bool
    absdet: float
    on_boundary: bool = False


@dataclass
class CriticalSearch:
    """Outcome of ``find_critical_points``; iterates over the points found."""

    points: list
    continuum: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def boundary(self):
        return [p for p in self.points if p.on_boundary]


def is_degenerate(h, tol_deg=TOL_DEG):
    """True when |det H^c| is below tol_deg * (largest entry)^(2m)."""
    scale = h.scale
    if scale == 0.0:
        return True
    return h.absdet < tol_deg * scale ** (2 * h.m)


def _real_system(model, f, Z):
    g = geometry.covariant_gradient(model, f, Z)
    A, B = geometry.gradient_jacobian(model, f, Z)
    # d(grad) = A dZ + B dZbar with dZ = dx + i dy.
    Jx, Jy = A + B, 1j * (A - B)
    J = np.concatenate(
        [np.concatenate([Jx.real, Jy.real], axis=-1), np.concatenate([Jx.imag, Jy.imag], axis=-1)], axis=-2
    )
    F = np.concatenate([g.real, g.imag], axis=-1)
    return F, J


def newton(model, f, Z0, tol, max_iter=60, max_step=None, bound=None):
    """Damped Gauss-Newton on the real 2m-dimensional system, vectorised over seeds.

    Returns (Z, residual norm, status) with status 0 converged, 1 not
    converged, 2 singular Jacobian, 3 left ``bound``.
    """
    Z = np.array(Z0, dtype=complex, copy=True)
    k, m = Z.shape
    status = np.ones(k, dtype=int)
    active = np.ones(k, dtype=bool)
    F, J = _real_system(model, f, Z)
    res = np.linalg.norm(F, axis=1)
    polish = np.zeros(k, dtype=int)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        Fa, Ja = F[idx], J[idx]
        s = np.linalg.svd(Ja, compute_uv=False)
        singular = ~(s[:, 0] > 1e-300)
        step = -np.einsum("kij,kj->ki", np.linalg.pinv(Ja, rcond=1e-13), Fa)
        if max_step is not None:
            norm = np.linalg.norm(step, axis=1)
            step *= np.minimum(1.0, max_step / np.maximum(norm, 1e-300))[:, None]
        step = step[:, :m] + 1j * step[:, m:]
        t = np.ones(len(idx))
        newZ = Z[idx] + step
        newF, newJ = _real_system(model, f, newZ)
        newres = np.linalg.norm(newF, axis=1)
        for _ in range(8):
            worse = ~(newres <= res[idx]) & (newres > tol)
            if not worse.any():
                break
            t[worse] /= 2
            newZ[worse] = Z[idx][worse] + t[worse, None] * step[worse]
            nf, nj = _real_system(model, f, newZ[worse])
            newF[worse], newJ[worse], newres[worse] = nf, nj, np.linalg.norm(nf, axis=1)
        Z[idx], F[idx], J[idx], res[idx] = newZ, newF, newJ, newres
        bad = singular | ~np.isfinite(newres)
        status[idx[bad]] = 2
        active[idx[bad]] = False
        if bound is not None:
            out = ~bound(Z[idx])
            status[idx[out & ~bad]] = 3
            active[idx[out]] = False
        done = active[idx] & (newres <= tol)
        polish[idx[done]] += 1
        finished = idx[done & (polish[idx] >= 2)]
        status[finished] = 0
        active[finished] = False
    conv = active & (res <= tol)
    status[conv] = 0
    return Z, res, status


def _dedupe(Z, res, radius):
    order = np.lexsort((np.arange(len(Z)), res))
    kept = []
    for i in order:
        if all(np.linalg.norm(Z[i] - Z[j]) > radius for j in kept):
            kept.append(i)
    return sorted(kept, key=lambda i: tuple(np.concatenate([Z[i].real, Z[i].imag])))


def _critical_point(model, f, Z, region, r_dedupe, tol_crit, tol_deg):
    g = geometry.covariant_gradient(model, f, Z)
    gn = float(np.linalg.norm(g))
    h = geometry.complex_hessian(model, f, Z, tol_crit=tol_crit)
    on_b = bool(region.boundary_distance(Z)[0] <= r_dedupe)
    return CriticalPoint(np.array(Z), gn, h, is_degenerate(h, tol_deg), h.absdet, on_b)


def _non_isolated(model, f, point, tol, delta):
    """Probe along the Jacobian's null direction; landing on a different nearby critical point means a continuum."""
    _, J = _real_system(model, f, point.Z[None, :])
    _, _, vt = np.linalg.svd(J[0])
    v = vt[-1]
    m = len(point.Z)
    v = v[:m] + 1j * v[m:]
    for sign in (1, -1):
        start = point.Z + sign * delta * v
        Z, res, status = newton(model, f, start[None, :], tol)
        if status[0] == 0 and np.linalg.norm(Z[0] - point.Z) > delta / 2:
            return True
    return False


def find_critical_points(
    model,
    f,
    region,
    grid_density=2.0,
    tol_crit=geometry.TOL_CRIT,
    tol_deg=TOL_DEG,
    r_dedupe=None,
    jitter=0.1,
    seed=0,
    max_iter=60,
    warn=True,
):
    """All critical points of ``f`` in ``region`` found by Newton from a seed grid.

    Degenerate points are probed for a non-isolated critical set; when one is
    found ``continuum`` is set on the result and a ``ContinuumWarning`` issued.
    """
    if grid_density < 2:
        raise InputError("grid_density must be at least 2 per unit length")
    if region.m != model.m:
        raise InputError(f"region lives in C^{region.m} but the model in C^{model.m}")
    diag = {"seeds": 0, "converged": 0, "singular": 0, "escaped": 0, "unconverged": 0}
    if region.is_empty:
        return CriticalSearch([], False, diag)
    diam = region.diameter
    r_dedupe = 1e-6 * diam if r_dedupe is None else r_dedupe
    tol = tol_crit * max(1.0, f.scale)
    seeds = region.seeds(grid_density, jitter, seed)
    diag["seeds"] = len(seeds)
    if not len(seeds):
        return CriticalSearch([], False, diag)
    Z, res, status = newton(
        model, f, seeds, tol * 1e-3, max_iter=max_iter, max_step=diam / 2,
        bound=lambda W: region.contains(W, pad=diam),
    )
    ok = (status == 0) | ((status == 1) & (res <= tol))
    diag["singular"] = int(np.sum(status == 2))
    diag["escaped"] = int(np.sum(status == 3))
    diag["unconverged"] = int(np.sum(~ok & (status == 1)))
    inside = ok & region.contains(Z, pad=r_dedupe)
    diag["converged"] = int(ok.sum())
    Zc, rc = Z[inside], res[inside]
    points = [_critical_point(model, f, Zc[i], region, r_dedupe, tol_crit, tol_deg) for i in _dedupe(Zc, rc, r_dedupe)]
    continuum = any(_non_isolated(model, f, p, tol * 1e-3, 1e-3 * diam) for p in points if p.degenerate)
    if continuum and warn:
        warnings.warn(f"critical set of {f!r} appears non-isolated in the region", ContinuumWarning, stacklevel=2)
    return CriticalSearch(points, continuum, diag)


# ---------------------------------------------------------------- families


class SectionFamily:
    """Real-linear family G -> f_G = sum_a G_a f_a with a quadratic form Q[G] on fluxes."""

    def __init__(self, basis, qform):
        self.basis = list(basis)
        if not self.basis:
            raise InputError("a section family needs at least one basis section")
        ms = {b.m for b in self.basis}
        if len(ms) != 1:
            raise InputError("basis sections live on different dimensions")
        self.m = ms.pop()
        q = np.atleast_2d(np.asarray(qform, dtype=float))
        n = len(self.basis)
        if q.shape != (n, n):
            raise InputError(f"qform must be {n}x{n}")
        if not np.allclose(q, q.T, atol=1e-12 * max(1.0, np.abs(q).max())):
            raise InputError("qform must be symmetric")
        self.qform = (q + q.T) / 2
        ev = np.linalg.eigvalsh(self.qform)
        tol = 1e-12 * max(1.0, np.abs(ev).max())
        self.signature = (int(np.sum(ev > tol)), int(np.sum(ev < -tol)))

    @property
    def n(self):
        return len(self.basis)

    @property
    def positive_definite(self):
        return self.signature == (self.n, 0)

    def section(self, G):
        G = np.asarray(G, dtype=float)
        if G.shape != (self.n,):
            raise InputError(f"flux vector must have {self.n} entries")
        return geometry.combine(self.basis, G)

    def Q(self, G):
        G = np.asarray(G, dtype=float)
        return np.einsum("...i,ij,...j->...", G, self.qform, G)


@dataclass
class VacuumCensus:
    L: float
    fluxes_scanned: int
    vacua: list
    totals: dict
    degenerate_skipped: int = 0
    boundary_flagged: int = 0
    certified: bool = True
    continuum_fluxes: list = field(default_factory=list)
    note: str = ""
    degenerate_points: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.vacua)


def primitive(G):
    G = tuple(int(v) for v in G)
    d = reduce(math.gcd, (abs(v) for v in G), 0)
    return tuple(v // d for v in G) if d else G


def flux_shell(family, L, bound=None, bound_L=None):
    """Integer fluxes with 0 < Q[G] <= L in lexicographic order.

    For an indefinite form the shell is unbounded, so the scan is restricted
    to the shell of level ``bound_L`` of the compact ``bound`` body.
    """
    note = ""
    if family.positive_definite:
        G = lattice.shell_points(lattice.StarBody.ellipsoid(family.qform), L) if L > 0 else np.zeros((0, family.n))
    else:
        if bound is None:
            raise SignatureError(
                f"qform has signature {family.signature}; an indefinite shell needs a compact bound body",
                eigenvalues=np.linalg.eigvalsh(family.qform).tolist(),
            )
        bL = L if bound_L is None else bound_L
        G = lattice.shell_points(bound, bL)
        note = f"indefinite qform: scan truncated to the bound body at level {bL:g}"
    G = np.asarray(G, dtype=np.int64).reshape(-1, family.n)
    if len(G):
        q = family.Q(G)
        G = G[(q > 0) & (q <= L)]
        G = G[np.lexsort(G.T[::-1])]
    return G, note


def _psi_dict(psi):
    if psi is None:
        return {"count": lambda G, cp: 1.0}
    if callable(psi):
        return {"psi": psi}
    return dict(psi)


class _Solver:
    """Per-primitive-flux cache of critical point locations."""

    def __init__(self, family, model, region, options):
        self.family, self.model, self.region, self.options = family, model, region, options
        self.cache = {}

    def locations(self, p):
        if p not in self.cache:
            self.cache[p] = self._solve(p)
        return self.cache[p]

    def solve_many(self, prims, workers):
        todo = sorted({p for p in prims if p not in self.cache})
        found = ordered_map(lambda p: (p, self._solve(p)), todo, workers)
        self.cache.update(found)

    def _solve(self, p):
        res = find_critical_points(self.model, self.family.section(p), self.region, warn=False, **self.options)
        return [c.Z for c in res.points], res.continuum


def _census_entries(family, model, region, G, solver, tol_crit, tol_deg):
    f = family.section(G)
    locs, continuum = solver.locations(primitive(G))
    r_dedupe = 1e-6 * region.diameter
    entries = []
    for Z in locs:
        cp = _critical_point(model, f, Z, region, r_dedupe, tol_crit, tol_deg)
        # Re-validate with a fresh gradient evaluation for this G.
        g = geometry.covariant_gradient(model, f, Z)
        if np.linalg.norm(g) > tol_crit * max(1.0, f.scale):
            continue
        entries.append(cp)
    return entries, continuum


def count_vacua(
    family,
    model,
    L,
    region,
    psi=None,
    bound=None,
    bound_L=None,
    workers=1,
    tol_crit=geometry.TOL_CRIT,
    tol_deg=TOL_DEG,
    **solver_options,
):
    """N_psi(L): sum of psi over critical points in ``region`` of f_G for 0 < Q[G] <= L.

    ``psi`` is None (count), a callable psi(G, CriticalPoint) or a dict of
    named callables.  Degenerate critical points are skipped and tallied;
    fluxes whose critical set is a continuum make the census non-certified.
    """
    return census_series(
        family, model, [L], region, psi, bound, bound_L, workers, tol_crit, tol_deg, **solver_options
    )[-1]


def census_series(
    family,
    model,
    L_grid,
    region,
    psi=None,
    bound=None,
    bound_L=None,
    workers=1,
    tol_crit=geometry.TOL_CRIT,
    tol_deg=TOL_DEG,
    **solver_options,
):
    """``count_vacua`` for every level of ``L_grid``, sharing one solve per projective flux class."""
    if model.m != family.m:
        raise InputError("family and model dimensions differ")
    Ls = sorted(float(v) for v in L_grid)
    psis = _psi_dict(psi)
    Gall, note = flux_shell(family, Ls[-1], bound, bound_L)
    solver = _Solver(family, model, region, dict(tol_crit=tol_crit, tol_deg=tol_deg, **solver_options))
    solver.solve_many([primitive(G) for G in Gall], workers)
    per_flux = []
    for G in Gall:
        entries, continuum = _census_entries(family, model, region, G, solver, tol_crit, tol_deg)
        per_flux.append((G, float(family.Q(G)), entries, continuum))
    out = []
    for L in Ls:
        vacua, degenerate, flagged, bad = [], [], 0, []
        totals = {k: [] for k in psis}
        scanned = 0
        for G, q, entries, continuum in per_flux:
            if q > L:
                continue
            scanned += 1
            if continuum:
                bad.append(tuple(int(v) for v in G))
                continue
            for cp in entries:
                if cp.degenerate:
                    degenerate.append((tuple(int(v) for v in G), cp))
                    continue
                if cp.on_boundary:
                    flagged += 1
                vacua.append((tuple(int(v) for v in G), cp))
                for k, fn in psis.items():
                    totals[k].append(float(fn(G, cp)))
        out.append(
            VacuumCensus(
                L, scanned, vacua, {k: math.fsum(v) for k, v in totals.items()}, len(degenerate), flagged,
                not bad, bad, note, degenerate,
            )
        )
    return out


def sample_unit_shell(family, n_samples, seed=0):
    """Uniform samples of {Q[W] <= 1} (positive definite Q) and the region's volume."""
    if not family.positive_definite:
        raise SignatureError("density prediction needs a positive definite qform",
                             eigenvalues=np.linalg.eigvalsh(family.qform).tolist())
    n = family.n
    rng = as_generator(seed, "unit-shell")
    d = rng.normal(size=(n_samples, n))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = rng.uniform(size=n_samples) ** (1.0 / n)
    u = d * r[:, None]
    Lc = np.linalg.cholesky(family.qform)
    W = np.linalg.solve(Lc.T, u.T).T
    vol = math.pi ** (n / 2) / math.gamma(n / 2 + 1) / math.sqrt(np.linalg.det(family.qform))
    return W, vol


def density_integral(family, model, region, n_samples=2000, seed=0, psi=None, workers=1, **solver_options):
    """Monte Carlo estimate of the integral of <C_W, psi> over {Q[W] <= 1}.

    Returns (value, stderr).  Each sample solves for the critical points of
    f_W; ``psi`` must be homogeneous of degree 0 in W.
    """
    if region.is_empty:
        return 0.0, 0.0
    W, vol = sample_unit_shell(family, n_samples, seed)
    fn = (psi or (lambda G, cp: 1.0))

    def value(w):
        res = find_critical_points(model, family.section(w), region, warn=False, **solver_options)
        return math.fsum(fn(w, cp) for cp in res.points if not cp.degenerate)

    vals = np.array(ordered_map(value, list(W), workers))
    return vol * float(vals.mean()), vol * float(vals.std(ddof=1)) / math.sqrt(n_samples)


@dataclass
class DensityComparison:
    L: float
    N: float
    prediction: float
    ratio: float
    certified: bool


def census_vs_density(family, model, L_grid, region, psi=None, n_samples=2000, seed=0, workers=1, integral=None,
                      **solver_options):
    """Compare N(L) with L^{n/2} times the density integral; returns rows and the integral estimate."""
    if not family.positive_definite:
        raise SignatureError("census_vs_density requires a positive definite qform",
                             eigenvalues=np.linalg.eigvalsh(family.qform).tolist())
    censuses = census_series(family, model, L_grid, region, psi, workers=workers, **solver_options)
    if integral is None:
        integral = density_integral(family, model, region, n_samples, seed, psi, workers, **solver_options)
    value = integral[0] if isinstance(integral, tuple) else float(integral)
    rows = []
    for c in censuses:
        N = next(iter(c.totals.values())) if c.totals else 0.0
        pred = c.L ** (family.n / 2) * value
        rows.append(DensityComparison(c.L, N, pred, N / pred if pred else float("nan"), c.certified))
    return rows, integral

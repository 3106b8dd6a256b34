"""Eigenvalue/unitary-group representation of the critical-point density (m <= 2).

The lambda integral is done in closed form: against exp(-eps' lambda^2) the
needed transforms of |lambda| and lambda |lambda| are Dawson-function
expressions.  What remains is a regularized xi integral of

    Delta(xi) Psi(xi) exp(-eps |xi|^2) E_g[det(I + i Lambda P rho(g)* D(xi) rho(g))^(-1/2)]

with the Haar expectation taken by Monte Carlo over common samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import dawsn

from ._parallel import ordered_map
from ._rng import as_generator
from .density import hs_pairing
from .errors import ConvergenceError, InputError

DEFAULT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4)


def haar_unitary(m, seed=0, size=None):
    """Haar-distributed unitary via QR of a complex Ginibre matrix with the phases of diag(R) removed."""
    if m < 1:
        raise InputError("m must be at least 1")
    rng = as_generator(seed, "haar")
    shape = (1 if size is None else int(size), m, m)
    Z = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / math.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    Q = Q * (d / np.abs(d))[:, None, :]
    return Q[0] if size is None else Q


def rho_action(g, H, x):
    return g @ H @ g.T, x


def rho_adjoint(g, H, x):
    """Adjoint of rho(g) for the real Hilbert-Schmidt pairing."""
    return np.conj(g).T @ H @ np.conj(g), x


def dhat_action(xi, H, x):
    xi = np.asarray(xi, dtype=float)
    return (xi[:, None] + xi[None, :]) / 2 * H, -xi.sum() * x


def m_blocks(ens, g):
    """M_q(g)_ab = <rho(g)E_a, (e_q-weighted entries) rho(g)E_b>; sum_q xi_q M_q is the H-block of P rho* D rho."""
    m, k = ens.m, ens.k
    if not k:
        return np.zeros((m, 0, 0))
    K = np.einsum("ij,ajk,lk->ail", g, ens.E, g)
    eye = np.eye(m)
    out = np.empty((m, k, k))
    for q in range(m):
        w = (eye[q][:, None] + eye[q][None, :]) / 2
        out[q] = hs_pairing(K[:, None], w * K[None, :])
    return out


def _operator(ens, g, xi):
    """Real matrix of P rho(g)* D(xi) rho(g) on H_Z + C in orthonormal coordinates (x last)."""
    k = ens.k
    vecs = [(E, 0j) for E in ens.E] + [(np.zeros((ens.m, ens.m), complex), 1 + 0j),
                                       (np.zeros((ens.m, ens.m), complex), 1j)]
    T = np.zeros((k + 2, k + 2))
    for col, (H, x) in enumerate(vecs):
        H2, x2 = rho_adjoint(g, *dhat_action(xi, *rho_action(g, H, x)))
        T[:k, col] = hs_pairing(H2[None], ens.E) if k else []
        T[k:, col] = x2.real, x2.imag
    return T


@dataclass
class DenominatorReport:
    direct: complex
    factored: complex
    displayed: complex
    factored_deviation: float
    displayed_deviation: float


def denominator_det(ens, g, xi):
    """det(I + i Lambda P rho(g)* D(xi) rho(g)) directly, plus two factored forms for comparison.

    ``factored`` is (1 - i sum xi)^2 det(I + i C M_H); ``displayed`` is the
    form (1 - sum xi) det(C M_H + I) with no i in either factor.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (ens.m,):
        raise InputError(f"xi must have {ens.m} entries")
    k = ens.k
    Lam = np.eye(k + 2)
    Lam[:k, :k] = ens.C
    direct = complex(np.linalg.det(np.eye(k + 2) + 1j * Lam @ _operator(ens, g, xi)))
    MH = np.einsum("q,qab->ab", xi, m_blocks(ens, g))
    s = xi.sum()
    hdet_i = complex(np.linalg.det(np.eye(k) + 1j * ens.C @ MH)) if k else 1.0
    hdet = complex(np.linalg.det(np.eye(k) + ens.C @ MH)) if k else 1.0
    factored = (1 - 1j * s) ** 2 * hdet_i
    displayed = complex((1 - s) * hdet)
    scale = max(abs(direct), 1e-300)
    return DenominatorReport(direct, complex(factored), displayed, float(abs(factored - direct) / scale),
                             float(abs(displayed - direct) / scale))


# ---------------------------------------------------------------- lambda transforms


def transform_abs(xi, a):
    """int |l| e^{i xi l} e^{-a l^2} dl."""
    u = xi / (2 * np.sqrt(a))
    return 1 / a - xi / a**1.5 * dawsn(u)


def transform_signed(xi, a):
    """int l|l| e^{i xi l} e^{-a l^2} dl."""
    u = xi / (2 * np.sqrt(a))
    D = dawsn(u)
    return 2j * (0.5 * a**-1.5 * D + xi / 4 * a**-2 * (1 - 2 * u * D))


def lambda_kernel(X, a):
    """Integral over lambda of Delta(lambda) prod|lambda_j| e^{i<xi,lambda>} e^{-a|lambda|^2}, for m in {1, 2}."""
    if X.shape[0] == 1:
        return transform_abs(X[0], a)
    return transform_signed(X[0], a) * transform_abs(X[1], a) - transform_abs(X[0], a) * transform_signed(X[1], a)


# ---------------------------------------------------------------- quadrature


def panel_grid(xi_min, xi_max, nodes=10):
    """Symmetric composite Gauss-Legendre rule on [-xi_max, xi_max] with geometrically doubling panels."""
    if not 0 < xi_min < xi_max:
        raise InputError("need 0 < xi_min < xi_max")
    br = [0.0]
    s = xi_min
    while s < xi_max:
        br.append(s)
        s *= 2
    br.append(xi_max)
    x, w = np.polynomial.legendre.leggauss(nodes)
    lo, hi = np.array(br[:-1]), np.array(br[1:])
    n = ((hi - lo)[:, None] * x + (hi + lo)[:, None]) / 2
    wt = (hi - lo)[:, None] / 2 * w
    n, wt = n.ravel(), wt.ravel()
    return np.concatenate([-n[::-1], n]), np.concatenate([wt[::-1], wt])


def richardson(h, values, order=2):
    """Extrapolate values(h) to h = 0 with a degree-``order`` polynomial through the last order+1 points.

    Returns (estimate, window estimates) where the windows slide along the schedule.
    """
    h = np.asarray(h, dtype=float)
    v = np.asarray(values)
    if len(h) < order + 1:
        raise InputError(f"need at least {order + 1} schedule points")
    windows = []
    for i in range(len(h) - order):
        hs, vs = h[i:i + order + 1], v[i:i + order + 1]
        V = np.vander(hs, order + 1)
        windows.append(np.linalg.solve(V, vs)[-1])
    return windows[-1], windows


@dataclass
class IzhcConfig:
    m: int
    eps: tuple = DEFAULT_SCHEDULE
    eps_prime: tuple = DEFAULT_SCHEDULE
    xi_grid: tuple | None = None
    n_haar: int = 32
    seed: int = 0
    xi_max: float = 2e3
    panel_nodes: int = 10
    order: int = 2
    tol: float = 2e-2
    workers: int = 1

    def __post_init__(self):
        if self.m not in (1, 2):
            raise InputError("only m in {1, 2} is supported")
        for name in ("eps", "eps_prime"):
            sched = tuple(float(v) for v in getattr(self, name))
            if not sched or min(sched) <= 0:
                raise InputError(f"{name} schedule must be positive")
            if any(b >= a for a, b in zip(sched, sched[1:])):
                raise InputError(f"{name} schedule must be strictly decreasing")
            setattr(self, name, sched)
        if self.n_haar < 2:
            raise InputError("n_haar must be at least 2")
        if self.xi_grid is None:
            self.xi_grid = panel_grid(math.sqrt(min(self.eps_prime)) / 8, self.xi_max, self.panel_nodes)
        nodes, weights = (np.asarray(a, dtype=float) for a in self.xi_grid)
        if nodes.shape != weights.shape or not np.allclose(nodes, -nodes[::-1], rtol=0, atol=1e-12):
            raise InputError("xi grid must be symmetric about 0")
        if nodes.max() < 6 / math.sqrt(2 * min(self.eps)):
            raise InputError("xi grid must cover 6 standard deviations of exp(-eps xi^2)")
        self.xi_grid = (nodes, weights)


@dataclass
class IzhcResult:
    value: float
    haar_stderr: float
    regularization_trace: list
    raw_value: float
    normalization: float
    eps_prime_limits: list
    denominator: list = field(default_factory=list)


def _phi(ens, g, X):
    """Haar integrand det(I + i Lambda T)^(-1/2), factor by factor on the principal branch."""
    s = X.sum(axis=0)
    out = 1 / (1 - 1j * s)
    if ens.k:
        M = m_blocks(ens, g)
        Ms = np.einsum("ab,qbc,cd->qad", ens.L_C.T, M, ens.L_C)
        S = np.einsum("q...,qab->...ab", X, Ms)
        ev = np.linalg.eigvalsh(S)
        # Each factor 1 + i s has positive real part, so the product of principal roots is continuous in xi.
        out = out * np.prod(1 / np.sqrt(1 + 1j * ev), axis=-1)
    return out


def izhc_density(ens, cfg):
    if cfg.m != ens.m:
        raise InputError(f"config m={cfg.m} does not match the ensemble's m={ens.m}")
    m = ens.m
    nodes, weights = cfg.xi_grid
    X = np.stack(np.meshgrid(*([nodes] * m), indexing="ij"))
    W = math.prod(np.meshgrid(*([weights] * m), indexing="ij"))
    vand = X[0] - X[1] if m == 2 else 1.0
    sq = np.sum(X**2, axis=0)
    pairs = [(e, ep) for ep in cfg.eps_prime for e in cfg.eps]
    kernels = {ep: W * vand * lambda_kernel(X, ep) for ep in cfg.eps_prime}
    weights_pairs = np.stack([(kernels[ep] * np.exp(-e * sq)).ravel() for e, ep in pairs])

    gs = haar_unitary(m, as_generator(cfg.seed, "izhc"), size=cfg.n_haar)
    J = np.array(ordered_map(lambda g: weights_pairs @ _phi(ens, g, X).ravel(), list(gs), cfg.workers))

    prefactor = (-1j) ** (m * (m - 1) // 2)
    norm = 2**m * math.prod(math.factorial(j) for j in range(1, m + 1)) * math.factorial(ens.b3) * math.sqrt(ens.detC)
    vals = np.real(prefactor * J) / norm  # (n_haar, n_pairs)
    mean = vals.mean(axis=0)
    trace = [(e, ep, float(v)) for (e, ep), v in zip(pairs, mean)]

    ne = len(cfg.eps)
    inner, inner_g = [], []
    for i, ep in enumerate(cfg.eps_prime):
        block = vals[:, i * ne:(i + 1) * ne]
        est, windows = richardson(cfg.eps, block.mean(axis=0), cfg.order)
        _check_cauchy(windows, cfg.tol, trace, f"eps -> 0 at eps'={ep:g}")
        inner.append(float(est))
        inner_g.append(richardson(cfg.eps, block.T, cfg.order)[0])
    value, windows = richardson(cfg.eps_prime, inner, cfg.order)
    _check_cauchy(windows, cfg.tol, trace, "eps' -> 0")
    per_g = richardson(cfg.eps_prime, np.array(inner_g), cfg.order)[0]
    stderr = float(np.std(per_g, ddof=1) / math.sqrt(cfg.n_haar))

    # Same integral under the displayed constant c_m = (-i)^{m(m-1)/2} / (2^m pi^{2m} prod j!).
    raw = float(value) * norm / (2**m * math.pi ** (2 * m) * math.prod(math.factorial(j) for j in range(1, m + 1)))
    rng = as_generator(cfg.seed, "denominator")
    report = [denominator_det(ens, gs[0], rng.normal(scale=2.0, size=m)) for _ in range(5)]
    return IzhcResult(float(value), stderr, trace, raw, float(norm), inner, report)


def _check_cauchy(windows, tol, trace, what):
    if len(windows) < 2:
        return
    a, b = float(windows[-2]), float(windows[-1])
    if abs(a - b) > tol * max(abs(b), 1e-300):
        raise ConvergenceError(f"Richardson extrapolation for {what} did not settle: {a!r} vs {b!r}", trace=trace)

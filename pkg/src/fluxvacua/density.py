"""Gaussian Hessian ensembles built from Yukawa data and the critical-point density.

Coordinates: the Hessian space H_Z carries the real Hilbert-Schmidt pairing
Re tr(A B*).  ``HessianEnsemble.E`` is an orthonormal basis for that pairing
and the covariance ``C`` acts on coordinates in this basis; dH is Lebesgue
measure in these coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from ._rng import stream
from .errors import InputError, SignatureError

MIN_SAMPLES = 1000
CHUNK = 10_000


@dataclass(frozen=True, eq=False)
class YukawaData:
    h21: int
    F: tuple = ()

    def __post_init__(self):
        if int(self.h21) != self.h21 or self.h21 < 0:
            raise InputError("h21 must be a nonnegative integer")
        F = tuple(np.asarray(f, dtype=complex) for f in self.F)
        if len(F) != self.h21:
            raise InputError(f"expected {self.h21} Yukawa matrices, got {len(F)}")
        for j, f in enumerate(F):
            if f.shape != (self.h21, self.h21):
                raise InputError(f"F[{j}] must be {self.h21}x{self.h21}")
            if not np.allclose(f, f.T, rtol=0, atol=1e-12 * max(1.0, np.abs(f).max())):
                raise InputError(f"F[{j}] is not symmetric")
        object.__setattr__(self, "F", F)

    @property
    def m(self):
        return self.h21 + 1

    @property
    def b3(self):
        return 2 * self.h21 + 2

    @classmethod
    def random(cls, h21, seed=0, scale=1.0):
        rng = stream(seed, "yukawa", h21)
        F = []
        for _ in range(h21):
            a = rng.normal(size=(h21, h21)) + 1j * rng.normal(size=(h21, h21))
            F.append(scale * (a + a.T) / 2)
        return cls(h21, tuple(F))


def hessian_basis(y):
    """Real spanning set of H_Z: for each j the pair with first row e_j, i e_j and lower block F^j, -i F^j."""
    m = y.m
    out = []
    for j in range(y.h21):
        for phase in (1.0, 1j):
            B = np.zeros((m, m), dtype=complex)
            B[0, j + 1] = B[j + 1, 0] = phase
            B[1:, 1:] = np.conj(phase) * y.F[j]
            out.append(B)
    return out


def hs_pairing(A, B):
    """Real Hilbert-Schmidt pairing Re tr(A B*), broadcasting over leading axes."""
    return np.real(np.sum(A * np.conj(B), axis=(-2, -1)))


def gram(basis):
    k = len(basis)
    if not k:
        return np.zeros((0, 0))
    Bs = np.asarray(basis)
    return hs_pairing(Bs[:, None], Bs[None, :])


def _check_spd(M, what):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"{what} must be a square matrix")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0))):
        raise InputError(f"{what} must be symmetric")
    M = (M + M.T) / 2
    if M.size:
        ev = np.linalg.eigvalsh(M)
        if ev.min() <= 0:
            raise SignatureError(f"{what} is not positive definite", eigenvalues=ev.tolist())
    return M


def covariance_from_Q(basis, qform):
    """Covariance C (orthonormal coordinates) with (C^-1 H(w), H(w)) = qform[w] for H(w) = sum w_a basis_a.

    Returns (C, detC); detC is 1 for the empty basis.
    """
    G = gram(basis)
    k = len(G)
    q = _check_spd(np.atleast_2d(qform) if k else np.zeros((0, 0)), "qform")
    if q.shape != (k, k):
        raise InputError(f"qform must be {k}x{k}")
    if not k:
        return np.zeros((0, 0)), 1.0
    R = _upper_cholesky(G)
    C = R @ np.linalg.solve(q, R.T)
    C = (C + C.T) / 2
    return C, float(np.linalg.det(G) / np.linalg.det(q))


def _upper_cholesky(G):
    try:
        return np.linalg.cholesky(G).T
    except np.linalg.LinAlgError:
        raise InputError("basis matrices are not real-linearly independent") from None


@dataclass(eq=False)
class HessianEnsemble:
    yukawa: YukawaData
    basis: list
    E: np.ndarray
    R: np.ndarray
    C: np.ndarray
    detC: float
    L_C: np.ndarray = field(init=False)

    def __post_init__(self):
        self.L_C = np.linalg.cholesky(self.C) if self.k else np.zeros((0, 0))

    @property
    def m(self):
        return self.yukawa.m

    @property
    def b3(self):
        return self.yukawa.b3

    @property
    def k(self):
        return len(self.basis)

    @classmethod
    def _frame(cls, y):
        basis = hessian_basis(y)
        if not basis:
            return basis, np.zeros((0, y.m, y.m), dtype=complex), np.zeros((0, 0))
        R = _upper_cholesky(gram(basis))
        E = np.einsum("bij,ba->aij", np.asarray(basis), np.linalg.inv(R))
        return basis, E, R

    @classmethod
    def from_qform(cls, y, qform):
        basis, E, R = cls._frame(y)
        C, detC = covariance_from_Q(basis, qform)
        return cls(y, basis, E, R, C, detC)

    @classmethod
    def from_covariance(cls, y, C):
        """C is given directly in the orthonormal coordinates of ``E``."""
        basis, E, R = cls._frame(y)
        C = _check_spd(np.atleast_2d(C) if basis else np.zeros((0, 0)), "covariance")
        if C.shape != (len(basis),) * 2:
            raise InputError(f"covariance must be {len(basis)}x{len(basis)}")
        return cls(y, basis, E, R, C, float(np.linalg.det(C)) if len(C) else 1.0)

    @classmethod
    def random(cls, h21, seed=0):
        """Random Yukawa data with a random SPD covariance (eigenvalues in [0.5, 2])."""
        y = YukawaData.random(h21, seed)
        k = 2 * h21
        rng = stream(seed, "covariance", h21)
        Q, _ = np.linalg.qr(rng.normal(size=(k, k))) if k else (np.zeros((0, 0)), None)
        C = (Q * rng.uniform(0.5, 2.0, size=k)) @ Q.T
        return cls.from_covariance(y, (C + C.T) / 2)

    def qform(self):
        """The flux quadratic form in basis coordinates implied by C."""
        if not self.k:
            return np.zeros((0, 0))
        return self.R.T @ np.linalg.solve(self.C, self.R)

    def hessian(self, v):
        """H = sum v_a E_a for orthonormal coordinates v of shape (..., k)."""
        v = np.asarray(v, dtype=float)
        if not self.k:
            return np.zeros(v.shape[:-1] + (self.m, self.m), dtype=complex)
        return np.einsum("...a,aij->...ij", v, self.E)

    def coordinates(self, H):
        return hs_pairing(np.asarray(H)[..., None, :, :], self.E)

    def defining_residual(self, n=200, seed=0):
        """Max relative residual of (C^-1 H(w), H(w)) = Q[w] over random basis coordinates w."""
        if not self.k:
            return 0.0
        rng = stream(seed, "defining-identity")
        w = rng.normal(size=(n, self.k))
        H = np.einsum("na,aij->nij", w, np.asarray(self.basis))
        v = self.coordinates(H)
        lhs = np.einsum("na,na->n", np.linalg.solve(self.C, v.T).T, v)
        rhs = np.einsum("na,ab,nb->n", w, self.qform(), w)
        return float(np.max(np.abs(lhs - rhs) / np.abs(rhs)))

    def describe(self):
        return {"h21": self.yukawa.h21, "m": self.m, "b3": self.b3, "detC": self.detC}


def integrand(ens, v, x):
    """|det(H*H - |x|^2 I)| evaluated through the eigenvalues of H*H."""
    H = ens.hessian(v)
    P = np.conj(np.swapaxes(H, -1, -2)) @ H
    ev = np.linalg.eigvalsh(P)
    return np.abs(np.prod(ev - np.abs(x)[..., None] ** 2, axis=-1))


def _gaussian_coords(ens, rng, n):
    z = rng.normal(size=(n, ens.k))
    v = z @ ens.L_C.T / math.sqrt(2) if ens.k else z
    x = (rng.normal(size=n) + 1j * rng.normal(size=n)) / math.sqrt(2)
    return v, x


def _ball_coords(ens, rng, n):
    d = ens.b3
    g = rng.normal(size=(n, d))
    g /= np.linalg.norm(g, axis=1)[:, None]
    g *= (rng.uniform(size=n) ** (1.0 / d))[:, None]
    z, xr = g[:, : ens.k], g[:, ens.k:]
    v = z @ ens.L_C.T if ens.k else z
    return v, xr[:, 0] + 1j * xr[:, 1]


def sample_hessian(ens, seed=0, size=None):
    """Draw (H, x) with weight exp(-(C^-1 H, H) - |x|^2); ``size`` gives a batch."""
    rng = stream(seed, "sample-hessian")
    v, x = _gaussian_coords(ens, rng, 1 if size is None else int(size))
    H = ens.hessian(v)
    return (H[0], complex(x[0])) if size is None else (H, x)


@dataclass
class DensityEstimate:
    value: float
    stderr: float
    samples: int
    seed: int
    form: str


def _chunked(ens, N, seed, tag, draw, workers):
    if int(N) != N or N < MIN_SAMPLES:
        raise InputError(f"need at least {MIN_SAMPLES} samples")
    N = int(N)
    sizes = [CHUNK] * (N // CHUNK) + ([N % CHUNK] if N % CHUNK else [])

    def chunk(i):
        rng = stream(seed, tag, i)
        v, x = draw(ens, rng, sizes[i])
        return integrand(ens, v, x)

    vals = np.concatenate(ordered_map(chunk, range(len(sizes)), workers))
    return float(vals.mean()), float(vals.std(ddof=1)) / math.sqrt(N)


def pf_density_gaussian(ens, N=100_000, seed=0, workers=1):
    """pi^m E|det(H*H - |x|^2)| / (b3! sqrt(detC)) under the Gaussian ensemble."""
    mean, se = _chunked(ens, N, seed, "pf-gaussian", _gaussian_coords, workers)
    c = math.pi ** ens.m / (math.factorial(ens.b3) * math.sqrt(ens.detC))
    return DensityEstimate(c * mean, c * se, int(N), seed, "gaussian")


def pf_density_indicator(ens, N=100_000, seed=0, workers=1):
    """vol(ellipsoid) E|det(H*H - |x|^2)| / detC with uniform samples on {(C^-1 H,H) + |x|^2 <= 1}."""
    mean, se = _chunked(ens, N, seed, "pf-indicator", _ball_coords, workers)
    c = math.pi ** ens.m / math.factorial(ens.m) / math.sqrt(ens.detC)
    return DensityEstimate(c * mean, c * se, int(N), seed, "indicator")

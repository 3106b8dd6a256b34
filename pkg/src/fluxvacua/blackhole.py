"""Black-hole attractor densities: one-dimensional Hessian space, explicit moments of |x|^(2 b3)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from ._rng import stream
from .errors import InputError

FORMS = ("indicator", "gaussian")
METHODS = ("closed-form", "quadrature", "monte-carlo")
MIN_SAMPLES = 1000


@dataclass(frozen=True)
class AttractorConfig:
    """``formal=True`` admits any b3 >= 0 (used for the factorial-recursion checks)."""

    b3: int
    volWP: float = 1.0
    form: str = "gaussian"
    meromorphic: bool = False
    formal: bool = False

    def __post_init__(self):
        if int(self.b3) != self.b3 or self.b3 < 0:
            raise InputError("b3 must be a nonnegative integer")
        if not self.formal and (self.b3 < 2 or self.b3 % 2):
            raise InputError("b3 must be an even integer >= 2")
        if self.form not in FORMS:
            raise InputError(f"form must be one of {FORMS}")
        if not self.volWP > 0:
            raise InputError("volWP must be positive")


@dataclass
class Moment:
    value: float
    stderr: float
    method: str


def closed_form(b3, form):
    return math.pi * math.factorial(b3) if form == "gaussian" else math.pi / (b3 + 1)


def bh_density(cfg, method="closed-form", N=1_000_000, seed=0):
    """int_C |x|^(2 b3) w(x) dx with w = exp(-|x|^2) or the unit-disk indicator."""
    b3, form = cfg.b3, cfg.form
    if method == "closed-form":
        return Moment(closed_form(b3, form), 0.0, method)
    if method == "quadrature":
        # Polar coordinates with t = r^2: pi * int t^b3 w dt.
        if form == "gaussian":
            v, _ = quad(lambda t: t**b3 * math.exp(-t), 0, math.inf, epsabs=0, epsrel=1e-13, limit=200)
        else:
            v, _ = quad(lambda t: t**b3, 0, 1, epsabs=0, epsrel=1e-13)
        return Moment(math.pi * v, 0.0, method)
    if method == "monte-carlo":
        if int(N) != N or N < MIN_SAMPLES:
            raise InputError(f"monte-carlo needs N >= {MIN_SAMPLES}")
        rng = stream(seed, "bh-moment", b3, form)
        if form == "gaussian":
            # Importance sampling: t^b3 e^-t under an exponential proposal has a tail too heavy for a
            # reliable stderr, so draw t ~ Gamma(b3/2 + 1, scale 2); the weight is then bounded.
            a = b3 / 2 + 1
            t = rng.gamma(a, 2.0, size=int(N))
            vals = math.pi * np.exp(math.lgamma(a) + a * math.log(2.0) + b3 / 2 * np.log(t) - t / 2)
        else:
            vals = math.pi * rng.uniform(size=int(N)) ** b3
        return Moment(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(N)), method)
    raise InputError(f"method must be one of {METHODS}")


@dataclass
class CountEstimate:
    count: float
    log_count: float
    density_coefficient: float
    overflow: bool


def bh_count_estimate(cfg, L):
    """Leading count L^b3 volWP together with the density coefficient volWP / b3."""
    if not L > 0:
        raise InputError("L must be positive")
    log_count = cfg.b3 * math.log(L) + math.log(cfg.volWP)
    try:
        count = L**cfg.b3 * cfg.volWP
        overflow = not math.isfinite(count)
    except OverflowError:
        overflow = True
    if overflow:
        count = math.inf
    return CountEstimate(count, log_count, cfg.volWP / cfg.b3 if cfg.b3 else math.inf, overflow)


@dataclass
class PerfectSquareReport:
    b3: int
    moment: float
    stderr: float
    expected: float
    z_score: float
    max_identity_error: float
    sign_constant: bool
    passed: bool


def attractor_hessian(x, theta, meromorphic=False):
    """H^c with H' = 0 and H'' = -x Theta (zero when the connection is meromorphic)."""
    m = theta.shape[0]
    Hpp = np.zeros((len(x), m, m), complex) if meromorphic else -x[:, None, None] * theta
    Z = np.zeros_like(Hpp)
    return np.block([[Z, Hpp], [np.conj(Hpp), Z]])


def perfect_square_check(b3, N=100_000, seed=0, theta=None, meromorphic=False):
    """Monte Carlo check that det H^c = (-1)^m |x|^(2m) |det Theta|^2 with m = b3, and its Gaussian moment.

    The moment pi E|det H^c| / |det Theta|^2 under exp(-|x|^2) is compared with pi b3!.
    """
    if int(b3) != b3 or b3 < 1:
        raise InputError("b3 must be a positive integer")
    if int(N) != N or N < MIN_SAMPLES:
        raise InputError(f"need N >= {MIN_SAMPLES}")
    m = int(b3)
    rng = stream(seed, "perfect-square", m)
    if theta is None:
        A = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        theta = A @ np.conj(A).T / m + np.eye(m)
    theta = np.asarray(theta, dtype=complex)
    x = (rng.normal(size=int(N)) + 1j * rng.normal(size=int(N))) / math.sqrt(2)
    det = np.linalg.det(attractor_hessian(x, theta, meromorphic))
    dtheta2 = 0.0 if meromorphic else abs(np.linalg.det(theta)) ** 2
    predicted = (-1) ** m * np.abs(x) ** (2 * m) * dtheta2
    scale = np.maximum(np.abs(predicted), 1e-300)
    ident = float(np.max(np.abs(det - predicted) / scale)) if not meromorphic else float(np.max(np.abs(det)))
    sign_constant = bool(np.all(np.sign(det.real[np.abs(det) > 0]) == (-1) ** m)) if not meromorphic else True
    if meromorphic:
        return PerfectSquareReport(m, 0.0, 0.0, 0.0, 0.0, ident, sign_constant, ident == 0.0)
    vals = math.pi * np.abs(det) / dtheta2
    mom, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(N))
    expected = math.pi * math.factorial(m)
    z = (mom - expected) / se
    return PerfectSquareReport(m, mom, se, expected, z, ident, sign_constant,
                               abs(z) <= 3 and ident < 1e-8 and sign_constant)

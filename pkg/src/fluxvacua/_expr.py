"""Vectorised evaluators compiled from user expressions (config files)."""
import numpy as np
import sympy as sp

from .errors import ConfigError


def parse(text, symbols):
    try:
        return sp.sympify(text, locals={s.name: s for s in symbols})
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc


def _check_free(expr, symbols, text):
    extra = expr.free_symbols - set(symbols)
    if extra:
        names = ", ".join(sorted(s.name for s in extra))
        raise ConfigError(f"expression {text!r} uses unknown symbols: {names}")


def real_function(text, dim):
    """Compile an expression in ``x0..x{dim-1}`` into f(X) for X of shape (k, dim)."""
    xs = sp.symbols(f"x0:{dim}", real=True)
    expr = parse(text, xs)
    _check_free(expr, xs, text)
    fn = sp.lambdify(xs, expr, modules="numpy")

    def evaluate(X):
        X = np.asarray(X, dtype=float)
        out = fn(*[X[..., i] for i in range(dim)])
        return np.broadcast_to(np.asarray(out, dtype=float), X.shape[:-1]).copy()

    return evaluate


def complex_symbols(m):
    z = sp.symbols(f"z0:{m}")
    zb = sp.symbols(f"zb0:{m}")
    return z, zb


def complex_function(expr, z, zb=()):
    """Compile a sympy expression in z (and independent zb = conj z) for arrays of shape (..., m)."""
    fn = sp.lambdify(list(z) + list(zb), expr, modules="numpy")
    m = len(z)
    use_bar = bool(zb)

    def evaluate(Z):
        Z = np.asarray(Z, dtype=complex)
        args = [Z[..., j] for j in range(m)]
        if use_bar:
            args += [np.conj(Z[..., j]) for j in range(m)]
        out = fn(*args)
        return np.broadcast_to(np.asarray(out, dtype=complex), Z.shape[:-1]).copy()

    return evaluate

"""
Numerical kernels: upper incomplete gamma for real first argument,
bracketed root finding and adaptive quadrature on finite and
semi-infinite intervals.
"""
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize, special

from .errors import BracketError, DomainError, QuadratureError, SaturationError

_EPS = float(np.finfo(float).eps)
_FPMIN = 1.0e-300

DEFAULT_QUAD_TOL = 1.0e-10
DEFAULT_ROOT_TOL = 1.0e-13


@dataclass(frozen=True)
class GammaEval:
    """One evaluation of the upper incomplete gamma function Γ(z, p)."""
    z: float
    p: float
    value: float
    est_abs_err: float
    saturated: bool = False


@dataclass(frozen=True)
class QuadResult:
    """Outcome of an adaptive quadrature."""
    value: float
    est_err: float
    converged: bool


def _continued_fraction(z, p, max_iter=10_000):
    """Legendre continued fraction for Γ(z, p), modified Lentz; any real z, p >= 1."""
    b = p + 1.0 - z
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - z)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-p + z * math.log(p)) * h, i
    raise QuadratureError(f"continued fraction for Gamma({z}, {p}) did not converge")


def _positive_gamma(z, p):
    # gammaincc switches between series and continued fraction internally
    return float(special.gammaincc(z, p) * special.gamma(z))


def upper_gamma_eval(z, p):
    """
    Evaluate Γ(z, p) = ∫_p^∞ e^{-w} w^{z-1} dw.

    z > 0 uses the regularized function from scipy. For z <= 0 and p > 1 the
    Legendre continued fraction converges directly; for p <= 1 the value is
    carried down from z + ceil(-z) (or from Γ(0, p) = E1(p) when z is an
    integer) by Γ(s-1, p) = (Γ(s, p) - e^{-p} p^{s-1}) / (s-1).

    Args:
        z (float): Real first argument.
        p (float): Lower integration limit, p > 0.

    Returns:
        GammaEval: Value, error estimate and saturation flag.
    """
    z = float(z)
    p = float(p)
    if not p > 0.0 or math.isnan(p):
        raise DomainError(f"upper_gamma requires p > 0, got p={p}")
    if math.isnan(z):
        raise DomainError("upper_gamma requires a real z")

    steps = 0
    try:
        with np.errstate(over="ignore", under="ignore"):
            if z > 0.0:
                value = _positive_gamma(z, p)
            elif p > 1.0:
                value, _ = _continued_fraction(z, p)
            else:
                steps = int(math.ceil(-z))
                s = z + steps
                if abs(s) < 1.0e-14:
                    s = 0.0
                    value = float(special.exp1(p))
                elif s >= 1.0:
                    # z sits just below an integer; step from s - 1 instead
                    steps -= 1
                    s -= 1.0
                    value = float(special.exp1(p)) if s == 0.0 else _positive_gamma(s, p)
                else:
                    value = _positive_gamma(s, p)
                for _ in range(steps):
                    value = (value - math.exp(-p) * p ** (s - 1.0)) / (s - 1.0)
                    s -= 1.0
    except OverflowError:
        value = math.inf

    saturated = (not math.isfinite(value)) or value == 0.0
    if math.isnan(value):
        value = math.inf
    est = abs(value) * 16.0 * _EPS * (steps + 2) if math.isfinite(value) else math.inf
    return GammaEval(z=z, p=p, value=value, est_abs_err=est, saturated=saturated)


def upper_gamma(z, p):
    """Return Γ(z, p); see :func:`upper_gamma_eval`."""
    return upper_gamma_eval(z, p).value


def find_root(f: Callable[[float], float], lo: float, hi: float, tol: float = DEFAULT_ROOT_TOL) -> float:
    """
    Find the root of a continuous monotone function on a bracketing interval.

    Args:
        f (callable): Function with f(lo) * f(hi) <= 0.
        lo (float): Left end of the bracket.
        hi (float): Right end of the bracket.
        tol (float): Absolute bracket width at termination.

    Returns:
        float: The root.
    """
    f_lo = f(lo)
    if f_lo == 0.0:
        return float(lo)
    f_hi = f(hi)
    if f_hi == 0.0:
        return float(hi)
    if math.isnan(f_lo) or math.isnan(f_hi) or f_lo * f_hi > 0.0:
        raise BracketError(f"f({lo})={f_lo} and f({hi})={f_hi} do not bracket a root")
    root, info = optimize.brentq(f, lo, hi, xtol=tol, rtol=4.0 * _EPS, maxiter=500, full_output=True)
    if not info.converged:
        raise BracketError(f"brentq did not converge: {info.flag}")
    return float(root)


def grow_bracket(f: Callable[[float], float], lo: float = 0.0, hi: float = 1.0, cap: float = math.inf) -> Tuple[float, float]:
    """Double ``hi`` until ``f`` changes sign on [lo, hi]."""
    f_lo = f(lo)
    while f_lo * f(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > cap:
            raise SaturationError(f"bracket growth exceeded cap {cap:g}")
        f_lo = f(lo)
    return lo, hi


def integrate(f: Callable[[float], float], a: float, b: float, tol: float = DEFAULT_QUAD_TOL,
              rel_tol: float = DEFAULT_QUAD_TOL, limit: int = 500) -> QuadResult:
    """
    Adaptive Gauss-Kronrod quadrature of ``f`` over [a, b].

    A semi-infinite interval is mapped onto [0, 1) by w = a + u / (1 - u).

    Args:
        f (callable): Piecewise-smooth, absolutely integrable function.
        a (float): Finite lower limit.
        b (float): Upper limit, possibly ``math.inf``.
        tol (float): Absolute tolerance.
        rel_tol (float): Relative tolerance.
        limit (int): Maximum number of subintervals.

    Returns:
        QuadResult: Value, error estimate and convergence flag.
    """
    def checked(v):
        if math.isnan(v):
            raise QuadratureError("integrand returned NaN")
        return v

    if math.isinf(b):
        def integrand(u):
            if u >= 1.0:
                return 0.0
            one_minus = 1.0 - u
            return checked(f(a + u / one_minus)) / (one_minus * one_minus)
        lo, hi = 0.0, 1.0
    else:
        def integrand(w):
            return checked(f(w))
        lo, hi = a, b

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sp_integrate.IntegrationWarning)
        out = sp_integrate.quad(integrand, lo, hi, epsabs=tol, epsrel=rel_tol, limit=limit, full_output=1)
    value, err = float(out[0]), float(out[1])
    if math.isnan(value):
        raise QuadratureError("quadrature produced NaN")
    return QuadResult(value=value, est_err=err, converged=len(out) == 3)

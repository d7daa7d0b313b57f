"""
Limit formulas for the move-to-front search cost.

Covers the stationary and transient tails of C_N/N, the optimal static
ordering it is compared with, the cache-miss probability and the Pareto
closed forms that cross-check the generic quadrature paths.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import DivergenceError, DomainError, QuadratureError
from .hydro import InitialProfile, LimitModel, evolved_tail
from .rates import AtomicLaw, ParetoLaw, RateLaw, laplace_moment, laplace_moment_quadrature, mean_rate, quantile_upper
from .specfun import DEFAULT_QUAD_TOL, QuadResult, integrate, upper_gamma

HIT_RATIO_WINDOW = 1.0e-2


@dataclass(frozen=True)
class HitRatioFit:
    """Log-log fit of the hit ratio 1 - M against the request count R."""
    slope: float
    expected: float
    in_window: bool
    r_grid: np.ndarray
    hit_ratio: np.ndarray

    @property
    def deviation(self):
        return abs(self.slope - self.expected)


@dataclass(frozen=True)
class BoundsCheck:
    """Mean search cost C̄ against the optimal static ordering R̄."""
    optimal_mean: float
    mean_cost: float
    ratio: float
    factor_two: bool
    hilbert: bool
    margin: float


@dataclass(frozen=True)
class TailTable:
    """Stationary tail tabulated parametrically in t: x = y_C(t), tail = M(t)."""
    x: np.ndarray
    tail: np.ndarray

    def cdf(self, values):
        """Limit CDF of C_N/N interpolated on the table."""
        return 1.0 - np.interp(values, self.x, self.tail, left=1.0, right=0.0)


class CostModel:
    """
    Search-cost engine over one rate law.

    Args:
        source (RateLaw or LimitModel): The jump-rate law, or an engine wrapping it.
        quad_tol (float): Absolute and relative quadrature tolerance.
    """

    def __init__(self, source: Union[RateLaw, LimitModel], quad_tol: float = DEFAULT_QUAD_TOL):
        self.model = source if isinstance(source, LimitModel) else LimitModel(source)
        self.law = self.model.law
        self.quad_tol = float(quad_tol)
        self.mean_rate = mean_rate(self.law)

    def __repr__(self):
        return f"CostModel({self.law!r})"

    @property
    def has_finite_mean(self) -> bool:
        return math.isfinite(self.mean_rate)

    def _require_finite_mean(self, what):
        if not self.has_finite_mean:
            raise DivergenceError(f"{what} needs a finite mean jump rate; {self.law!r} has none")

    def _pareto(self) -> ParetoLaw:
        if not isinstance(self.law, ParetoLaw):
            raise DomainError(f"closed form needs a Pareto law, got {self.law!r}")
        return self.law

    def _quad(self, f, a, b, what) -> float:
        res: QuadResult = integrate(f, a, b, tol=self.quad_tol, rel_tol=self.quad_tol)
        if not res.converged and res.est_err > math.sqrt(self.quad_tol) * max(1.0, abs(res.value)):
            logging.warning(f"{what}: quadrature not converged (value={res.value:.6g}, err={res.est_err:.3g})")
            raise QuadratureError(f"{what}: quadrature did not converge (err={res.est_err:.3g})")
        return res.value

    @staticmethod
    def _check_fraction(x, closed_left=True):
        ok = (0.0 <= x < 1.0) if closed_left else (0.0 < x < 1.0)
        if not ok:
            raise DomainError(f"fraction out of range: {x}")

    # stationary regime

    def stationary_tail(self, x: float, method: str = "closed") -> float:
        """
        lim P(C_N/N > x) = ∫ e^{-w t_0(x)} w λ(dw) / ∫ w λ(dw).

        Args:
            x (float): Scaled position, 0 <= x < 1.
            method (str): ``closed`` (gamma form for Pareto) or ``quadrature``.

        Returns:
            float: Tail probability.
        """
        self._require_finite_mean("stationary_tail")
        self._check_fraction(x)
        if x == 0.0:
            return 1.0
        t = self.model.t0(x)
        if method == "quadrature":
            return laplace_moment_quadrature(self.law, t, 1, self.quad_tol) / self.mean_rate
        return laplace_moment(self.law, t, 1) / self.mean_rate

    def stationary_expectation(self, f: Callable[[float], float], method: str = "nested") -> float:
        """
        E f(C/N) under the stationary limit law.

        ``nested`` integrates over λ outside and over t inside with the weight
        w² e^{-wt}; ``kernel`` swaps the order and integrates f(y_C(t))
        against ∫ w² e^{-wt} λ(dw) in closed form.
        """
        self._require_finite_mean("stationary_expectation")
        y_c = self.model.y_c
        if method == "kernel":
            value = self._quad(lambda t: f(y_c(t)) * laplace_moment(self.law, t, 2), 0.0, math.inf,
                               "stationary_expectation")
            return value / self.mean_rate
        if method != "nested":
            raise DomainError(f"unknown expectation method {method!r}")

        def inner(w):
            # ∫ f(y_C(t)) e^{-wt} dt with s = w t
            return self._quad(lambda s: f(y_c(s / w)) * math.exp(-s), 0.0, math.inf, "stationary_expectation")

        if isinstance(self.law, AtomicLaw):
            rates, weights = self.law.atoms()
            terms = [rho * w * inner(w) for w, rho in zip(rates.tolist(), weights.tolist())]
            return math.fsum(terms) / self.mean_rate
        law = self._pareto()
        a, b = law.a, law.b
        value = self._quad(lambda w: b * a ** b * w ** (-b) * inner(w), a, math.inf, "stationary_expectation")
        return value / self.mean_rate

    def conditional_mean_given_rate(self, w: float) -> float:
        """Limit of E[C_N/N | requested rate w] = ∫ w̃ / (w + w̃) λ(dw̃)."""
        w = float(w)
        if not w > 0.0:
            raise DomainError(f"rate must be positive, got {w}")
        if isinstance(self.law, AtomicLaw):
            rates, weights = self.law.atoms()
            return math.fsum((weights * rates / (w + rates)).tolist())
        law = self._pareto()
        a, b = law.a, law.b
        return self._quad(lambda v: b * a ** b * v ** (-b) / (w + v), a, math.inf, "conditional_mean")

    def mean_search_cost(self) -> float:
        """
        Stationary limit of E[C_N]/N = ∫∫ w w̃/(w + w̃) λ(dw) λ(dw̃) / ∫ w λ(dw).

        Exact double sum for atomic laws, nested quadrature for Pareto.
        """
        self._require_finite_mean("mean_search_cost")
        if isinstance(self.law, AtomicLaw):
            rates, weights = self.law.atoms()
            kernel = np.outer(rates, rates) / np.add.outer(rates, rates)
            terms = (np.outer(weights, weights) * kernel).ravel()
            return math.fsum(terms.tolist()) / self.mean_rate
        law = self._pareto()
        a, b = law.a, law.b
        value = self._quad(lambda w: b * a ** b * w ** (-b) * self.conditional_mean_given_rate(w),
                           a, math.inf, "mean_search_cost")
        return value / self.mean_rate

    # optimal static ordering

    def _low_rate_mass(self, x):
        """∫_0^{1-x} F^{-1}(u) du: first moment of the lowest 1-x of the rate mass."""
        if isinstance(self.law, ParetoLaw):
            a, b = self.law.a, self.law.b
            if b == 1.0:
                return a * math.log(1.0 / x)
            return a * b / (1.0 - b) * (x ** (1.0 - 1.0 / b) - 1.0)
        rates, weights = self.law.atoms()
        remaining = 1.0 - x
        terms = []
        for f, rho in zip(rates.tolist(), weights.tolist()):
            take = min(rho, remaining)
            if take <= 0.0:
                break
            terms.append(f * take)
            remaining -= take
        return math.fsum(terms)

    def optimal_tail(self, x: float, method: str = "closed") -> float:
        """
        Tail of R_N/N under the static decreasing-rate order: ∫_0^{w(x)} w λ(dw) / ∫ w λ(dw).

        Atomic laws count exactly mass 1 - x of the lowest rates, splitting the
        atom that straddles the quantile.
        """
        self._require_finite_mean("optimal_tail")
        self._check_fraction(x)
        if x == 0.0:
            return 1.0
        if method == "quadrature" and isinstance(self.law, ParetoLaw):
            a, b = self.law.a, self.law.b
            w_x = quantile_upper(self.law, x)
            return self._quad(lambda w: b * a ** b * w ** (-b), a, w_x, "optimal_tail") / self.mean_rate
        return self._low_rate_mass(x) / self.mean_rate

    def optimal_mean(self, method: str = "closed") -> float:
        """Limit of E[R_N]/N = ∫∫ min(w, w̃) λ(dw) λ(dw̃) / (2 ∫ w λ(dw))."""
        self._require_finite_mean("optimal_mean")
        if isinstance(self.law, AtomicLaw):
            rates, weights = self.law.atoms()
            terms = (np.outer(weights, weights) * np.minimum.outer(rates, rates)).ravel()
            return math.fsum(terms.tolist()) / (2.0 * self.mean_rate)
        law = self._pareto()
        a, b = law.a, law.b
        if method == "quadrature":
            # E min(W, W') = ∫ P(W > s)^2 ds
            e_min = a + self._quad(lambda s: (a / s) ** (2.0 * b), a, math.inf, "optimal_mean")
            return e_min / (2.0 * self.mean_rate)
        return (b - 1.0) / (2.0 * b - 1.0)

    def universal_bounds(self) -> BoundsCheck:
        """Check R̄ <= C̄ <= 2 R̄ and the sharper C̄ <= (π/2) R̄."""
        r_bar = self.optimal_mean()
        c_bar = self.mean_search_cost()
        margin = min(c_bar - r_bar, 2.0 * r_bar - c_bar, 0.5 * math.pi * r_bar - c_bar)
        return BoundsCheck(
            optimal_mean=r_bar,
            mean_cost=c_bar,
            ratio=c_bar / r_bar,
            factor_two=r_bar <= c_bar <= 2.0 * r_bar,
            hilbert=c_bar <= 0.5 * math.pi * r_bar,
            margin=margin,
        )

    # move-to-front against optimal

    def cost_ratio(self, x: float) -> float:
        """
        P(C/N > x) / P(R/N > x) = ∫ e^{-w t_0(x)} w λ(dw) / ∫_0^{w(x)} w λ(dw).

        Well defined for infinite-mean laws.

        Args:
            x (float): Scaled position, 0 < x < 1.

        Returns:
            float: The tail ratio.
        """
        self._check_fraction(x, closed_left=False)
        numerator = laplace_moment(self.law, self.model.t0(x), 1)
        return numerator / self._low_rate_mass(x)

    def cost_ratio_closed_form(self, x: float) -> float:
        """Pareto form (1-b)/(a t_0) (e^{-a t_0} - 1 + x)/(x^{1-1/b} - 1); E1(a t_0)/ln(1/x) at b = 1."""
        law = self._pareto()
        self._check_fraction(x, closed_left=False)
        a, b = law.a, law.b
        p = a * self.model.t0(x)
        if b == 1.0:
            return float(special.exp1(p)) / math.log(1.0 / x)
        return (1.0 - b) / p * (math.expm1(-p) + x) / (x ** (1.0 - 1.0 / b) - 1.0)

    def cost_ratio_limit(self) -> float:
        """x → 0 limit of :meth:`cost_ratio`: 1 for finite mean, (1-b)Γ(1-b)^{1/b} for Pareto b < 1."""
        if isinstance(self.law, ParetoLaw) and self.law.b < 1.0:
            b = self.law.b
            return (1.0 - b) * special.gamma(1.0 - b) ** (1.0 / b)
        return 1.0

    def small_x_t0(self, x: float) -> float:
        """Leading behaviour t_0(x) ≈ (x / Γ(1-b))^{1/b} / a as x → 0 for Pareto b < 1."""
        law = self._pareto()
        if not law.b < 1.0:
            raise DomainError("small-x asymptote of t_0 holds for b < 1")
        self._check_fraction(x, closed_left=False)
        return (x / special.gamma(1.0 - law.b)) ** (1.0 / law.b) / law.a

    # transient regime

    def transient_tail(self, x: float, t: float, profile: Optional[InitialProfile] = None) -> float:
        """
        lim P(C_N(t)/N > x) = Σ_α f_α U_α(x, t) / ∫ w λ(dw).

        For x <= y_C(t) this is the stationary tail. In the initial regime the
        per-block integral of the evolved measure is taken in closed form. With
        ``profile=None`` the fresh (uniform) profile is used, which also
        serves continuous laws.

        Args:
            x (float): Scaled position, 0 <= x < 1.
            t (float): Time, t >= 0.
            profile (InitialProfile, optional): Initial rate profile.

        Returns:
            float: Tail probability.
        """
        self._require_finite_mean("transient_tail")
        self._check_fraction(x)
        if t < 0.0:
            raise DomainError(f"time must be non-negative, got {t}")
        if x == 0.0:
            return 1.0
        if x <= self.model.y_c(t):
            return self.stationary_tail(x)
        if profile is None:
            # fresh profile: 1 - ŷ = (1 - x) / ∫ e^{-wt} λ(dw)
            return laplace_moment(self.law, t, 1) * (1.0 - x) / (laplace_moment(self.law, t, 0) * self.mean_rate)
        tail = evolved_tail(self.model, profile, x, t)
        return math.fsum(f * u for f, u in zip(tail.rates, tail.masses)) / self.mean_rate

    def miss_probability(self, t: float) -> float:
        """
        M(t) = ∫ e^{-wt} w λ(dw) / ∫ w λ(dw): the request at time t hits a never-requested item.

        Independent of the initial configuration.
        """
        self._require_finite_mean("miss_probability")
        if t < 0.0:
            raise DomainError(f"time must be non-negative, got {t}")
        return laplace_moment(self.law, t, 1) / self.mean_rate

    def miss_probability_closed_form(self, t: float) -> float:
        """Pareto form M(t) = e^{-at} - (at)^{b-1} Γ(2-b, at)."""
        law = self._pareto()
        self._require_finite_mean("miss_probability")
        if t == 0.0:
            return 1.0
        p = law.a * t
        return math.exp(-p) - p ** (law.b - 1.0) * upper_gamma(2.0 - law.b, p)

    def hit_ratio(self, t: float) -> float:
        """1 - M(t) without cancellation."""
        self._require_finite_mean("hit_ratio")
        if t < 0.0:
            raise DomainError(f"time must be non-negative, got {t}")
        if t == 0.0:
            return 0.0
        if isinstance(self.law, ParetoLaw):
            p = self.law.a * t
            return -math.expm1(-p) + p ** (self.law.b - 1.0) * upper_gamma(2.0 - self.law.b, p)
        rates, weights = self.law.atoms()
        return math.fsum((-weights * rates * np.expm1(-rates * t)).tolist()) / self.mean_rate

    def asymptote_error(self, t: float) -> float:
        """|M(t) - (1 - Γ(2-b)(at)^{b-1})| for Pareto 1 < b < 2; O(at) as t → 0."""
        law = self._pareto()
        if not 1.0 < law.b < 2.0:
            raise DomainError(f"the small-t asymptote of M needs 1 < b < 2, got b={law.b}")
        if not t > 0.0:
            raise DomainError(f"time must be positive, got {t}")
        p = law.a * t
        s = 2.0 - law.b
        lower = special.gammainc(s, p) * special.gamma(s)
        return abs(-math.expm1(-p) - p ** (law.b - 1.0) * lower)

    def hit_ratio_exponent_check(self, r_grid: Sequence[float]) -> HitRatioFit:
        """
        Fit the log-log slope of the hit ratio against R, with t = R / ∫ w λ(dw).

        The expected slope for Pareto 1 < b < 2 is b - 1. Grids reaching
        a t >= 1e-2 leave the small-t window and are flagged.
        """
        law = self._pareto()
        if not 1.0 < law.b < 2.0:
            raise DomainError(f"hit-ratio scaling needs 1 < b < 2, got b={law.b}")
        r = np.asarray(r_grid, dtype=float)
        if r.size < 2 or np.any(r <= 0.0):
            raise DomainError("R grid needs at least two positive points")
        ts = r / self.mean_rate
        h = np.array([self.hit_ratio(float(t)) for t in ts])
        slope = float(np.polyfit(np.log(r), np.log(h), 1)[0])
        in_window = bool(law.a * ts.max() <= HIT_RATIO_WINDOW)
        if not in_window:
            logging.warning(f"hit-ratio grid reaches a*t={law.a * ts.max():.3g}, outside the small-t window")
        return HitRatioFit(slope=slope, expected=law.b - 1.0, in_window=in_window, r_grid=r, hit_ratio=h)

    def tail_table(self, n_points: int = 2000) -> TailTable:
        """Tabulate (y_C(t), M(t)) on a geometric t-grid; no root finding involved."""
        self._require_finite_mean("tail_table")
        scale = 1.0 / self.law.min_rate()
        ts = np.concatenate(([0.0], np.geomspace(1.0e-9, 60.0, int(n_points)) * scale))
        x = np.array([self.model.y_c(float(t)) for t in ts])
        tail = np.array([laplace_moment(self.law, float(t), 1) for t in ts]) / self.mean_rate
        return TailTable(x=x, tail=tail)

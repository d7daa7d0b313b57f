"""
Jump-rate distributions λ: discrete mixtures, the generalized Pareto law and
empirical rate vectors, with their Laplace-type moments, quantiles, size-biased
laws and finite-N discretizations.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DivergenceError, DomainError
from .specfun import DEFAULT_QUAD_TOL, integrate, upper_gamma

_WEIGHT_SUM_TOL = 1.0e-12
_EPS = float(np.finfo(float).eps)


def _compensated_sum(terms):
    """Sum in descending magnitude order with compensated (exact-rounding) accumulation."""
    terms = np.asarray(terms, dtype=float)
    if terms.size == 0:
        return 0.0
    ordered = terms[np.argsort(-np.abs(terms), kind="stable")]
    return math.fsum(ordered.tolist())


class RateLaw(ABC):
    """A jump-rate distribution λ with λ({0}) = 0."""

    kind = "abstract"

    @property
    @abstractmethod
    def is_atomic(self) -> bool:
        """True when λ is a finite mixture of point masses."""

    @abstractmethod
    def min_rate(self) -> float:
        """Lower end of the support."""

    @abstractmethod
    def cdf(self, w):
        """λ([0, w])."""

    @abstractmethod
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` independent rates."""


class AtomicLaw(RateLaw):
    """Shared behaviour of laws with finitely many atoms."""

    @property
    def is_atomic(self):
        return True

    @abstractmethod
    def _compute_atoms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Distinct rates in ascending order and their probabilities."""

    @cached_property
    def _atom_arrays(self):
        return self._compute_atoms()

    def atoms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Distinct rates in ascending order and their probabilities (read-only arrays)."""
        return self._atom_arrays

    def min_rate(self):
        return float(self.atoms()[0][0])

    def cdf(self, w):
        rates, weights = self.atoms()
        cum = np.cumsum(weights)
        idx = np.searchsorted(rates, np.asarray(w, dtype=float), side="right")
        padded = np.concatenate(([0.0], cum))
        return np.minimum(padded[idx], 1.0)

    def sample(self, n, rng):
        rates, weights = self.atoms()
        return rng.choice(rates, size=n, p=weights / weights.sum())

    def as_discrete(self) -> "DiscreteLaw":
        rates, weights = self.atoms()
        return DiscreteLaw(tuple(rates.tolist()), tuple((weights / math.fsum(weights)).tolist()))


@dataclass(frozen=True)
class DiscreteLaw(AtomicLaw):
    """λ = Σ ρ_α δ_{f_α}."""
    rates: Tuple[float, ...]
    weights: Tuple[float, ...]

    kind = "discrete"

    def __post_init__(self):
        if len(self.rates) == 0 or len(self.rates) != len(self.weights):
            raise DomainError("discrete law needs matching, non-empty rate and weight lists")
        if any(not (f > 0.0) or not math.isfinite(f) for f in self.rates):
            raise DomainError("discrete law rates must be positive and finite")
        if any(not (r > 0.0) for r in self.weights):
            raise DomainError("discrete law weights must be positive")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise DomainError(f"discrete law weights sum to {total!r}, expected 1")

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "DiscreteLaw":
        """Build from ``[(f, rho), ...]``."""
        pairs = [(float(f), float(r)) for f, r in pairs]
        return cls(tuple(f for f, _ in pairs), tuple(r for _, r in pairs))

    @classmethod
    def point_mass(cls, rate: float) -> "DiscreteLaw":
        return cls((float(rate),), (1.0,))

    def _compute_atoms(self):
        rates = np.asarray(self.rates, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        order = np.argsort(rates, kind="stable")
        rates, weights = rates[order], weights[order]
        uniq, inverse = np.unique(rates, return_inverse=True)
        if uniq.size != rates.size:
            weights = np.bincount(inverse, weights=weights)
        return uniq, weights


@dataclass(frozen=True)
class ParetoLaw(RateLaw):
    """Generalized Pareto law λ([0, w]) = 1 - (a/w)^b for w >= a."""
    a: float
    b: float

    kind = "pareto"

    def __post_init__(self):
        if not (self.a > 0.0 and self.b > 0.0) or not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise DomainError(f"Pareto law needs a > 0 and b > 0, got a={self.a}, b={self.b}")

    @property
    def is_atomic(self):
        return False

    def min_rate(self):
        return float(self.a)

    def density(self, w):
        w = np.asarray(w, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.b * self.a ** self.b * w ** (-self.b - 1.0)
        return np.where(w >= self.a, out, 0.0)

    def cdf(self, w):
        w = np.asarray(w, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 1.0 - (self.a / w) ** self.b
        return np.where(w >= self.a, out, 0.0)

    def sample(self, n, rng):
        return self.a * (1.0 + rng.pareto(self.b, size=n))


@dataclass(frozen=True)
class EmpiricalLaw(AtomicLaw):
    """λ^(N) = (1/N) Σ δ_{w_i} for a finite rate vector."""
    values: Tuple[float, ...]

    kind = "empirical"

    def __post_init__(self):
        if len(self.values) == 0:
            raise DomainError("empirical law needs at least one rate")
        if any(not (w > 0.0) or not math.isfinite(w) for w in self.values):
            raise DomainError("empirical rates must be positive and finite")

    @property
    def n(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def _compute_atoms(self):
        uniq, counts = np.unique(self.as_array(), return_counts=True)
        return uniq, counts / float(self.n)


def _check_t(t):
    if not (t >= 0.0) or math.isnan(t):
        raise DomainError(f"time must be non-negative, got {t}")


def laplace_moment(law: RateLaw, t: float, k: int) -> float:
    """
    Evaluate ∫ w^k e^{-wt} λ(dw).

    Atomic laws use an exact compensated sum. The Pareto law reduces to
    b (at)^b t^{-k} Γ(k-b, at); at t = 0 a divergent moment returns ``math.inf``.

    Args:
        law (RateLaw): Jump-rate distribution.
        t (float): Time, t >= 0.
        k (int): Power of w, one of 0, 1, 2.

    Returns:
        float: The moment, or ``math.inf`` when divergent.
    """
    t = float(t)
    _check_t(t)
    if k not in (0, 1, 2):
        raise DomainError(f"moment order must be 0, 1 or 2, got {k}")

    if isinstance(law, AtomicLaw):
        rates, weights = law.atoms()
        return _compensated_sum(weights * rates ** k * np.exp(-rates * t))

    if isinstance(law, ParetoLaw):
        a, b = law.a, law.b
        if t == 0.0:
            if k == 0:
                return 1.0
            if k < b:
                return b * a ** k / (b - k)
            return math.inf
        at = a * t
        return b * at ** b * t ** (-k) * upper_gamma(k - b, at)

    raise DomainError(f"unsupported rate law {law!r}")


def laplace_moment_quadrature(law: RateLaw, t: float, k: int, tol: float = DEFAULT_QUAD_TOL) -> float:
    """Quadrature of ∫ w^k e^{-wt} λ(dw) over the Pareto density; an independent path for cross-checks."""
    if not isinstance(law, ParetoLaw):
        return laplace_moment(law, t, k)
    t = float(t)
    _check_t(t)
    if t == 0.0 and k >= law.b:
        return math.inf
    a, b = law.a, law.b

    def integrand(w):
        return w ** k * math.exp(-w * t) * b * a ** b * w ** (-b - 1.0)

    scale = laplace_moment(law, t, k)
    res = integrate(integrand, a, math.inf, tol=tol * max(scale, 1e-300), rel_tol=tol)
    return res.value


def mean_rate(law: RateLaw) -> float:
    """∫ w λ(dw), ``math.inf`` when divergent."""
    return laplace_moment(law, 0.0, 1)


def quantile_upper(law: RateLaw, x: float) -> float:
    """
    Return w(x) with λ([0, w(x)]) = 1 - x.

    For atomic laws this is the right-continuous inverse
    inf{w : λ([0, w]) > 1 - x}, so ties go to the larger rate.

    Args:
        law (RateLaw): Jump-rate distribution.
        x (float): Upper-tail mass, 0 < x < 1.

    Returns:
        float: The rate w(x).
    """
    x = float(x)
    if not (0.0 < x < 1.0):
        raise DomainError(f"quantile_upper requires 0 < x < 1, got {x}")
    if isinstance(law, ParetoLaw):
        return law.a * x ** (-1.0 / law.b)
    if isinstance(law, AtomicLaw):
        rates, weights = law.atoms()
        cum = np.cumsum(weights)
        # cumulative sums of decimal weights land a few ulps off the exact mass
        target = (1.0 - x) + 4.0 * _EPS * rates.size
        idx = int(np.searchsorted(cum, target, side="right"))
        return float(rates[min(idx, rates.size - 1)])
    raise DomainError(f"unsupported rate law {law!r}")


def size_biased_jumped_law(law: RateLaw) -> RateLaw:
    """
    The law w λ(dw) / ∫ w̃ λ(dw̃) of the rate of the item that jumps.

    Args:
        law (RateLaw): A finite-mean jump-rate distribution.

    Returns:
        RateLaw: Discrete for atomic input, Pareto(a, b-1) for Pareto(a, b).
    """
    m = mean_rate(law)
    if not math.isfinite(m):
        raise DivergenceError("size-biased law needs a finite mean jump rate")
    if isinstance(law, ParetoLaw):
        return ParetoLaw(law.a, law.b - 1.0)
    rates, weights = law.atoms()
    biased = rates * weights
    biased = biased / math.fsum(biased.tolist())
    return DiscreteLaw(tuple(rates.tolist()), tuple(biased.tolist()))


def largest_remainder(m: int, weights) -> np.ndarray:
    """Split m slots across ``weights`` (summing to 1) with the largest-remainder rule."""
    quota = m * np.asarray(weights, dtype=float)
    counts = np.floor(quota + 4.0 * _EPS * max(m, 1)).astype(np.int64)
    counts = np.minimum(counts, m)
    short = m - int(counts.sum())
    if short > 0:
        counts[np.argsort(-(quota - counts), kind="stable")[:short]] += 1
    elif short < 0:
        counts[np.argsort(quota - counts, kind="stable")[:-short]] -= 1
    return counts


def make_empirical(law: RateLaw, n: int, mode: str = "quantile", seed: Optional[int] = None) -> EmpiricalLaw:
    """
    Discretize ``law`` into N rates.

    ``quantile`` mode takes w_i = w(i/N) for i < N and the support's lower
    end for i = N, which for Pareto is w_i = a (N/i)^{1/b}. Atomic laws get
    exact largest-remainder counts per atom, listed in decreasing rate order.
    ``iid`` mode draws N independent rates from a generator seeded with ``seed``.

    Args:
        law (RateLaw): Jump-rate distribution.
        n (int): Number of items, n >= 1.
        mode (str): ``quantile`` or ``iid``.
        seed (int, optional): Seed for ``iid`` mode.

    Returns:
        EmpiricalLaw: The finite-N rate vector.
    """
    n = int(n)
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    if mode == "quantile":
        if isinstance(law, ParetoLaw):
            i = np.arange(1, n + 1, dtype=float)
            values = law.a * (n / i) ** (1.0 / law.b)
        else:
            rates, weights = law.atoms()
            values = np.repeat(rates[::-1], largest_remainder(n, weights)[::-1])
    elif mode == "iid":
        if seed is None:
            raise DomainError("iid mode requires an explicit seed")
        values = law.sample(n, np.random.default_rng(seed))
    else:
        raise DomainError(f"unknown discretization mode {mode!r}")
    return EmpiricalLaw(tuple(float(v) for v in values))


def load_empirical_file(path: Union[str, Path]) -> EmpiricalLaw:
    """Read one rate per line (ASCII decimal)."""
    values = np.loadtxt(Path(path), dtype=float, ndmin=1, comments="#")
    return EmpiricalLaw(tuple(values.tolist()))

"""
Hydrodynamic-limit engine for the stochastic ranking process.

The boundary curve y_C(t) separates items that have jumped at least once
from those that have not. Its inverse t_0 and the inverse ŷ of the
generalized characteristic y_C(y, t) give the limiting joint law of rate
and scaled position in closed form. For a discrete rate law the tail masses
U_α(y, t) solve a Burgers-type system, which :func:`pde_residual` checks
by finite differences.
"""
import bisect
import logging
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, SaturationError
from .rates import (
    AtomicLaw,
    DiscreteLaw,
    ParetoLaw,
    RateLaw,
    laplace_moment,
    laplace_moment_quadrature,
    mean_rate,
)
from .specfun import DEFAULT_ROOT_TOL, find_root, upper_gamma

BOUNDARY_TOL = 1.0e-12
_COVER_TOL = 1.0e-12
_ROUNDOFF_FLOOR = 1.0e-9


class LimitModel:
    """
    Analytic engine bound to one rate law.

    Caches the doubling ladder t = 1, 2, 4, ... used to bracket t_0(y), so
    repeated inversions do not re-grow the bracket.
    """

    def __init__(self, law: RateLaw, root_tol: float = DEFAULT_ROOT_TOL, saturation_scale: float = 1.0e6):
        self.law = law
        self.root_tol = float(root_tol)
        self.t_cap = float(saturation_scale) / law.min_rate()
        self._ladder_t: List[float] = [0.0, 1.0]
        self._ladder_y: List[float] = [0.0, self.y_c(1.0)]
        self._lock = threading.Lock()

    def __repr__(self):
        return f"LimitModel({self.law!r})"

    @property
    def mean_rate(self) -> float:
        return mean_rate(self.law)

    def y_c(self, t: float) -> float:
        """Boundary curve y_C(t) = 1 - ∫ e^{-wt} λ(dw)."""
        return 1.0 - laplace_moment(self.law, t, 0)

    def y_c_closed_form(self, t: float) -> float:
        """Pareto form y_C(t) = 1 - b (at)^b Γ(-b, at)."""
        if not isinstance(self.law, ParetoLaw):
            raise DomainError("closed-form boundary curve is defined for the Pareto law")
        if t < 0.0:
            raise DomainError(f"time must be non-negative, got {t}")
        if t == 0.0:
            return 0.0
        a, b = self.law.a, self.law.b
        return 1.0 - b * (a * t) ** b * upper_gamma(-b, a * t)

    def y_c_quadrature(self, t: float) -> float:
        """Boundary curve from quadrature over the rate density."""
        return 1.0 - laplace_moment_quadrature(self.law, t, 0)

    def dy_c_dt(self, t: float) -> float:
        """dy_C/dt = ∫ w e^{-wt} λ(dw) (infinite at t = 0 for infinite-mean laws)."""
        return laplace_moment(self.law, t, 1)

    def relaxation(self, t: float) -> float:
        """Distance to stationarity 1 - y_C(t) = ∫ e^{-wt} λ(dw)."""
        return laplace_moment(self.law, t, 0)

    def _bracket(self, y):
        with self._lock:
            while self._ladder_y[-1] < y:
                t_next = 2.0 * self._ladder_t[-1]
                if t_next > self.t_cap:
                    logging.warning(f"t0 bracket saturated at t={t_next:g} for y={y!r}")
                    raise SaturationError(f"t0({y}) exceeds the bracket cap {self.t_cap:g}")
                self._ladder_t.append(t_next)
                self._ladder_y.append(self.y_c(t_next))
            idx = bisect.bisect_left(self._ladder_y, y)
            return self._ladder_t[max(idx - 1, 0)], self._ladder_t[idx]

    def t0(self, y: float) -> float:
        """
        Inverse of the boundary curve: the time at which y_C reaches y.

        Args:
            y (float): Scaled position, 0 <= y < 1.

        Returns:
            float: t_0(y) >= 0.
        """
        y = float(y)
        if not (0.0 <= y < 1.0):
            raise DomainError(f"t0 is defined on [0, 1), got y={y}")
        if y == 0.0:
            return 0.0
        lo, hi = self._bracket(y)
        return find_root(lambda t: self.y_c(t) - y, lo, hi, tol=self.root_tol * min(1.0, y))


@dataclass(frozen=True)
class ProfileBlock:
    """Rates on scaled positions [y_lo, y_hi) are mixed according to ``mix``."""
    y_lo: float
    y_hi: float
    mix: DiscreteLaw

    @property
    def length(self):
        return self.y_hi - self.y_lo

    def survival(self, t: float) -> float:
        """Σ_α ρ_α e^{-f_α t} for the block mixture."""
        return laplace_moment(self.mix, t, 0)


@dataclass(frozen=True)
class InitialProfile:
    """Piecewise-constant-in-y initial rate mixture μ_{y,0}(dw) on [0, 1)."""
    blocks: Tuple[ProfileBlock, ...]

    def __post_init__(self):
        if not self.blocks:
            raise DomainError("initial profile needs at least one block")
        edge = 0.0
        for block in self.blocks:
            if abs(block.y_lo - edge) > _COVER_TOL or not block.y_hi > block.y_lo:
                raise DomainError(f"profile blocks must tile [0, 1) in order; bad block {block.y_lo}..{block.y_hi}")
            edge = block.y_hi
        if abs(edge - 1.0) > _COVER_TOL:
            raise DomainError(f"profile blocks end at {edge}, expected 1")

    @classmethod
    def fresh(cls, law: AtomicLaw) -> "InitialProfile":
        """Uniform placement: U_α^0(y) = ρ_α (1 - y)."""
        if not isinstance(law, AtomicLaw):
            raise DomainError("a fresh profile needs an atomic rate law")
        return cls((ProfileBlock(0.0, 1.0, law.as_discrete()),))

    @classmethod
    def from_blocks(cls, blocks: Sequence[Tuple[float, float, DiscreteLaw]]) -> "InitialProfile":
        return cls(tuple(ProfileBlock(float(lo), float(hi), mix) for lo, hi, mix in blocks))

    @property
    def edges(self) -> np.ndarray:
        return np.array([b.y_lo for b in self.blocks] + [self.blocks[-1].y_hi])

    def survivals(self, t: float) -> np.ndarray:
        return np.array([b.survival(t) for b in self.blocks])

    def marginal(self) -> DiscreteLaw:
        """∫_0^1 μ_{y,0}(dw) dy as a discrete law."""
        pooled: Dict[float, float] = {}
        for block in self.blocks:
            for f, rho in zip(block.mix.rates, block.mix.weights):
                pooled[f] = pooled.get(f, 0.0) + block.length * rho
        total = math.fsum(pooled.values())
        return DiscreteLaw(tuple(pooled), tuple(v / total for v in pooled.values()))

    def weight_matrix(self, rates: np.ndarray) -> np.ndarray:
        """Block-by-atom matrix of ρ_α^{block}, aligned with ``rates``."""
        out = np.zeros((len(self.blocks), rates.size))
        for j, block in enumerate(self.blocks):
            for f, rho in zip(block.mix.rates, block.mix.weights):
                hit = np.flatnonzero(np.isclose(rates, f, rtol=1e-12, atol=0.0))
                if hit.size == 0:
                    raise DomainError(f"profile rate {f} is not an atom of the rate law")
                out[j, hit[0]] += rho
        return out

    def initial_tail(self, y, rates: np.ndarray) -> np.ndarray:
        """U_α^0(y) = ∫_y^1 μ_{z,0}({f_α}) dz for each atom; shape (len(y), len(rates))."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        edges = self.edges
        overlap = np.clip(edges[1:][None, :] - np.maximum(y[:, None], edges[:-1][None, :]), 0.0, None)
        return overlap @ self.weight_matrix(rates)


def _check_unit(name, y):
    if not (0.0 <= y < 1.0):
        raise DomainError(f"{name} must lie in [0, 1), got {y}")


def y_c_from(profile: InitialProfile, y: float, t: float) -> float:
    """
    Generalized characteristic y_C(y, t) = 1 - ∫_y^1 ∫ e^{-wt} μ_{z,0}(dw) dz.

    Args:
        profile (InitialProfile): Initial rate profile.
        y (float): Initial scaled position, 0 <= y < 1.
        t (float): Time, t >= 0.

    Returns:
        float: Scaled position at time t of a never-jumped item that started at y.
    """
    _check_unit("y", y)
    if t < 0.0:
        raise DomainError(f"time must be non-negative, got {t}")
    terms = [max(b.y_hi - max(y, b.y_lo), 0.0) * b.survival(t) for b in profile.blocks]
    return 1.0 - math.fsum(terms)


def _y_hat_array(profile: InitialProfile, ys: np.ndarray, t: float) -> np.ndarray:
    # y_C(., t) is affine on each block with slope S_b(t); invert block by block
    surv = profile.survivals(t)
    lengths = np.diff(profile.edges)
    tail = np.concatenate((np.cumsum((lengths * surv)[::-1])[::-1], [0.0]))
    image_lo = 1.0 - tail
    idx = np.clip(np.searchsorted(image_lo, ys, side="right") - 1, 0, len(profile.blocks) - 1)
    z = profile.edges[:-1][idx] + (ys - image_lo[idx]) / surv[idx]
    return np.clip(z, 0.0, np.nextafter(1.0, 0.0))


def y_hat(profile: InitialProfile, y: float, t: float) -> float:
    """
    Inverse of y ↦ y_C(y, t): the initial position of the never-jumped item now at y.

    Args:
        profile (InitialProfile): Initial rate profile.
        y (float): Current scaled position, y_C(t) <= y < 1.
        t (float): Time, t >= 0.

    Returns:
        float: ŷ(y, t) in [0, 1).
    """
    if t < 0.0:
        raise DomainError(f"time must be non-negative, got {t}")
    if not y < 1.0:
        raise DomainError(f"y_hat is defined for y < 1, got {y}")
    lower = y_c_from(profile, 0.0, t)
    if y < lower - BOUNDARY_TOL:
        raise DomainError(f"y={y} lies below the boundary y_C(t)={lower}")
    if y <= lower:
        return 0.0
    return float(_y_hat_array(profile, np.array([y]), t)[0])


class Regime(str, Enum):
    RENEWED = "renewed"
    INITIAL = "initial"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class EvolvedTail:
    """Per-atom tail masses U_α(y, t) = μ_t({f_α}, [y, 1))."""
    y: float
    t: float
    rates: Tuple[float, ...]
    masses: Tuple[float, ...]
    regime: Regime
    renewed_side: Optional[Tuple[float, ...]] = None
    initial_side: Optional[Tuple[float, ...]] = None
    density_available: bool = True

    @property
    def total(self) -> float:
        return math.fsum(self.masses)


def _atomic_law(model: LimitModel) -> AtomicLaw:
    if not isinstance(model.law, AtomicLaw):
        raise DomainError("the tail-mass formulation needs a discrete rate law")
    return model.law


def _renewed_masses(model, rates, weights, y):
    return weights * np.exp(-rates * model.t0(y))


def _initial_masses(profile, rates, y, t):
    z = y_hat(profile, y, t)
    return profile.initial_tail(z, rates)[0] * np.exp(-rates * t)


def evolved_tail(model: LimitModel, profile: InitialProfile, y: float, t: float) -> EvolvedTail:
    """
    Tail masses U_α(y, t) of the limiting rate/position measure.

    Renewed regime (y < y_C(t)): U_α = ρ_α e^{-f_α t_0(y)}. Initial regime
    (y > y_C(t)): U_α = U_α^0(ŷ(y, t)) e^{-f_α t}. Within 1e-12 of the
    characteristic both one-sided values are returned.

    Args:
        model (LimitModel): Engine over a discrete rate law.
        profile (InitialProfile): Initial rate profile over the same atoms.
        y (float): Scaled position, 0 <= y < 1.
        t (float): Time, t >= 0.

    Returns:
        EvolvedTail: Masses, regime and one-sided limits at the characteristic.
    """
    law = _atomic_law(model)
    _check_unit("y", y)
    if t < 0.0:
        raise DomainError(f"time must be non-negative, got {t}")
    rates, weights = law.atoms()
    yc = model.y_c(t)
    available = math.isfinite(model.mean_rate)
    key = tuple(rates.tolist())

    if abs(y - yc) <= BOUNDARY_TOL:
        renewed = tuple((weights * np.exp(-rates * t)).tolist())
        initial = tuple((profile.initial_tail(0.0, rates)[0] * np.exp(-rates * t)).tolist())
        return EvolvedTail(y, t, key, renewed, Regime.BOUNDARY, renewed, initial, available)
    if y < yc:
        masses = _renewed_masses(model, rates, weights, y)
        return EvolvedTail(y, t, key, tuple(masses.tolist()), Regime.RENEWED, density_available=available)
    masses = _initial_masses(profile, rates, y, t)
    return EvolvedTail(y, t, key, tuple(masses.tolist()), Regime.INITIAL, density_available=available)


def rate_density(model: LimitModel, profile: InitialProfile, y: float, t: float) -> Dict[float, float]:
    """
    Normalized law μ_{y,t}({f_α}) of the rate found at scaled position y.

    Renewed side: ∝ f_α ρ_α e^{-f_α t_0(y)}. Initial side: ∝ e^{-f_α t} μ_{ŷ,0}({f_α}).
    """
    law = _atomic_law(model)
    rates, weights = law.atoms()
    _check_unit("y", y)
    yc = model.y_c(t)
    if y < yc - BOUNDARY_TOL or (t > 0.0 and y <= yc):
        raw = rates * weights * np.exp(-rates * model.t0(y))
    else:
        z = y_hat(profile, max(y, yc), t)
        block = profile.blocks[min(int(np.searchsorted(profile.edges, z, side="right")) - 1, len(profile.blocks) - 1)]
        mix = block.mix.weights
        raw = np.zeros_like(rates)
        for f, rho in zip(block.mix.rates, mix):
            raw[np.isclose(rates, f, rtol=1e-12, atol=0.0)] += rho * math.exp(-f * t)
    total = math.fsum(raw.tolist())
    return {float(f): float(v / total) for f, v in zip(rates, raw)}


@dataclass(frozen=True)
class ResidualGrid:
    """Evaluation grid for the PDE residual check."""
    y_min: float
    y_max: float
    n_y: int
    t_min: float
    t_max: float
    n_t: int

    def __post_init__(self):
        if not (0.0 <= self.y_min < self.y_max < 1.0) or self.n_y < 1:
            raise DomainError("residual grid needs 0 <= y_min < y_max < 1 and n_y >= 1")
        if not (0.0 <= self.t_min < self.t_max) or self.n_t < 1:
            raise DomainError("residual grid needs 0 <= t_min < t_max and n_t >= 1")

    @property
    def ys(self):
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def ts(self):
        return np.linspace(self.t_min, self.t_max, self.n_t)


@dataclass
class PDEResidual:
    """Outcome of a residual evaluation at one finite-difference step."""
    rates: Tuple[float, ...]
    h: float
    max_residual: np.ndarray
    boundary_defect: np.ndarray
    excluded: int
    evaluated: int
    excluded_mask: np.ndarray = field(repr=False)


class _TailField:
    """Vectorized U_α(y, t) over a fixed set of y values, reusing t_0 across times."""

    def __init__(self, model, profile):
        law = _atomic_law(model)
        self.model = model
        self.profile = profile
        self.rates, self.weights = law.atoms()
        self._t0_cache: Dict[float, float] = {}

    def _t0(self, y):
        if y not in self._t0_cache:
            self._t0_cache[y] = self.model.t0(y)
        return self._t0_cache[y]

    def __call__(self, ys: np.ndarray, t: float) -> np.ndarray:
        yc = self.model.y_c(t)
        out = np.empty((ys.size, self.rates.size))
        renewed = ys < yc
        if renewed.any():
            t0s = np.array([self._t0(float(y)) for y in ys[renewed]])
            out[renewed] = self.weights[None, :] * np.exp(-np.outer(t0s, self.rates))
        if (~renewed).any():
            z = _y_hat_array(self.profile, ys[~renewed], t)
            out[~renewed] = self.profile.initial_tail(z, self.rates) * np.exp(-self.rates * t)[None, :]
        return out


def pde_residual(model: LimitModel, profile: InitialProfile, grid: ResidualGrid,
                 h: float = 5.0e-3, margin: Optional[float] = None) -> PDEResidual:
    """
    Central-difference residual of ∂U_α/∂t + Σ_β f_β U_β ∂U_α/∂y + f_α U_α = 0.

    Grid points whose stencil comes within ``margin`` (default 3h) of the
    characteristic y = y_C(t), or of a characteristic issued from an interior
    block edge, are flagged and excluded from the maximum.

    Args:
        model (LimitModel): Engine over a discrete rate law.
        profile (InitialProfile): Initial rate profile.
        grid (ResidualGrid): Evaluation points.
        h (float): Finite-difference step in y and t.
        margin (float, optional): Exclusion distance from characteristics.

    Returns:
        PDEResidual: Per-atom maximum residual and boundary-condition defect.
    """
    if not h > 0.0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    margin = 3.0 * h if margin is None else float(margin)
    tails = _TailField(model, profile)
    rates, weights = tails.rates, tails.weights
    ys, ts = grid.ys, grid.ts
    interior_edges = profile.edges[1:-1]

    excluded = np.zeros((ts.size, ys.size), dtype=bool)
    max_res = np.zeros(rates.size)
    for j, t in enumerate(ts):
        stencil_ok = (ys - h >= 0.0) & (ys + h < 1.0) & (t - h >= 0.0)
        for s in (t - h, t, t + h):
            if s < 0.0:
                continue
            chars = [model.y_c(s)] + [y_c_from(profile, float(e), s) for e in interior_edges]
            for c in chars:
                stencil_ok &= np.abs(ys - c) >= margin
        excluded[j] = ~stencil_ok
        if not stencil_ok.any():
            continue
        y_ok = ys[stencil_ok]
        u = tails(y_ok, t)
        du_dt = (tails(y_ok, t + h) - tails(y_ok, t - h)) / (2.0 * h)
        du_dy = (tails(y_ok + h, t) - tails(y_ok - h, t)) / (2.0 * h)
        flux = u @ rates
        res = du_dt + flux[:, None] * du_dy + rates[None, :] * u
        max_res = np.maximum(max_res, np.abs(res).max(axis=0))

    boundary = np.abs(np.vstack([tails(np.array([0.0]), float(t))[0] for t in ts]) - weights[None, :]).max(axis=0)
    n_excluded = int(excluded.sum())
    if n_excluded:
        logging.info(f"pde residual: {n_excluded} of {excluded.size} grid points excluded near characteristics")
    return PDEResidual(
        rates=tuple(rates.tolist()),
        h=h,
        max_residual=max_res,
        boundary_defect=boundary,
        excluded=n_excluded,
        evaluated=int(excluded.size - n_excluded),
        excluded_mask=excluded,
    )


@dataclass
class RefinementStudy:
    """Residuals at h and h/2 and the observed convergence order per atom."""
    coarse: PDEResidual
    fine: PDEResidual
    ratio: List[Optional[float]]
    order: List[Optional[float]]


def pde_refinement(model: LimitModel, profile: InitialProfile, grid: ResidualGrid,
                   h: float = 5.0e-3, margin: Optional[float] = None) -> RefinementStudy:
    """
    Residuals at steps h and h/2 on the same grid and exclusion set.

    Atoms whose coarse residual is at roundoff level (the solution is exactly
    linear, as for a single atom) get ``None`` for ratio and order.
    """
    margin = 3.0 * h if margin is None else float(margin)
    coarse = pde_residual(model, profile, grid, h=h, margin=margin)
    fine = pde_residual(model, profile, grid, h=h / 2.0, margin=margin)
    ratio, order = [], []
    for rc, rf in zip(coarse.max_residual, fine.max_residual):
        if rc < _ROUNDOFF_FLOOR or rf == 0.0:
            ratio.append(None)
            order.append(None)
        else:
            ratio.append(float(rc / rf))
            order.append(float(math.log2(rc / rf)))
    return RefinementStudy(coarse=coarse, fine=fine, ratio=ratio, order=order)

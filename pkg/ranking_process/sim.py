"""
Finite-N stochastic ranking process.

The event engine superposes the item clocks into one exponential clock of
rate Σw and picks the jumper with an alias table; positions live in a
Fenwick tree over slots so that rank queries and move-to-front cost
O(log n). Replica-heavy estimates use exact snapshot samplers built from
exponential races, which agree in law with the event engine.

Items are numbered 0..n-1, positions 1..n (position 1 is the top). An
order is the array of items listed by position.
"""
import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DomainError
from .hydro import InitialProfile
from .rates import largest_remainder

REPLICA_BLOCK = 256
_EVENT_BATCH = 1024
# n * edge products that land a few ulps above an integer still cut there
_CUT_SLACK = 1.0e-9

SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_rates(rates) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 1 or rates.size == 0:
        raise DomainError("rate vector must be one-dimensional and non-empty")
    if not np.all(np.isfinite(rates)) or np.any(rates <= 0.0):
        raise DomainError("all rates must be positive and finite")
    return rates


class AliasTable:
    """Vose alias table: O(1) draws from a fixed categorical law."""

    def __init__(self, weights):
        weights = np.asarray(weights, dtype=float)
        n = weights.size
        scaled = weights * n / weights.sum()
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        for i in small + large:
            self.prob[i] = 1.0

    def __len__(self):
        return self.prob.size

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size) * len(self)
        column = u.astype(np.int64)
        np.minimum(column, len(self) - 1, out=column)
        keep = (u - column) < self.prob[column]
        return np.where(keep, column, self.alias[column])


class SlotIndex:
    """
    Order-statistic index for move-to-front.

    Items sit in slots; a Fenwick tree counts occupied slots, so the rank of
    an item is a prefix count. A jumper takes the free slot just ahead of the
    current front. When the spare slots run out the index is compacted.
    """

    def __init__(self, order: Sequence[int], spare: Optional[int] = None):
        order = list(order)
        self.n = len(order)
        self.spare = max(self.n, 64) if spare is None else max(int(spare), 1)
        self._rebuild(order)

    def _rebuild(self, order):
        size = self.spare + self.n
        self._size = size
        self._slot_item = [-1] * size
        self._item_slot = [0] * self.n
        tree = [0] * (size + 1)
        for pos, item in enumerate(order):
            slot = self.spare + pos
            self._slot_item[slot] = item
            self._item_slot[item] = slot
            tree[slot + 1] = 1
        # linear-time Fenwick build
        for i in range(1, size + 1):
            parent = i + (i & -i)
            if parent <= size:
                tree[parent] += tree[i]
        self._tree = tree
        self._front = self.spare

    def _add(self, slot, delta):
        i = slot + 1
        tree, size = self._tree, self._size
        while i <= size:
            tree[i] += delta
            i += i & -i

    def _prefix(self, slot):
        i = slot + 1
        total = 0
        tree = self._tree
        while i > 0:
            total += tree[i]
            i -= i & -i
        return total

    def position(self, item: int) -> int:
        """1-based position of ``item``."""
        return self._prefix(self._item_slot[item])

    def move_to_front(self, item: int) -> int:
        """Move ``item`` to position 1 and return its old position."""
        old_slot = self._item_slot[item]
        old_position = self._prefix(old_slot)
        if old_position == 1:
            return 1
        if self._front == 0:
            self._rebuild(self.order())
            old_slot = self._item_slot[item]
        self._add(old_slot, -1)
        self._slot_item[old_slot] = -1
        self._front -= 1
        self._slot_item[self._front] = item
        self._item_slot[item] = self._front
        self._add(self._front, 1)
        return old_position

    def order(self) -> List[int]:
        return [item for item in self._slot_item if item >= 0]


@dataclass
class EventLog:
    """Event trace: one row per jump."""
    event_index: List[int] = field(default_factory=list)
    time: List[float] = field(default_factory=list)
    item: List[int] = field(default_factory=list)
    old_position: List[int] = field(default_factory=list)

    def record(self, index, time, item, old_position):
        self.event_index.append(index)
        self.time.append(time)
        self.item.append(item)
        self.old_position.append(old_position)

    def __len__(self):
        return len(self.event_index)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "event_index": self.event_index,
            "time": self.time,
            "item": self.item,
            "old_position": self.old_position,
        })


@dataclass
class RankingState:
    """Mutable configuration of one finite-N ranking process."""
    rates: np.ndarray
    index: SlotIndex
    alias: AliasTable
    clock: float = 0.0
    event_count: int = 0
    first_jump_time: np.ndarray = None
    jump_counts: np.ndarray = None

    def __post_init__(self):
        if self.first_jump_time is None:
            self.first_jump_time = np.full(self.n, np.inf)
        if self.jump_counts is None:
            self.jump_counts = np.zeros(self.n, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.rates.size)

    @property
    def rate_sum(self) -> float:
        return math.fsum(self.rates.tolist())

    @property
    def jumped(self) -> np.ndarray:
        return np.isfinite(self.first_jump_time)

    def position(self, item: int) -> int:
        return self.index.position(item)

    def order(self) -> np.ndarray:
        return np.asarray(self.index.order(), dtype=np.int64)

    def positions(self) -> np.ndarray:
        """Position of every item, indexed by item."""
        pos = np.empty(self.n, dtype=np.int64)
        pos[self.order()] = np.arange(1, self.n + 1)
        return pos


def _check_order(order, n):
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise DomainError("initial order must be a permutation of the item indices")
    return order


def new_state(rates, initial_order: Optional[Sequence[int]] = None) -> RankingState:
    """
    Build a process at time 0.

    Args:
        rates (array-like): Positive jump rate of each item.
        initial_order (sequence, optional): Items listed by position; identity by default.

    Returns:
        RankingState: Fresh state with clock 0.
    """
    rates = _check_rates(rates)
    order = np.arange(rates.size) if initial_order is None else _check_order(initial_order, rates.size)
    return RankingState(rates=rates, index=SlotIndex(order.tolist()), alias=AliasTable(rates))


def new_state_from_profile(profile: InitialProfile, n: int, seed: SeedLike, draw: str = "stratified") -> RankingState:
    """
    Discretize an initial profile: positions in block [⌈N y_lo⌉, ⌈N y_hi⌉) get
    rates from that block's mixture; item k starts at position k + 1.

    ``stratified`` assigns largest-remainder atom counts per block and shuffles
    them; ``iid`` draws each rate independently.
    """
    n = int(n)
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    rng = _rng(seed)
    # one cut per shared edge, so neighbouring blocks tile 0..n without gaps
    cuts = np.clip(np.ceil(n * profile.edges - _CUT_SLACK).astype(np.int64), 0, n)
    cuts[0], cuts[-1] = 0, n
    rates = np.full(n, np.nan)
    for block, lo, hi in zip(profile.blocks, cuts[:-1].tolist(), cuts[1:].tolist()):
        m = hi - lo
        if m <= 0:
            continue
        atoms = np.asarray(block.mix.rates, dtype=float)
        if draw == "stratified":
            values = np.repeat(atoms, largest_remainder(m, block.mix.weights))
            rng.shuffle(values)
        elif draw == "iid":
            values = rng.choice(atoms, size=m, p=np.asarray(block.mix.weights) / math.fsum(block.mix.weights))
        else:
            raise DomainError(f"unknown profile draw {draw!r}")
        rates[lo:hi] = values
    if np.isnan(rates).any():
        raise DomainError("profile blocks left positions without a rate")
    return new_state(rates)


def step_until(state: RankingState, t_end: float, seed: SeedLike, trace: Optional[EventLog] = None) -> int:
    """
    Advance the process to time ``t_end``.

    Waiting times are Exp(Σw), jumpers are drawn with probability w_i / Σw,
    and each jump applies move-to-front. The clock equals ``t_end`` on return.

    Args:
        state (RankingState): Process to advance in place.
        t_end (float): Target time, not before the current clock.
        seed (int or Generator): Randomness source.
        trace (EventLog, optional): Receives one row per jump.

    Returns:
        int: Number of jumps performed.
    """
    if t_end < state.clock:
        raise DomainError(f"cannot step back from t={state.clock} to t={t_end}")
    rng = _rng(seed)
    rate_sum = state.rate_sum
    index, first_jump, counts = state.index, state.first_jump_time, state.jump_counts
    clock = state.clock
    done = 0
    while True:
        waits = rng.standard_exponential(_EVENT_BATCH) / rate_sum
        jumpers = state.alias.draw(rng, _EVENT_BATCH)
        for wait, item in zip(waits.tolist(), jumpers.tolist()):
            clock += wait
            if clock > t_end:
                state.clock = float(t_end)
                state.event_count += done
                return done
            old = index.move_to_front(item)
            if not math.isfinite(first_jump[item]):
                first_jump[item] = clock
            counts[item] += 1
            if trace is not None:
                trace.record(state.event_count + done, clock, item, old)
            done += 1


def sample_stationary_order(rates, seed: SeedLike) -> np.ndarray:
    """
    Exact draw from the stationary move-to-front law.

    Sorting E_i / w_i for independent standard exponentials E_i is the
    size-biased permutation: the first item is picked with probability
    ∝ w, then the next among the rest, and so on.
    """
    rates = _check_rates(rates)
    keys = _rng(seed).standard_exponential(rates.size) / rates
    return np.argsort(keys, kind="stable")


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Replica mean with its standard error (``None`` for a single replica)."""
    mean: float
    std_error: Optional[float]
    reps: int

    @classmethod
    def from_values(cls, values) -> "MonteCarloEstimate":
        values = np.asarray(values, dtype=float)
        reps = int(values.size)
        if reps == 0:
            raise DomainError("no replicas to estimate from")
        se = float(values.std(ddof=1) / math.sqrt(reps)) if reps > 1 else None
        return cls(mean=float(values.mean()), std_error=se, reps=reps)


class SamplingMode(str, Enum):
    STATIONARY = "stationary"
    TRANSIENT = "transient"


@dataclass
class SearchCostSamples:
    """Search costs (positions of requested items) and the requested rates."""
    mode: SamplingMode
    t: Optional[float]
    costs: np.ndarray
    rates: np.ndarray
    seed: int
    n: int

    @property
    def reps(self):
        return int(self.costs.size)

    @property
    def scaled(self) -> np.ndarray:
        """C_N / N."""
        return self.costs / float(self.n)

    def tail(self, x: float) -> MonteCarloEstimate:
        """Estimate of P(C_N > N x)."""
        return MonteCarloEstimate.from_values(self.costs > self.n * x)

    def mean(self) -> MonteCarloEstimate:
        return MonteCarloEstimate.from_values(self.scaled)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"cost": self.costs, "rate": self.rates})


def _block_sizes(reps):
    full, rest = divmod(int(reps), REPLICA_BLOCK)
    return [REPLICA_BLOCK] * full + ([rest] if rest else [])


def _run_blocks(worker: Callable, tasks: list, threads: int) -> list:
    if threads > 1 and len(tasks) > 1:
        with multiprocessing.Pool(processes=min(threads, len(tasks))) as pool:
            return pool.map(worker, tasks)
    return [worker(task) for task in tasks]


def _stationary_cost_block(args):
    rates, p, count, seed, block = args
    rng = np.random.default_rng([seed, block])
    costs = np.empty(count, dtype=np.int64)
    requested = rng.choice(rates.size, size=count, p=p)
    for r in range(count):
        keys = rng.standard_exponential(rates.size) / rates
        q = requested[r]
        costs[r] = 1 + int(np.count_nonzero(keys < keys[q]))
    return costs, requested


def _transient_cost_block(args):
    rates, p, count, seed, block, t, initial_position = args
    rng = np.random.default_rng([seed, block])
    costs = np.empty(count, dtype=np.int64)
    requested = rng.choice(rates.size, size=count, p=p)
    for r in range(count):
        # time back to the last jump before t; Exp(w) truncated at t means never jumped
        back = rng.standard_exponential(rates.size) / rates
        jumped = back <= t
        q = requested[r]
        if jumped[q]:
            costs[r] = 1 + int(np.count_nonzero(jumped & (back < back[q])))
        else:
            ahead = np.count_nonzero(~jumped & (initial_position < initial_position[q]))
            costs[r] = int(np.count_nonzero(jumped)) + 1 + int(ahead)
    return costs, requested


def _event_cost_block(args):
    rates, count, seed, block, t, order = args
    rng = np.random.default_rng([seed, block])
    costs = np.empty(count, dtype=np.int64)
    requested = np.empty(count, dtype=np.int64)
    for r in range(count):
        state = new_state(rates, order)
        step_until(state, t, rng)
        q = int(state.alias.draw(rng, 1)[0])
        requested[r] = q
        costs[r] = state.position(q)
    return costs, requested


def sample_search_costs(rates, mode: Union[SamplingMode, str], reps: int, seed: int,
                        t: Optional[float] = None, initial_order: Optional[Sequence[int]] = None,
                        method: str = "snapshot", threads: int = 1,
                        burn_in: Optional[float] = None) -> SearchCostSamples:
    """
    Draw ``reps`` independent search costs C_N.

    Stationary mode pairs a request drawn with p_i with an independent
    stationary order. Transient mode evolves the configured initial order to
    time ``t`` and requests at t. ``snapshot`` samples configurations
    directly; ``events`` runs the event engine per replica (stationary
    ``events`` starts from the initial order and burns in for ``burn_in``,
    default 50 / min w).

    Replicas are split into fixed blocks seeded by (seed, block index), so
    results do not depend on ``threads``.

    Args:
        rates (array-like): Jump rates of the n items.
        mode (SamplingMode or str): ``stationary`` or ``transient``.
        reps (int): Number of replicas, at least 1.
        seed (int): Master seed.
        t (float, optional): Request time for transient mode.
        initial_order (sequence, optional): Items by position at time 0.
        method (str): ``snapshot`` or ``events``.
        threads (int): Worker processes.
        burn_in (float, optional): Burn-in time for stationary ``events``.

    Returns:
        SearchCostSamples: Costs and requested rates.
    """
    rates = _check_rates(rates)
    mode = SamplingMode(mode)
    if int(reps) < 1:
        raise DomainError(f"need reps >= 1, got {reps}")
    order = np.arange(rates.size) if initial_order is None else _check_order(initial_order, rates.size)
    if mode is SamplingMode.TRANSIENT:
        if t is None or t < 0.0:
            raise DomainError("transient sampling needs a time t >= 0")
        horizon = float(t)
    else:
        horizon = 50.0 / float(rates.min()) if burn_in is None else float(burn_in)
    p = rates / rates.sum()
    sizes = _block_sizes(reps)

    if method == "snapshot":
        if mode is SamplingMode.STATIONARY:
            tasks = [(rates, p, c, seed, b) for b, c in enumerate(sizes)]
            worker = _stationary_cost_block
        else:
            initial_position = np.empty(rates.size, dtype=np.int64)
            initial_position[order] = np.arange(1, rates.size + 1)
            tasks = [(rates, p, c, seed, b, horizon, initial_position) for b, c in enumerate(sizes)]
            worker = _transient_cost_block
    elif method == "events":
        tasks = [(rates, c, seed, b, horizon, order) for b, c in enumerate(sizes)]
        worker = _event_cost_block
    else:
        raise DomainError(f"unknown sampling method {method!r}")

    logging.debug(f"sampling {reps} {mode.value} search costs, n={rates.size}, method={method}")
    parts = _run_blocks(worker, tasks, threads)
    costs = np.concatenate([c for c, _ in parts])
    requested = np.concatenate([q for _, q in parts])
    return SearchCostSamples(
        mode=mode,
        t=horizon if mode is SamplingMode.TRANSIENT else None,
        costs=costs,
        rates=rates[requested],
        seed=seed,
        n=int(rates.size),
    )


def empirical_boundary(state: RankingState) -> float:
    """y_C^(N)(t) = (1/N) #{i : item i has jumped by the current clock}."""
    return float(np.count_nonzero(state.first_jump_time <= state.clock)) / state.n


def boundary_trace(state: RankingState, t_grid: Sequence[float], seed: SeedLike) -> np.ndarray:
    """Advance ``state`` through ``t_grid`` and record the empirical boundary at each time."""
    rng = _rng(seed)
    out = []
    for t in t_grid:
        step_until(state, float(t), rng)
        out.append(empirical_boundary(state))
    return np.array(out)


def _boundary_block(args):
    rates, count, seed, block, t_grid = args
    rng = np.random.default_rng([seed, block])
    out = np.empty((count, t_grid.size))
    for r in range(count):
        first = rng.standard_exponential(rates.size) / rates
        first.sort()
        out[r] = np.searchsorted(first, t_grid, side="right") / rates.size
    return out


def _event_boundary_block(args):
    rates, count, seed, block, t_grid = args
    rng = np.random.default_rng([seed, block])
    out = np.empty((count, t_grid.size))
    for r in range(count):
        out[r] = boundary_trace(new_state(rates), t_grid, rng)
    return out


def sample_boundary(rates, t_grid: Sequence[float], reps: int, seed: int, threads: int = 1,
                    method: str = "snapshot") -> List[MonteCarloEstimate]:
    """
    Replica estimates of y_C^(N)(t) on ``t_grid``.

    ``snapshot`` draws first-jump times τ_i ~ Exp(w_i) directly; ``events``
    runs the move-to-front engine through the grid.

    Returns:
        list[MonteCarloEstimate]: One estimate per grid time.
    """
    rates = _check_rates(rates)
    t_grid = np.asarray(t_grid, dtype=float)
    if int(reps) < 1:
        raise DomainError(f"need reps >= 1, got {reps}")
    if method == "snapshot":
        worker = _boundary_block
    elif method == "events":
        if np.any(np.diff(t_grid) < 0.0):
            raise DomainError("the event engine needs a non-decreasing time grid")
        worker = _event_boundary_block
    else:
        raise DomainError(f"unknown sampling method {method!r}")
    tasks = [(rates, c, seed, b, t_grid) for b, c in enumerate(_block_sizes(reps))]
    values = np.vstack(_run_blocks(worker, tasks, threads))
    return [MonteCarloEstimate.from_values(values[:, j]) for j in range(t_grid.size)]


def empirical_tail(state: RankingState, y: float, atoms: Sequence[float]) -> np.ndarray:
    """
    Per-atom empirical tail masses (1/N) #{i : w_i = f_α, (X_i - 1)/N >= y}.

    Every rate must match one of ``atoms``.
    """
    atoms = np.asarray(atoms, dtype=float)
    match = np.isclose(state.rates[:, None], atoms[None, :], rtol=1e-12, atol=0.0)
    if not np.all(match.any(axis=1)):
        raise DomainError("rate vector has values outside the given atoms")
    bucket = match.argmax(axis=1)
    scaled = (state.positions() - 1) / float(state.n)
    beyond = scaled >= y
    return np.bincount(bucket[beyond], minlength=atoms.size) / float(state.n)


def _miss_block(args):
    rates, p, count, seed, block, t, method = args
    rng = np.random.default_rng([seed, block])
    if method == "snapshot":
        requested = rng.choice(rates.size, size=count, p=p)
        first = rng.standard_exponential(count) / rates[requested]
        return first > t
    out = np.empty(count, dtype=bool)
    for r in range(count):
        state = new_state(rates)
        step_until(state, t, rng)
        q = int(state.alias.draw(rng, 1)[0])
        out[r] = not state.jumped[q]
    return out


def empirical_miss(rates, t: float, reps: int, seed: int, method: str = "snapshot", threads: int = 1) -> MonteCarloEstimate:
    """Fraction of replicas whose request at time ``t`` hits a never-jumped item."""
    rates = _check_rates(rates)
    if t < 0.0:
        raise DomainError(f"time must be non-negative, got {t}")
    if method not in ("snapshot", "events"):
        raise DomainError(f"unknown sampling method {method!r}")
    p = rates / rates.sum()
    tasks = [(rates, p, c, seed, b, float(t), method) for b, c in enumerate(_block_sizes(reps))]
    return MonteCarloEstimate.from_values(np.concatenate(_run_blocks(_miss_block, tasks, threads)))


def ks_distance(samples, cdf: Callable) -> float:
    """Two-sided Kolmogorov-Smirnov distance between ``samples`` and a continuous CDF."""
    return float(stats.kstest(np.asarray(samples, dtype=float), cdf).statistic)

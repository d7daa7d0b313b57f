"""
Tests for the finite-N event engine, the snapshot samplers and the
replica estimators.
"""
import math

import numpy as np
import pytest
from scipy import stats

from ranking_process.errors import DomainError
from ranking_process.hydro import InitialProfile, LimitModel, evolved_tail
from ranking_process.rates import DiscreteLaw
from ranking_process.sim import (
    AliasTable,
    EventLog,
    MonteCarloEstimate,
    SlotIndex,
    boundary_trace,
    empirical_boundary,
    empirical_miss,
    empirical_tail,
    ks_distance,
    new_state,
    new_state_from_profile,
    sample_boundary,
    sample_search_costs,
    sample_stationary_order,
    step_until,
)

SMALL_RATES = np.array([1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0])
TWO_POINT = DiscreteLaw.from_pairs([(1.0, 0.5), (2.0, 0.5)])


def exact_stationary_mean(rates):
    """E C_N = Σ_i p_i (1 + Σ_{j≠i} w_j / (w_i + w_j)) for the finite system."""
    p = rates / rates.sum()
    pair = rates[None, :] / (rates[:, None] + rates[None, :])
    np.fill_diagonal(pair, 0.0)
    return float(np.sum(p * (1.0 + pair.sum(axis=1))))


def within(est, expected, k=5.0):
    return abs(est.mean - expected) <= k * est.std_error


def poisson_pvalue(counts, mean, top):
    """χ² goodness of fit of integer counts to Poisson(mean), lumping values >= top."""
    observed = np.bincount(np.minimum(counts, top), minlength=top + 1)
    expected = np.append(stats.poisson.pmf(np.arange(top), mean), stats.poisson.sf(top - 1, mean)) * counts.size
    return stats.chisquare(observed, expected).pvalue


class TestAliasTable:
    def test_frequencies(self):
        weights = np.array([1.0, 2.0, 3.0, 4.0])
        draws = AliasTable(weights).draw(np.random.default_rng(11), 200_000)
        observed = np.bincount(draws, minlength=4)
        expected = weights / weights.sum() * draws.size
        assert stats.chisquare(observed, expected).pvalue > 1e-3

    def test_single_item(self):
        draws = AliasTable([5.0]).draw(np.random.default_rng(0), 10)
        np.testing.assert_array_equal(draws, np.zeros(10))

    def test_zero_weight_never_drawn(self):
        draws = AliasTable([1.0, 0.0, 1.0]).draw(np.random.default_rng(3), 10_000)
        assert not np.any(draws == 1)


class TestSlotIndex:
    @pytest.mark.parametrize("spare", [None, 1, 3])
    def test_matches_naive_list(self, spare):
        rng = np.random.default_rng(5)
        n = 12
        naive = list(rng.permutation(n))
        index = SlotIndex(naive, spare=spare)
        for item in rng.integers(0, n, size=300).tolist():
            old = naive.index(item) + 1
            assert index.move_to_front(item) == old
            naive.remove(item)
            naive.insert(0, item)
            assert index.order() == naive
        for pos, item in enumerate(naive, start=1):
            assert index.position(item) == pos

    def test_front_item_stays(self):
        index = SlotIndex([2, 0, 1])
        assert index.move_to_front(2) == 1
        assert index.order() == [2, 0, 1]


class TestEventEngine:
    def test_clock_and_counts(self):
        state = new_state(SMALL_RATES)
        trace = EventLog()
        jumps = step_until(state, 2.0, 7, trace)
        assert state.clock == 2.0
        assert state.event_count == jumps == len(trace)
        assert int(state.jump_counts.sum()) == jumps
        frame = trace.to_frame()
        assert list(frame.columns) == ["event_index", "time", "item", "old_position"]
        assert frame["time"].is_monotonic_increasing
        assert frame["time"].max() <= 2.0
        np.testing.assert_array_equal(frame["event_index"], np.arange(jumps))

    def test_last_jumper_is_on_top(self):
        state = new_state(SMALL_RATES)
        trace = EventLog()
        step_until(state, 3.0, 1, trace)
        assert state.order()[0] == trace.item[-1]
        assert sorted(state.order().tolist()) == list(range(SMALL_RATES.size))

    def test_first_jump_times(self):
        state = new_state(SMALL_RATES)
        trace = EventLog()
        step_until(state, 1.0, 2, trace)
        frame = trace.to_frame()
        first = frame.groupby("item")["time"].min()
        for item, t in first.items():
            assert state.first_jump_time[item] == t
        assert np.all(np.isinf(state.first_jump_time[~state.jumped]))

    def test_resume_in_steps(self):
        state = new_state(SMALL_RATES)
        rng = np.random.default_rng(4)
        step_until(state, 0.5, rng)
        step_until(state, 1.5, rng)
        assert state.clock == 1.5

    def test_cannot_step_back(self):
        state = new_state(SMALL_RATES)
        step_until(state, 1.0, 0)
        with pytest.raises(DomainError):
            step_until(state, 0.5, 0)

    def test_scale_covariance(self):
        # doubling every rate and halving time replays the same path
        a, b = new_state(SMALL_RATES), new_state(2.0 * SMALL_RATES)
        step_until(a, 2.0, 99)
        step_until(b, 1.0, 99)
        np.testing.assert_array_equal(a.order(), b.order())
        np.testing.assert_array_equal(a.jump_counts, b.jump_counts)

    def test_jump_counts_are_poisson(self):
        rates = np.repeat([0.5, 2.0], 1000)
        state = new_state(rates)
        step_until(state, 2.0, 31)
        for w, top in ((0.5, 4), (2.0, 9)):
            counts = state.jump_counts[rates == w].astype(np.int64)
            assert poisson_pvalue(counts, 2.0 * w, top) > 1e-3

    def test_stationary_law_is_invariant(self):
        rates = np.array([1.0, 1.0, 2.0, 2.0, 3.0, 3.0])
        rng = np.random.default_rng(41)
        evolved = np.zeros(rates.size, dtype=np.int64)
        fresh = np.zeros(rates.size, dtype=np.int64)
        for _ in range(20_000):
            state = new_state(rates, initial_order=sample_stationary_order(rates, rng))
            step_until(state, 0.7, rng)
            evolved[state.position(0) - 1] += 1
            fresh[int(np.flatnonzero(sample_stationary_order(rates, rng) == 0)[0])] += 1
        assert stats.chi2_contingency(np.vstack([evolved, fresh])).pvalue > 1e-3

    def test_point_mass_boundary_at_long_time(self):
        n, t = 512, 20.0
        state = new_state(np.ones(n))
        step_until(state, t, 20)
        yc = LimitModel(DiscreteLaw.point_mass(1.0)).y_c(t)
        assert abs(empirical_boundary(state) - yc) <= 3.0 * math.sqrt(yc * (1.0 - yc) / n)

    def test_initial_order(self):
        state = new_state([1.0, 1.0, 1.0], initial_order=[2, 0, 1])
        np.testing.assert_array_equal(state.positions(), [2, 3, 1])
        with pytest.raises(DomainError):
            new_state([1.0, 1.0], initial_order=[0, 0])

    @pytest.mark.parametrize("rates", [[], [1.0, 0.0], [1.0, np.inf]])
    def test_bad_rates(self, rates):
        with pytest.raises(DomainError):
            new_state(rates)


class TestProfileDiscretization:
    def test_blocks(self):
        profile = InitialProfile.from_blocks([
            (0.0, 0.5, DiscreteLaw.point_mass(1.0)),
            (0.5, 1.0, DiscreteLaw.point_mass(2.0)),
        ])
        state = new_state_from_profile(profile, 10, seed=0)
        np.testing.assert_array_equal(state.rates, [1.0] * 5 + [2.0] * 5)
        np.testing.assert_array_equal(state.order(), np.arange(10))

    def test_edges_within_tolerance_leave_no_gap(self):
        profile = InitialProfile.from_blocks([
            (0.0, 0.3 - 1e-13, DiscreteLaw.point_mass(1.0)),
            (0.3, 1.0, DiscreteLaw.point_mass(2.0)),
        ])
        state = new_state_from_profile(profile, 10, seed=0)
        np.testing.assert_array_equal(state.rates, [1.0] * 3 + [2.0] * 7)

    def test_stratified_counts(self):
        profile = InitialProfile.fresh(DiscreteLaw.from_pairs([(1.0, 0.5), (2.0, 0.5)]))
        state = new_state_from_profile(profile, 7, seed=1)
        assert np.count_nonzero(state.rates == 2.0) in (3, 4)
        assert state.n == 7

    def test_unknown_draw(self):
        profile = InitialProfile.fresh(DiscreteLaw.point_mass(1.0))
        with pytest.raises(DomainError):
            new_state_from_profile(profile, 4, seed=0, draw="sobol")


class TestStationarySampling:
    def test_order_law(self):
        rng = np.random.default_rng(21)
        rates = np.array([1.0, 2.0, 3.0])
        hits = sum(tuple(sample_stationary_order(rates, rng).tolist()) == (2, 1, 0) for _ in range(20_000))
        # 3/6 * 2/3
        assert hits / 20_000 == pytest.approx(1.0 / 3.0, abs=0.015)

    def test_snapshot_mean(self):
        samples = sample_search_costs(SMALL_RATES, "stationary", reps=4000, seed=3)
        assert within(samples.mean(), exact_stationary_mean(SMALL_RATES) / SMALL_RATES.size)

    def test_events_agree_with_exact_mean(self):
        samples = sample_search_costs(SMALL_RATES, "stationary", reps=1500, seed=8, method="events", burn_in=15.0)
        assert within(samples.mean(), exact_stationary_mean(SMALL_RATES) / SMALL_RATES.size)

    def test_costs_are_positions(self):
        samples = sample_search_costs(SMALL_RATES, "stationary", reps=300, seed=1)
        assert samples.costs.min() >= 1
        assert samples.costs.max() <= SMALL_RATES.size
        assert set(np.unique(samples.rates)) <= {1.0, 2.0}
        assert samples.reps == 300
        assert list(samples.to_frame().columns) == ["cost", "rate"]

    def test_reproducible(self):
        a = sample_search_costs(SMALL_RATES, "stationary", reps=600, seed=12)
        b = sample_search_costs(SMALL_RATES, "stationary", reps=600, seed=12)
        np.testing.assert_array_equal(a.costs, b.costs)

    def test_threads_do_not_change_results(self):
        a = sample_search_costs(SMALL_RATES, "stationary", reps=600, seed=12)
        b = sample_search_costs(SMALL_RATES, "stationary", reps=600, seed=12, threads=2)
        np.testing.assert_array_equal(a.costs, b.costs)
        np.testing.assert_array_equal(a.rates, b.rates)

    def test_bad_arguments(self):
        with pytest.raises(DomainError):
            sample_search_costs(SMALL_RATES, "stationary", reps=0, seed=1)
        with pytest.raises(DomainError):
            sample_search_costs(SMALL_RATES, "stationary", reps=10, seed=1, method="exact")
        with pytest.raises(ValueError):
            sample_search_costs(SMALL_RATES, "eventual", reps=10, seed=1)


class TestTransientSampling:
    def test_time_zero_is_initial_order(self):
        samples = sample_search_costs([1.0, 1.0, 1.0, 1.0], "transient", reps=200, seed=2, t=0.0,
                                      initial_order=[3, 2, 1, 0])
        # equal rates: the request is uniform over the fixed initial positions
        assert samples.costs.min() >= 1
        assert samples.t == 0.0
        assert within(samples.mean(), 2.5 / 4.0)

    def test_snapshot_agrees_with_events(self):
        snap = sample_search_costs(SMALL_RATES, "transient", reps=3000, seed=4, t=0.3).mean()
        events = sample_search_costs(SMALL_RATES, "transient", reps=1500, seed=5, t=0.3, method="events").mean()
        se = math.hypot(snap.std_error, events.std_error)
        assert abs(snap.mean - events.mean) <= 5.0 * se

    def test_needs_time(self):
        with pytest.raises(DomainError):
            sample_search_costs(SMALL_RATES, "transient", reps=10, seed=1)


class TestBoundaryAndMiss:
    def test_sample_boundary_delta(self):
        grid = [0.25, 1.0, 2.0]
        estimates = sample_boundary(np.ones(500), grid, reps=300, seed=6)
        for t, est in zip(grid, estimates):
            assert est.reps == 300
            assert within(est, 1.0 - math.exp(-t))

    def test_boundary_events_agree_with_snapshot(self):
        grid = [0.25, 1.0]
        snap = sample_boundary(np.ones(200), grid, reps=300, seed=6)
        events = sample_boundary(np.ones(200), grid, reps=300, seed=7, method="events")
        for a, b in zip(snap, events):
            assert abs(a.mean - b.mean) <= 5.0 * math.hypot(a.std_error, b.std_error)

    def test_boundary_methods(self):
        with pytest.raises(DomainError):
            sample_boundary(np.ones(10), [0.5], reps=5, seed=1, method="exact")
        with pytest.raises(DomainError):
            sample_boundary(np.ones(10), [1.0, 0.5], reps=5, seed=1, method="events")

    def test_trace_is_non_decreasing(self):
        state = new_state(SMALL_RATES)
        values = boundary_trace(state, [0.1, 0.5, 1.0, 3.0], 9)
        assert np.all(np.diff(values) >= 0.0)
        assert empirical_boundary(state) == values[-1]
        assert state.clock == 3.0

    def test_miss_snapshot(self):
        t = 0.5
        p = SMALL_RATES / SMALL_RATES.sum()
        expected = float(np.sum(p * np.exp(-SMALL_RATES * t)))
        assert within(empirical_miss(SMALL_RATES, t, reps=20_000, seed=10), expected)

    def test_miss_events(self):
        t = 0.5
        p = SMALL_RATES / SMALL_RATES.sum()
        expected = float(np.sum(p * np.exp(-SMALL_RATES * t)))
        assert within(empirical_miss(SMALL_RATES, t, reps=2000, seed=10, method="events"), expected)

    def test_miss_at_time_zero(self):
        est = empirical_miss(SMALL_RATES, 0.0, reps=50, seed=1)
        assert est.mean == 1.0

    def test_empirical_tail(self):
        state = new_state([1.0, 2.0, 1.0, 2.0])
        np.testing.assert_allclose(empirical_tail(state, 0.5, [1.0, 2.0]), [0.25, 0.25])
        np.testing.assert_allclose(empirical_tail(state, 0.0, [1.0, 2.0]), [0.5, 0.5])
        with pytest.raises(DomainError):
            empirical_tail(state, 0.5, [1.0])


class TestEstimates:
    def test_single_replica_has_no_error(self):
        est = MonteCarloEstimate.from_values([0.3])
        assert est.std_error is None
        assert est.mean == 0.3

    def test_standard_error(self):
        est = MonteCarloEstimate.from_values([0.0, 1.0, 0.0, 1.0])
        assert est.mean == 0.5
        assert est.std_error == pytest.approx(math.sqrt(1.0 / 3.0) / 2.0)

    def test_empty(self):
        with pytest.raises(DomainError):
            MonteCarloEstimate.from_values([])

    def test_ks_distance(self):
        samples = np.random.default_rng(0).random(5000)
        assert ks_distance(samples, stats.uniform.cdf) < 0.03
        assert ks_distance(samples + 0.5, stats.uniform.cdf) > 0.4


class TestHydrodynamicLimit:
    def test_block_profile_tail_masses(self):
        # slow items on top, fast items below; y_C(0.5) is about 0.51
        profile = InitialProfile.from_blocks([
            (0.0, 0.5, DiscreteLaw.point_mass(1.0)),
            (0.5, 1.0, DiscreteLaw.point_mass(2.0)),
        ])
        model = LimitModel(TWO_POINT)
        ys = [0.1, 0.3, 0.6, 0.9]
        rng = np.random.default_rng(8)
        total = np.zeros((len(ys), 2))
        reps = 20
        for _ in range(reps):
            state = new_state_from_profile(profile, 4096, rng)
            step_until(state, 0.5, rng)
            total += np.array([empirical_tail(state, y, [1.0, 2.0]) for y in ys])
        for y, got in zip(ys, total / reps):
            np.testing.assert_allclose(got, evolved_tail(model, profile, y, 0.5).masses, atol=1e-2)

    def test_fresh_profile_tail_masses(self):
        profile = InitialProfile.fresh(TWO_POINT)
        model = LimitModel(TWO_POINT)
        rng = np.random.default_rng(9)
        rates = np.tile([1.0, 2.0], 2048)
        got = np.zeros(2)
        for _ in range(10):
            state = new_state(rates)
            step_until(state, 1.0, rng)
            got += empirical_tail(state, 0.8, [1.0, 2.0])
        np.testing.assert_allclose(got / 10, evolved_tail(model, profile, 0.8, 1.0).masses, atol=1e-2)

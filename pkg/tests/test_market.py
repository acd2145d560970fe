from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wattchain.energy_data import SeriesKind
from wattchain.market import (InsufficientSurplus, MarketEngine,
                              NegativeInput, NodeMarketState, OutOfRange,
                              TradeOrder, UnknownNode, apply_trade,
                              compute_surplus, tick)

from conftest import DAY, make_series


def surplus_oracle(gen, demand, grid):
    """Branch-for-branch transcription of the printed surplus-detection
    routine, with grid service clamped to the actual demand and the final
    non-negativity clamp."""
    if demand == grid:
        p_grid = grid
        gen_left = gen - (demand - p_grid)
    elif demand > grid:
        p_grid = grid
        gen_left = gen - (demand - p_grid)
    else:  # demand < grid: the grid serves at most the demand
        p_grid = demand
        gen_left = gen - (demand - p_grid)
    if gen_left <= 0:
        gen_left = 0.0
    return float(gen_left)


class TestComputeSurplus:
    def test_five_kw_example(self):
        assert compute_surplus(8000.0, 2700.0, 0.0) == 5300.0

    def test_night_time(self):
        assert compute_surplus(0.0, 4200.0, 0.0) == 0.0

    def test_exact_balance(self):
        assert compute_surplus(1000.0, 1000.0, 0.0) == 0.0

    def test_negative_input_rejected(self):
        with pytest.raises(NegativeInput):
            compute_surplus(-1.0, 0.0, 0.0)
        with pytest.raises(NegativeInput):
            compute_surplus(0.0, -1.0, 0.0)
        with pytest.raises(NegativeInput):
            compute_surplus(0.0, 0.0, -1.0)

    @given(st.floats(min_value=0, max_value=1e6),
           st.floats(min_value=0, max_value=1e6),
           st.floats(min_value=0, max_value=1e6))
    @settings(max_examples=300, deadline=None)
    def test_matches_pseudocode_oracle(self, gen, demand, grid):
        assert compute_surplus(gen, demand, grid) == surplus_oracle(gen, demand, grid)

    @given(st.floats(min_value=0, max_value=1e6),
           st.floats(min_value=0, max_value=1e6))
    @settings(max_examples=200, deadline=None)
    def test_zero_grid_reduces_to_max(self, gen, demand):
        assert compute_surplus(gen, demand, 0.0) == max(gen - demand, 0.0)

    @given(st.floats(min_value=0, max_value=1e6),
           st.floats(min_value=0, max_value=1e6),
           st.floats(min_value=0, max_value=1e6))
    @settings(max_examples=200, deadline=None)
    def test_surplus_never_exceeds_generation(self, gen, demand, grid):
        surplus = compute_surplus(gen, demand, grid)
        assert 0.0 <= surplus <= gen


class TestTradeOrder:
    def test_zero_units_rejected(self):
        with pytest.raises(ValueError):
            TradeOrder("o1", "a", "b", 0, DAY)

    def test_self_trade_rejected(self):
        with pytest.raises(ValueError):
            TradeOrder("o1", "a", "a", 10, DAY)

    def test_non_integer_units_rejected(self):
        with pytest.raises(ValueError):
            TradeOrder("o1", "a", "b", 10.5, DAY)


class TestApplyTrade:
    def _states(self, seller_surplus_w):
        return {
            "seller": NodeMarketState(node_id="seller", surplus_now_w=seller_surplus_w),
            "buyer": NodeMarketState(node_id="buyer"),
        }

    def test_successful_deduction(self):
        # 5000 W over one hour = 5000 Wh available
        states = self._states(5000.0)
        order = TradeOrder("o1", "buyer", "seller", 4167, DAY)
        apply_trade(states, order, interval_hours=1.0)
        assert states["seller"].energy_sold_wh == 4167
        assert states["buyer"].energy_bought_wh == 4167
        remaining = states["seller"].surplus_energy_wh(1.0) - states["seller"].energy_sold_wh
        assert remaining == 833

    def test_all_or_nothing(self):
        states = self._states(100.0)
        order = TradeOrder("o1", "buyer", "seller", 200, DAY)
        with pytest.raises(InsufficientSurplus) as err:
            apply_trade(states, order, interval_hours=1.0)
        assert err.value.available_wh == 100
        assert err.value.requested_wh == 200
        assert states["seller"].energy_sold_wh == 0
        assert states["buyer"].energy_bought_wh == 0

    def test_unknown_nodes(self):
        states = {"seller": NodeMarketState(node_id="seller", surplus_now_w=1000.0)}
        with pytest.raises(UnknownNode):
            apply_trade(states, TradeOrder("o1", "buyer", "ghost", 1, DAY), 1.0)
        with pytest.raises(UnknownNode):
            apply_trade(states, TradeOrder("o1", "buyer", "seller", 1, DAY), 1.0)

    @given(st.integers(min_value=1, max_value=5000),
           st.floats(min_value=0, max_value=10000))
    @settings(max_examples=200, deadline=None)
    def test_energy_conserved_exactly(self, units, surplus_w):
        states = self._states(surplus_w)
        order = TradeOrder("o1", "buyer", "seller", units, DAY)
        try:
            apply_trade(states, order, interval_hours=1.0)
        except InsufficientSurplus:
            return
        assert states["buyer"].energy_bought_wh == states["seller"].energy_sold_wh == units


class TestTick:
    def _series_map(self):
        gen = make_series([0, 8000, 4000], interval_s=300)
        cons = make_series([500, 2700, 4000], interval_s=300,
                           kind=SeriesKind.CONSUMPTION)
        return {"n1": (gen, cons)}

    def test_before_start_raises(self):
        with pytest.raises(OutOfRange):
            tick(DAY - timedelta(seconds=1), self._series_map())

    def test_surplus_recomputed(self):
        states = tick(DAY + timedelta(seconds=300), self._series_map())
        assert states["n1"].surplus_now_w == 5300.0
        assert states["n1"].energy_sold_wh == 0

    def test_zero_generation_everywhere(self):
        gen = make_series([0, 0, 0])
        cons = make_series([100, 200, 300], kind=SeriesKind.CONSUMPTION)
        states = tick(DAY + timedelta(seconds=300), {"a": (gen, cons)})
        assert states["a"].surplus_now_w == 0.0


class TestMarketEngine:
    def _engine(self, gen_values, interval_s=300):
        gen = make_series(gen_values, interval_s=interval_s)
        cons = make_series([0] * len(gen_values), interval_s=interval_s,
                           kind=SeriesKind.CONSUMPTION)
        return MarketEngine(node_id="n1", generation=gen, consumption=cons,
                            interval_s=float(interval_s))

    def test_interval_rollover_resets_counters(self):
        engine = self._engine([12000, 12000, 12000])
        engine.tick(DAY)
        engine.reserve(500)
        engine.commit_sold(500)
        assert engine.state.energy_sold_wh == 500
        engine.tick(DAY + timedelta(seconds=300))
        assert engine.state.energy_sold_wh == 0
        assert engine.surplus_remaining_wh == 1000  # 12 kW over 5 min

    def test_reserve_release(self):
        engine = self._engine([12000, 12000])
        engine.tick(DAY)
        assert engine.surplus_remaining_wh == 1000
        engine.reserve(400)
        assert engine.surplus_remaining_wh == 600
        engine.release(400)
        assert engine.surplus_remaining_wh == 1000
        with pytest.raises(InsufficientSurplus):
            engine.reserve(1001)

    def test_no_overselling_within_interval(self):
        engine = self._engine([6000, 6000])
        engine.tick(DAY)
        available = engine.surplus_remaining_wh
        sold = 0
        while True:
            try:
                engine.reserve(100)
            except InsufficientSurplus:
                break
            engine.commit_sold(100)
            sold += 100
        assert sold <= available
        assert engine.state.energy_sold_wh == sold

    def test_out_of_range(self):
        engine = self._engine([1000, 1000])
        with pytest.raises(OutOfRange):
            engine.tick(DAY - timedelta(hours=1))

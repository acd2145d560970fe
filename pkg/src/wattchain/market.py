"""Surplus detection and interval energy accounting for prosumer nodes.

Surplus is the generation left after a node's own demand, net of whatever
the main grid feeds in, clamped at zero. Trades deduct whole Wh from the
seller's surplus energy of the current interval only; unsold surplus does
not carry over (there is no storage in this model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime

from .energy_data import PowerSeries, format_iso


class MarketError(Exception):
    pass


class NegativeInput(MarketError):
    pass


class UnknownNode(MarketError):
    def __init__(self, node_id: str):
        super().__init__(f"unknown node {node_id!r}")
        self.node_id = node_id


class InsufficientSurplus(MarketError):
    def __init__(self, available_wh: int, requested_wh: int):
        super().__init__(f"surplus {available_wh} Wh cannot cover {requested_wh} Wh")
        self.available_wh = available_wh
        self.requested_wh = requested_wh


class OutOfRange(MarketError):
    def __init__(self, clock: datetime):
        super().__init__(f"clock {format_iso(clock)} outside the loaded series")
        self.clock = clock


def compute_surplus(gen_w: float, demand_w: float, grid_import_limit_w: float = 0.0) -> float:
    """Tradable surplus power: generation minus the demand left after grid feed-in.

    Grid service is clamped to the actual demand, so with a zero import
    limit this is simply max(gen - demand, 0).
    """
    if gen_w < 0 or demand_w < 0 or grid_import_limit_w < 0:
        raise NegativeInput(f"inputs must be non-negative: {gen_w}, {demand_w}, {grid_import_limit_w}")
    grid_service = min(grid_import_limit_w, demand_w)
    unmet_demand = max(demand_w - grid_service, 0.0)
    return max(gen_w - unmet_demand, 0.0)


@dataclass
class NodeMarketState:
    node_id: str
    gen_now_w: float = 0.0
    demand_now_w: float = 0.0
    grid_import_limit_w: float = 0.0
    surplus_now_w: float = 0.0
    energy_sold_wh: int = 0
    energy_bought_wh: int = 0

    def surplus_energy_wh(self, interval_hours: float) -> int:
        """Whole Wh the surplus power represents over one interval."""
        return math.floor(self.surplus_now_w * interval_hours)


@dataclass(frozen=True)
class TradeOrder:
    order_id: str
    buyer: str
    seller: str
    units_wh: int
    created_at: datetime

    def __post_init__(self):
        if not isinstance(self.units_wh, int) or self.units_wh <= 0:
            raise ValueError(f"units must be a positive integer, got {self.units_wh!r}")
        if self.buyer == self.seller:
            raise ValueError("buyer and seller must differ")


def tick(clock: datetime,
         series_by_node: dict[str, tuple[PowerSeries, PowerSeries]],
         grid_import_limit_w: float = 0.0) -> dict[str, NodeMarketState]:
    """Recompute every node's market state at `clock` from its series pair.

    Interval counters start at zero: a tick opens a fresh interval.
    """
    states: dict[str, NodeMarketState] = {}
    for node_id, (generation, consumption) in series_by_node.items():
        if not (generation.covers(clock) and consumption.covers(clock)):
            raise OutOfRange(clock)
        gen = generation.value_at(clock)
        demand = consumption.value_at(clock)
        states[node_id] = NodeMarketState(
            node_id=node_id,
            gen_now_w=gen,
            demand_now_w=demand,
            grid_import_limit_w=grid_import_limit_w,
            surplus_now_w=compute_surplus(gen, demand, grid_import_limit_w),
        )
    return states


def apply_trade(states: dict[str, NodeMarketState], order: TradeOrder,
                interval_hours: float) -> dict[str, NodeMarketState]:
    """Deduct a trade from the seller's interval surplus and credit the buyer.

    All-or-nothing: the full order either fits in the seller's remaining
    surplus energy for this interval or the trade is refused.
    """
    if order.seller not in states:
        raise UnknownNode(order.seller)
    if order.buyer not in states:
        raise UnknownNode(order.buyer)
    seller = states[order.seller]
    available = seller.surplus_energy_wh(interval_hours) - seller.energy_sold_wh
    if available < order.units_wh:
        raise InsufficientSurplus(max(available, 0), order.units_wh)
    seller.energy_sold_wh += order.units_wh
    states[order.buyer].energy_bought_wh += order.units_wh
    return states


@dataclass
class MarketEngine:
    """Interval-by-interval market state for one node.

    Both series must share the engine's interval (resample first). The
    engine rolls to a new interval whenever the clock crosses an interval
    boundary, resetting the sold/bought counters and the sellable surplus.
    """

    node_id: str
    generation: PowerSeries
    consumption: PowerSeries
    interval_s: float
    grid_import_limit_w: float = 0.0
    state: NodeMarketState = field(init=False)
    interval_index: int | None = field(init=False, default=None)
    surplus_remaining_wh: int = field(init=False, default=0)

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ValueError("interval must be positive")
        self.state = NodeMarketState(node_id=self.node_id,
                                     grid_import_limit_w=self.grid_import_limit_w)

    @property
    def interval_hours(self) -> float:
        return self.interval_s / 3600.0

    def covers(self, clock: datetime) -> bool:
        return self.generation.covers(clock) and self.consumption.covers(clock)

    def tick(self, clock: datetime) -> NodeMarketState:
        if not self.covers(clock):
            raise OutOfRange(clock)
        gen = self.generation.value_at(clock)
        demand = self.consumption.value_at(clock)
        surplus = compute_surplus(gen, demand, self.grid_import_limit_w)
        index = int(clock.timestamp() // self.interval_s)
        if index != self.interval_index:
            self.interval_index = index
            self.state = NodeMarketState(
                node_id=self.node_id,
                grid_import_limit_w=self.grid_import_limit_w,
            )
            self.surplus_remaining_wh = math.floor(surplus * self.interval_hours)
        self.state.gen_now_w = gen
        self.state.demand_now_w = demand
        self.state.surplus_now_w = surplus
        return self.state

    def reserve(self, units_wh: int) -> None:
        """Hold `units_wh` of this interval's surplus for a pending trade."""
        if units_wh <= 0:
            raise ValueError("units must be positive")
        if self.surplus_remaining_wh < units_wh:
            raise InsufficientSurplus(max(self.surplus_remaining_wh, 0), units_wh)
        self.surplus_remaining_wh -= units_wh

    def release(self, units_wh: int) -> None:
        """Return a failed reservation to the sellable pool."""
        self.surplus_remaining_wh += units_wh

    def commit_sold(self, units_wh: int) -> None:
        self.state.energy_sold_wh += units_wh

    def commit_bought(self, units_wh: int) -> None:
        self.state.energy_bought_wh += units_wh

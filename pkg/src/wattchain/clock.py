"""Simulation clock: real time, accelerated, or scenario replay."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum


class ClockMode(str, Enum):
    REALTIME = "realtime"
    ACCELERATED = "accelerated"
    REPLAY = "replay"


@dataclass
class SimClock:
    """Maps wall time onto simulation time with a fixed rate factor."""

    mode: ClockMode = ClockMode.REALTIME
    factor: float = 1.0
    sim_start: datetime | None = None
    wall_start: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.factor <= 0:
            raise ValueError("clock factor must be positive")
        if self.mode is ClockMode.REALTIME:
            self.factor = 1.0
        if self.sim_start is None:
            self.sim_start = datetime.now(timezone.utc)

    def now(self) -> datetime:
        elapsed = (time.time() - self.wall_start) * self.factor
        return self.sim_start + timedelta(seconds=elapsed)

    def wall_seconds_until(self, sim_t: datetime) -> float:
        """Wall seconds from now until the clock reads `sim_t` (may be negative)."""
        return (sim_t - self.now()).total_seconds() / self.factor

"""Scripted trading-day scenarios: JSON lines of request/approve actions.

Each line is ``{"at": iso-time, "actor": node_id, "action": "request" |
"approve", "units": N}``. Actions are sorted by time and every approve
follows the request it answers. The bundled demo day replays 45 trades
between a buying and a selling node over one simulated working day.

Running ``python -m wattchain.scenario OUTDIR`` writes a ready-to-run kit:
the scenario file, flat generation/consumption CSVs for both nodes, and a
config file per node.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timedelta

from .energy_data import (PowerSample, PowerSeries, SeriesKind, format_iso,
                          parse_iso, write_power_csv)


class ScenarioParse(Exception):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


@dataclass(frozen=True)
class ScenarioAction:
    at: datetime
    actor: str
    action: str  # "request" | "approve"
    units: int


@dataclass
class Scenario:
    actions: list[ScenarioAction]

    @property
    def start(self) -> datetime:
        return self.actions[0].at

    @property
    def end(self) -> datetime:
        return self.actions[-1].at

    def trade_count(self) -> int:
        return sum(1 for a in self.actions if a.action == "request")

    def total_units(self) -> int:
        return sum(a.units for a in self.actions if a.action == "request")


def load_scenario(path: str) -> Scenario:
    actions: list[ScenarioAction] = []
    outstanding: dict[tuple[str, int], int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScenarioParse(line_no, f"not JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ScenarioParse(line_no, "each line must be a JSON object")
            try:
                action = ScenarioAction(
                    at=parse_iso(str(data["at"])),
                    actor=str(data["actor"]),
                    action=str(data["action"]),
                    units=data["units"],
                )
            except (KeyError, ValueError) as exc:
                raise ScenarioParse(line_no, f"bad action: {exc}") from None
            if action.action not in ("request", "approve"):
                raise ScenarioParse(line_no, f"action must be request or approve, got {action.action!r}")
            if not isinstance(action.units, int) or action.units <= 0:
                raise ScenarioParse(line_no, "units must be a positive integer")
            if actions and action.at < actions[-1].at:
                raise ScenarioParse(line_no, "actions must be sorted by time")
            if action.action == "request":
                key = (action.actor, action.units)
                outstanding[key] = outstanding.get(key, 0) + 1
            else:
                pending = [k for k, n in outstanding.items() if k[1] == action.units and n > 0]
                if not pending:
                    raise ScenarioParse(line_no, f"approve of {action.units} units without a matching request")
                outstanding[pending[0]] -= 1
            actions.append(action)
    if not actions:
        return Scenario(actions=[])
    return Scenario(actions=actions)


def write_scenario(scenario: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in scenario.actions:
            fh.write(json.dumps({"at": format_iso(a.at), "actor": a.actor,
                                 "action": a.action, "units": a.units}) + "\n")


# The bundled demo day: 45 trades across one working day (timestamp, Wh).
DEMO_TRADES: list[tuple[str, int]] = [
    ("2020-04-23T09:03:46Z", 200),
    ("2020-04-23T09:14:05Z", 1030),
    ("2020-04-23T09:23:05Z", 1347),
    ("2020-04-23T09:34:46Z", 2020),
    ("2020-04-23T09:39:17Z", 2280),
    ("2020-04-23T09:48:56Z", 2800),
    ("2020-04-23T09:53:17Z", 1867),
    ("2020-04-23T09:58:35Z", 1000),
    ("2020-04-23T10:05:25Z", 1107),
    ("2020-04-23T10:14:35Z", 2213),
    ("2020-04-23T10:17:37Z", 3453),
    ("2020-04-23T10:34:49Z", 3720),
    ("2020-04-23T10:46:25Z", 3100),
    ("2020-04-23T11:10:37Z", 3680),
    ("2020-04-23T11:26:32Z", 4040),
    ("2020-04-23T11:29:01Z", 4100),
    ("2020-04-23T11:36:25Z", 4133),
    ("2020-04-23T11:44:30Z", 4167),
    ("2020-04-23T11:52:53Z", 4047),
    ("2020-04-23T12:03:45Z", 3740),
    ("2020-04-23T12:05:03Z", 3567),
    ("2020-04-23T12:13:52Z", 3393),
    ("2020-04-23T12:16:09Z", 3220),
    ("2020-04-23T12:25:50Z", 3820),
    ("2020-04-23T12:45:00Z", 3780),
    ("2020-04-23T13:04:56Z", 2340),
    ("2020-04-23T13:08:03Z", 3240),
    ("2020-04-23T13:10:00Z", 1440),
    ("2020-04-23T13:21:20Z", 360),
    ("2020-04-23T13:25:00Z", 180),
    ("2020-04-23T14:04:06Z", 320),
    ("2020-04-23T14:12:35Z", 640),
    ("2020-04-23T14:15:35Z", 960),
    ("2020-04-23T14:22:25Z", 1813),
    ("2020-04-23T14:30:26Z", 2240),
    ("2020-04-23T14:36:37Z", 1493),
    ("2020-04-23T14:43:20Z", 747),
    ("2020-04-23T14:51:25Z", 520),
    ("2020-04-23T14:55:25Z", 1040),
    ("2020-04-23T15:00:27Z", 1560),
    ("2020-04-23T15:31:25Z", 300),
    ("2020-04-23T15:36:56Z", 333),
    ("2020-04-23T15:42:25Z", 400),
    ("2020-04-23T15:53:02Z", 267),
    ("2020-04-23T15:53:53Z", 133),
]


def demo_scenario(buyer: str, seller: str, approve_lag_s: int = 5) -> Scenario:
    """The 45-trade demo day: the buyer requests at each listed time and the
    seller approves a few simulated seconds later."""
    actions: list[ScenarioAction] = []
    for at_text, units in DEMO_TRADES:
        at = parse_iso(at_text)
        actions.append(ScenarioAction(at=at, actor=buyer, action="request", units=units))
        actions.append(ScenarioAction(at=at + timedelta(seconds=approve_lag_s),
                                      actor=seller, action="approve", units=units))
    actions.sort(key=lambda a: a.at)
    return Scenario(actions=actions)


def _flat_series(node_id: str, kind: SeriesKind, day: datetime, value_w: float,
                 interval_s: int = 300) -> PowerSeries:
    day0 = day.replace(hour=0, minute=0, second=0, microsecond=0)
    samples = [
        PowerSample(day0 + timedelta(seconds=k * interval_s), value_w)
        for k in range(0, 86400 // interval_s)
    ]
    return PowerSeries(node_id=node_id, kind=kind, samples=samples,
                       interval_s=float(interval_s))


NODE_CONFIG_TEMPLATE = """\
node_id = "{node_id}"
listen_port = {listen_port}
api_port = {api_port}
peers = [{peers}]
generation_csv = "{gen}"
consumption_csv = "{cons}"
state_dir = "{state_dir}"
difficulty_bits = {difficulty_bits}
market_interval_s = 300
clock_mode = "replay"
clock_factor = {factor}
scenario_path = "{scenario}"

[endowments]
{endowment_lines}
"""


def write_demo_kit(outdir: str, buyer: str = "library", seller: str = "energy-lab",
                   buyer_ports: tuple[int, int] = (7401, 8401),
                   seller_ports: tuple[int, int] = (7402, 8402),
                   difficulty_bits: int = 12, factor: float = 60.0,
                   endowment: int = 100_000) -> dict[str, str]:
    """Write scenario, data files and node configs for the demo trading day.

    The seller's generation is a flat 200 kW so every scripted trade fits
    in the five-minute interval surplus; the buyer only consumes. Returns
    the paths keyed by role.
    """
    os.makedirs(outdir, exist_ok=True)
    scenario = demo_scenario(buyer, seller)
    day = scenario.start
    scenario_path = os.path.join(outdir, "trading_day.jsonl")
    write_scenario(scenario, scenario_path)

    paths = {"scenario": scenario_path}
    series = {
        buyer: (_flat_series(buyer, SeriesKind.GENERATION, day, 0.0),
                _flat_series(buyer, SeriesKind.CONSUMPTION, day, 5000.0)),
        seller: (_flat_series(seller, SeriesKind.GENERATION, day, 200_000.0),
                 _flat_series(seller, SeriesKind.CONSUMPTION, day, 2700.0)),
    }
    endowment_lines = f"{buyer} = {endowment}\n{seller} = {endowment}"
    for node_id, ports, peers in (
        (buyer, buyer_ports, f'"127.0.0.1:{seller_ports[0]}"'),
        (seller, seller_ports, ""),
    ):
        gen, cons = series[node_id]
        gen_path = os.path.join(outdir, f"{node_id}-generation.csv")
        cons_path = os.path.join(outdir, f"{node_id}-consumption.csv")
        write_power_csv(gen, gen_path)
        write_power_csv(cons, cons_path)
        config_path = os.path.join(outdir, f"{node_id}.toml")
        with open(config_path, "w", encoding="utf-8") as fh:
            fh.write(NODE_CONFIG_TEMPLATE.format(
                node_id=node_id, listen_port=ports[0], api_port=ports[1],
                peers=peers, gen=os.path.basename(gen_path),
                cons=os.path.basename(cons_path),
                state_dir=f"state-{node_id}", difficulty_bits=difficulty_bits,
                factor=factor, scenario="trading_day.jsonl",
                endowment_lines=endowment_lines,
            ))
        paths[node_id] = config_path
    return paths


def _main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        description="write the demo trading-day kit (scenario, data, configs)")
    parser.add_argument("outdir")
    parser.add_argument("--difficulty-bits", type=int, default=12)
    parser.add_argument("--factor", type=float, default=60.0)
    args = parser.parse_args(argv)
    paths = write_demo_kit(args.outdir, difficulty_bits=args.difficulty_bits,
                           factor=args.factor)
    for role, path in paths.items():
        print(f"{role}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(_main())

"""Replay driver: spawns two node processes and injects a scripted day.

The driver is a thin HTTP client. It anchors the scenario timeline to the
nodes' own simulated clock, posts each scripted request/approve at its
wall-clock deadline, then audits the outcome: chain heights, byte-identical
chains, and token movements reconciled against the scenario amounts.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field

import requests

from .config import NodeConfig, load_config
from .energy_data import parse_iso
from .ledger import address_for
from .scenario import Scenario, ScenarioAction, load_scenario


class ReplayError(Exception):
    pass


class TradeFailed(ReplayError):
    def __init__(self, order_no: int, reason: str):
        super().__init__(f"trade #{order_no}: {reason}")
        self.order_no = order_no
        self.reason = reason


@dataclass
class ReplayReport:
    trades: int
    blocks_mined: int
    chain_height: int
    chains_identical: bool
    balances: dict[str, int]
    endowments: dict[str, int]
    total_units_wh: int
    latencies_s: list[float]
    audit_ok: bool
    wall_time_s: float
    failed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        mean = sum(self.latencies_s) / len(self.latencies_s) if self.latencies_s else 0.0
        return {
            "trades": self.trades,
            "blocks_mined": self.blocks_mined,
            "chain_height": self.chain_height,
            "chains_identical": self.chains_identical,
            "balances": self.balances,
            "endowments": self.endowments,
            "total_units_wh": self.total_units_wh,
            "latency_mean_s": round(mean, 3),
            "latency_max_s": round(max(self.latencies_s), 3) if self.latencies_s else 0.0,
            "audit_ok": self.audit_ok,
            "wall_time_s": round(self.wall_time_s, 1),
            "failed": self.failed,
        }

    def summary(self) -> str:
        d = self.to_dict()
        lines = [
            f"trades committed : {d['trades']}",
            f"blocks mined     : {d['blocks_mined']} (chain height {d['chain_height']})",
            f"chains identical : {d['chains_identical']}",
            f"energy traded    : {d['total_units_wh']} Wh",
            f"trade latency    : mean {d['latency_mean_s']} s, max {d['latency_max_s']} s",
            f"ledger audit     : {'ok' if d['audit_ok'] else 'FAILED'}",
            f"wall time        : {d['wall_time_s']} s",
        ]
        for node_id, balance in d["balances"].items():
            lines.append(f"balance {node_id:<12}: {balance}")
        if d["failed"]:
            lines.append("failures          : " + "; ".join(d["failed"]))
        return "\n".join(lines)


def _base_url(cfg: NodeConfig) -> str:
    return f"http://127.0.0.1:{cfg.api_port}"


def _wait_http(url: str, timeout_s: float) -> dict:
    deadline = time.monotonic() + timeout_s
    last = "no response"
    while time.monotonic() < deadline:
        try:
            resp = requests.get(url, timeout=2)
            if resp.ok:
                return resp.json()
            last = f"HTTP {resp.status_code}"
        except requests.RequestException as exc:
            last = str(exc)
        time.sleep(0.1)
    raise ReplayError(f"timed out waiting for {url}: {last}")


def _wait_peered(urls: list[str], timeout_s: float = 20.0) -> None:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        counts = []
        for url in urls:
            try:
                counts.append(len(requests.get(f"{url}/status", timeout=2).json()["peers"]))
            except requests.RequestException:
                counts.append(0)
        if all(c >= 1 for c in counts):
            return
        time.sleep(0.1)
    raise ReplayError("nodes never connected to each other")


def _active_buyer_session(url: str) -> dict | None:
    sessions = requests.get(f"{url}/sessions", timeout=5).json()
    for s in sessions:
        if s["role"] == "buyer" and s["state"] in ("requested", "accepted", "mining"):
            return s
    return None


def run_replay(scenario_path: str, config_paths: list[str],
               factor: float | None = None, report_path: str | None = None,
               log_dir: str | None = None) -> ReplayReport:
    started = time.monotonic()
    scenario = load_scenario(scenario_path)
    if not scenario.actions:
        return ReplayReport(trades=0, blocks_mined=0, chain_height=1,
                            chains_identical=True, balances={}, endowments={},
                            total_units_wh=0, latencies_s=[], audit_ok=True,
                            wall_time_s=time.monotonic() - started)

    configs = [load_config(p) for p in config_paths]
    by_node = {cfg.node_id: cfg for cfg in configs}
    urls = {cfg.node_id: _base_url(cfg) for cfg in configs}
    for action in scenario.actions:
        if action.actor not in by_node:
            raise ReplayError(f"scenario actor {action.actor!r} has no config")

    env = dict(os.environ)
    if factor is not None:
        env["WATTCHAIN_CLOCK_FACTOR"] = str(factor)

    procs: list[subprocess.Popen] = []
    logs = []
    try:
        for path, cfg in zip(config_paths, configs):
            log_path = os.path.join(log_dir or os.path.dirname(os.path.abspath(path)),
                                    f"replay-{cfg.node_id}.log")
            log_fh = open(log_path, "w", encoding="utf-8")
            logs.append(log_fh)
            procs.append(subprocess.Popen(
                [sys.executable, "-m", "wattchain", "run", "--config", path],
                stdout=log_fh, stderr=subprocess.STDOUT, env=env))
        for cfg in configs:
            _wait_http(f"{urls[cfg.node_id]}/status", 30.0)
        _wait_peered(list(urls.values()))

        anchor_status = requests.get(f"{urls[configs[0].node_id]}/status", timeout=5).json()
        sim_anchor = parse_iso(anchor_status["sim_time"])
        wall_anchor = time.time()
        clock_factor = float(anchor_status["clock_factor"])

        latencies: list[float] = []
        failed: list[str] = []
        trade_no = 0
        for action in scenario.actions:
            deadline = wall_anchor + (action.at - sim_anchor).total_seconds() / clock_factor
            delay = deadline - time.time()
            if delay > 0:
                time.sleep(delay)
            url = urls[action.actor]
            if action.action == "request":
                trade_no += 1
                _wait_no_outstanding(url, trade_no)
                resp = requests.post(f"{url}/trade/request",
                                     json={"units": action.units}, timeout=5)
                if not resp.ok:
                    raise TradeFailed(trade_no, f"request rejected: {resp.text}")
            else:
                order = _wait_requested(url, action.units, trade_no)
                resp = requests.post(f"{url}/trade/approve",
                                     json={"order_id": order["order_id"]}, timeout=5)
                if not resp.ok:
                    raise TradeFailed(trade_no, f"approve rejected: {resp.text}")

        expected_height = scenario.trade_count() + 1
        _wait_heights(list(urls.values()), expected_height, timeout_s=90.0)

        chains = {nid: requests.get(f"{url}/chain", timeout=5).json()
                  for nid, url in urls.items()}
        records = [tuple(c["records"]) for c in chains.values()]
        identical = len(set(records)) == 1
        heights = {nid: c["height"] for nid, c in chains.items()}

        balances: dict[str, int] = {}
        audit_ok = True
        endowments = {cfg.node_id: cfg.endowments.get(cfg.node_id, 0) for cfg in configs}
        for cfg in configs:
            data = requests.get(f"{urls[cfg.node_id]}/balance", timeout=5).json()
            balances[cfg.node_id] = data["balance"]
            address = address_for(cfg.node_id)
            blocks = chains[cfg.node_id]["blocks"]
            sent = sum(b["amount"] for b in blocks if b["sender"] == address)
            received = sum(b["amount"] for b in blocks if b["receiver"] == address)
            # chain vs ledger reconciliation: net outflow explains the balance
            if endowments[cfg.node_id] - data["balance"] != sent - received:
                audit_ok = False
                failed.append(f"{cfg.node_id}: ledger/chain audit mismatch")

        buyer_sessions = requests.get(
            f"{urls[configs[0].node_id]}/sessions", timeout=5).json()
        for s in buyer_sessions:
            if s["role"] == "buyer":
                if s["state"] != "committed":
                    failed.append(f"order {s['order_id']} ended {s['state']}")
                elif s["committed_wall"] and s["created_wall"]:
                    latencies.append(s["committed_wall"] - s["created_wall"])

        report = ReplayReport(
            trades=scenario.trade_count(), blocks_mined=min(heights.values()) - 1,
            chain_height=min(heights.values()), chains_identical=identical,
            balances=balances, endowments=endowments,
            total_units_wh=scenario.total_units(), latencies_s=latencies,
            audit_ok=audit_ok and identical and not failed,
            wall_time_s=time.monotonic() - started, failed=failed)
        if report_path:
            with open(report_path, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh, indent=2)
                fh.write("\n")
        return report
    finally:
        for proc in procs:
            proc.terminate()
        for proc in procs:
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
        for fh in logs:
            fh.close()


def _wait_no_outstanding(url: str, trade_no: int, timeout_s: float = 30.0) -> None:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if _active_buyer_session(url) is None:
            return
        time.sleep(0.05)
    raise TradeFailed(trade_no, "previous trade never settled")


def _wait_requested(url: str, units: int, trade_no: int,
                    timeout_s: float = 30.0) -> dict:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        for s in requests.get(f"{url}/sessions", timeout=5).json():
            if (s["role"] == "seller" and s["state"] == "requested"
                    and s["units"] == units):
                return s
        time.sleep(0.05)
    raise TradeFailed(trade_no, f"no incoming request for {units} units appeared")


def _wait_heights(urls: list[str], height: int, timeout_s: float) -> None:
    deadline = time.monotonic() + timeout_s
    last = {}
    while time.monotonic() < deadline:
        last = {}
        for url in urls:
            try:
                last[url] = requests.get(f"{url}/status", timeout=5).json()["chain"]["height"]
            except requests.RequestException:
                last[url] = -1
        if all(h >= height for h in last.values()):
            return
        time.sleep(0.2)
    raise ReplayError(f"chains never reached height {height}: {last}")

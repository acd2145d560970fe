"""Per-node configuration: a flat TOML-like key-value file.

Supported syntax: `key = value` lines, `[section]` headers, `#` comments,
string/integer/float/boolean scalars and arrays of scalars. Relative paths
resolve against the config file's directory. `WATTCHAIN_LISTEN_PORT` and
`WATTCHAIN_API_PORT` override the file's ports.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from datetime import datetime

from .chain import DEFAULT_DIFFICULTY_BITS, DEFAULT_GENESIS_TIME
from .clock import ClockMode
from .energy_data import parse_iso

DEFAULT_ENDOWMENT = 100_000


class ConfigInvalid(Exception):
    pass


class DataMissing(Exception):
    pass


class PortInUse(Exception):
    pass


@dataclass
class NodeConfig:
    node_id: str
    listen_port: int
    api_port: int
    generation_csv: str
    consumption_csv: str
    state_dir: str
    peers: list[tuple[str, int]] = field(default_factory=list)
    weather_csv: str | None = None
    model_path: str | None = None
    endowments: dict[str, int] = field(default_factory=dict)
    difficulty_bits: int = DEFAULT_DIFFICULTY_BITS
    market_interval_s: float = 300.0
    grid_import_limit_w: float = 0.0
    clock_mode: ClockMode = ClockMode.REALTIME
    clock_factor: float = 1.0
    sim_start: datetime | None = None
    scenario_path: str | None = None
    genesis_time: datetime = DEFAULT_GENESIS_TIME
    handshake_timeout_s: float = 5.0
    negotiation_timeout_s: float = 30.0

    def validate(self) -> None:
        if not self.node_id or re.search(r"[|\s]", self.node_id):
            raise ConfigInvalid(f"bad node_id {self.node_id!r}")
        for name, port in (("listen_port", self.listen_port), ("api_port", self.api_port)):
            if not 1 <= port <= 65535:
                raise ConfigInvalid(f"{name} {port} out of range")
        if self.listen_port == self.api_port:
            raise ConfigInvalid("listen_port and api_port must differ")
        if self.difficulty_bits < 0 or self.difficulty_bits > 64:
            raise ConfigInvalid(f"difficulty_bits {self.difficulty_bits} unreasonable")
        if self.clock_factor <= 0:
            raise ConfigInvalid("clock_factor must be positive")
        if self.market_interval_s <= 0:
            raise ConfigInvalid("market_interval_s must be positive")
        if self.clock_mode is ClockMode.REPLAY and not self.scenario_path:
            raise ConfigInvalid("replay clock mode needs scenario_path")
        if self.node_id not in self.endowments:
            raise ConfigInvalid(f"endowments must include this node ({self.node_id})")
        if any(v < 0 for v in self.endowments.values()):
            raise ConfigInvalid("endowments must be non-negative")


_SCALAR_RE = re.compile(r"""^(?:"(?P<str>[^"]*)"|(?P<bool>true|false)|(?P<num>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?))$""")


def _parse_scalar(text: str, line_no: int):
    m = _SCALAR_RE.match(text.strip())
    if not m:
        raise ConfigInvalid(f"line {line_no}: cannot parse value {text!r}")
    if m.group("str") is not None:
        return m.group("str")
    if m.group("bool") is not None:
        return m.group("bool") == "true"
    num = m.group("num")
    return float(num) if ("." in num or "e" in num or "E" in num) else int(num)


def _strip_comment(line: str) -> str:
    out, quoted = [], False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def parse_config_text(text: str) -> dict:
    """Parse the TOML-like subset into {key: value, section: {key: value}}."""
    result: dict = {}
    target = result
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigInvalid(f"line {line_no}: empty section name")
            target = result.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {line_no}: expected key = value")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            items = _split_array(inner, line_no)
            target[key] = [_parse_scalar(item, line_no) for item in items]
        else:
            target[key] = _parse_scalar(value, line_no)
    return result


def _split_array(inner: str, line_no: int) -> list[str]:
    if not inner:
        return []
    items, current, quoted = [], [], False
    for ch in inner:
        if ch == '"':
            quoted = not quoted
        if ch == "," and not quoted:
            items.append("".join(current))
            current = []
        else:
            current.append(ch)
    items.append("".join(current))
    return [item for item in (i.strip() for i in items) if item]


def _parse_peer(entry: str) -> tuple[str, int]:
    host, _, port = entry.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigInvalid(f"peer entry {entry!r} must be host:port")
    return host, int(port)


def load_config(path: str) -> NodeConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    try:
        cfg = NodeConfig(
            node_id=str(data["node_id"]),
            listen_port=int(data["listen_port"]),
            api_port=int(data["api_port"]),
            generation_csv=resolve(str(data["generation_csv"])),
            consumption_csv=resolve(str(data["consumption_csv"])),
            state_dir=resolve(str(data["state_dir"])),
        )
    except KeyError as exc:
        raise ConfigInvalid(f"missing required config key {exc.args[0]!r}") from None

    cfg.peers = [_parse_peer(str(p)) for p in data.get("peers", [])]
    cfg.weather_csv = resolve(data.get("weather_csv"))
    cfg.model_path = resolve(data.get("model_path"))
    cfg.scenario_path = resolve(data.get("scenario_path"))
    cfg.difficulty_bits = int(data.get("difficulty_bits", DEFAULT_DIFFICULTY_BITS))
    cfg.market_interval_s = float(data.get("market_interval_s", 300))
    cfg.grid_import_limit_w = float(data.get("grid_import_limit_w", 0.0))
    cfg.clock_factor = float(data.get("clock_factor", 1.0))
    cfg.handshake_timeout_s = float(data.get("handshake_timeout_s", 5.0))
    cfg.negotiation_timeout_s = float(data.get("negotiation_timeout_s", 30.0))
    try:
        cfg.clock_mode = ClockMode(str(data.get("clock_mode", "realtime")))
    except ValueError:
        raise ConfigInvalid(f"bad clock_mode {data.get('clock_mode')!r}") from None
    for key, attr in (("sim_start", "sim_start"), ("genesis_time", "genesis_time")):
        if key in data:
            try:
                setattr(cfg, attr, parse_iso(str(data[key])))
            except ValueError:
                raise ConfigInvalid(f"bad {key} timestamp {data[key]!r}") from None

    endow = data.get("endowments", {})
    if not isinstance(endow, dict):
        raise ConfigInvalid("[endowments] must be a section of node_id = tokens")
    cfg.endowments = {str(k): int(v) for k, v in endow.items()}
    if not cfg.endowments:
        cfg.endowments = {cfg.node_id: DEFAULT_ENDOWMENT}

    if "WATTCHAIN_LISTEN_PORT" in os.environ:
        cfg.listen_port = int(os.environ["WATTCHAIN_LISTEN_PORT"])
    if "WATTCHAIN_API_PORT" in os.environ:
        cfg.api_port = int(os.environ["WATTCHAIN_API_PORT"])
    if "WATTCHAIN_CLOCK_FACTOR" in os.environ:
        cfg.clock_factor = float(os.environ["WATTCHAIN_CLOCK_FACTOR"])

    cfg.validate()
    return cfg

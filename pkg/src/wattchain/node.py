"""One prosumer node process.

A single asyncio event loop owns all node state (chain, ledger, market,
sessions). Peer sockets, the simulation clock, the miner thread and the
HTTP handlers all funnel their effects through that loop; API reads are
served from snapshots. Committed blocks are the only thing that moves
tokens: the ledger is re-derived by folding the chain over the genesis
endowments.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import logging
import os
import socket
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum

import uvicorn
from fastapi import Body, FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware

from . import chain as chain_mod
from . import protocol
from .chain import Block, Cancelled, Chain, RemoteInvalid
from .clock import ClockMode, SimClock
from .config import DataMissing, NodeConfig, PortInUse
from .energy_data import SeriesKind, format_iso, load_power_csv, load_weather_csv, resample
from .forecast import ForecastError, load_model, predict_minute_ahead
from .ledger import InsufficientBalance, LedgerError, TokenLedger, address_for
from .market import InsufficientSurplus, MarketEngine, OutOfRange, TradeOrder
from .protocol import MessageKind, PeerMessage

logger = logging.getLogger("wattchain.node")


class NodeError(Exception):
    pass


class NoPeer(NodeError):
    pass


class UnknownOrder(NodeError):
    pass


class DuplicatePeer(NodeError):
    pass


class TradeOutstanding(NodeError):
    pass


class SessionState(str, Enum):
    REQUESTED = "requested"
    ACCEPTED = "accepted"
    MINING = "mining"
    COMMITTED = "committed"
    REJECTED = "rejected"
    TIMED_OUT = "timed_out"

ACTIVE_STATES = {SessionState.REQUESTED, SessionState.ACCEPTED, SessionState.MINING}


class Role(str, Enum):
    BUYER = "buyer"
    SELLER = "seller"


@dataclass
class TradeSession:
    order: TradeOrder
    role: Role
    state: SessionState = SessionState.REQUESTED
    reason: str | None = None
    block_index: int | None = None
    created_wall: float = field(default_factory=time.time)
    committed_wall: float | None = None

    def to_dict(self) -> dict:
        return {
            "order_id": self.order.order_id,
            "role": self.role.value,
            "buyer": self.order.buyer,
            "seller": self.order.seller,
            "units": self.order.units_wh,
            "state": self.state.value,
            "reason": self.reason,
            "block_index": self.block_index,
            "created_wall": self.created_wall,
            "committed_wall": self.committed_wall,
        }


@dataclass
class PeerLink:
    node_id: str
    host: str
    port: int
    reader: asyncio.StreamReader
    writer: asyncio.StreamWriter
    established: bool = True
    last_seen: float = field(default_factory=time.time)

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "host": self.host, "port": self.port,
                "state": "established" if self.established else "closed"}


def _check_port_free(port: int) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            probe.bind(("127.0.0.1", port))
        except OSError as exc:
            raise PortInUse(f"port {port} is already in use: {exc}") from exc


class Node:
    """A running prosumer node: market, ledger, chain, peers and local API."""

    def __init__(self, config: NodeConfig):
        config.validate()
        self.config = config
        self.node_id = config.node_id
        self.address = address_for(config.node_id)

        for label, path in (("generation", config.generation_csv),
                            ("consumption", config.consumption_csv)):
            if not os.path.isfile(path):
                raise DataMissing(f"{label} data file missing: {path}")
        generation = resample(
            load_power_csv(config.generation_csv, config.node_id, SeriesKind.GENERATION),
            config.market_interval_s)
        consumption = resample(
            load_power_csv(config.consumption_csv, config.node_id, SeriesKind.CONSUMPTION),
            config.market_interval_s)
        self.market = MarketEngine(
            node_id=config.node_id, generation=generation, consumption=consumption,
            interval_s=config.market_interval_s,
            grid_import_limit_w=config.grid_import_limit_w)

        self.clock = self._build_clock(generation.start)

        os.makedirs(config.state_dir, exist_ok=True)
        self.chain_path = os.path.join(config.state_dir, "chain.txt")
        self.wallets_path = os.path.join(config.state_dir, "wallets.txt")
        self.events_path = os.path.join(config.state_dir, "events.log")
        if os.path.isfile(self.chain_path):
            self.chain = chain_mod.load_chain(self.chain_path, config.difficulty_bits,
                                              config.genesis_time)
        else:
            self.chain = chain_mod.new_chain(config.difficulty_bits, config.genesis_time)
        self.ledger = self._fold_ledger(self.chain)

        self.model = None
        self.weather = None
        if config.model_path and os.path.isfile(config.model_path):
            self.model = load_model(config.model_path)
        if config.weather_csv and os.path.isfile(config.weather_csv):
            self.weather = load_weather_csv(config.weather_csv)

        self.peers: dict[str, PeerLink] = {}
        self.sessions: dict[str, TradeSession] = {}
        self._pending_blocks: dict[int, Block] = {}
        self._active_mine: tuple[str, threading.Event] | None = None
        self._seq = 0
        self._subscribers: set[asyncio.Queue] = set()
        self._latest_forecast: dict | None = None
        self._server: asyncio.AbstractServer | None = None
        self._uvicorn: uvicorn.Server | None = None
        self._tasks: list[asyncio.Task] = []
        self._stopping = False

    # ------------------------------------------------------------------ setup

    def _build_clock(self, data_start: datetime) -> SimClock:
        cfg = self.config
        if cfg.clock_mode is ClockMode.REALTIME:
            return SimClock()
        sim_start = cfg.sim_start
        if sim_start is None and cfg.clock_mode is ClockMode.REPLAY:
            from .scenario import load_scenario

            scenario = load_scenario(cfg.scenario_path)
            if scenario.actions:
                sim_start = scenario.start - timedelta(seconds=60)
        if sim_start is None:
            sim_start = data_start
        return SimClock(mode=cfg.clock_mode, factor=cfg.clock_factor, sim_start=sim_start)

    def _fold_ledger(self, chain: Chain) -> TokenLedger:
        ledger = TokenLedger()
        for node_id, amount in sorted(self.config.endowments.items()):
            if amount > 0:
                ledger.mint(address_for(node_id), amount)
        ledger.seal_genesis()
        for block in chain.blocks[1:]:
            ledger.transfer(block.sender, block.receiver, block.amount)
        return ledger

    # ------------------------------------------------------------- lifecycle

    async def start(self) -> None:
        _check_port_free(self.config.listen_port)
        _check_port_free(self.config.api_port)
        self._events_file = open(self.events_path, "a", encoding="utf-8")
        try:
            self._server = await asyncio.start_server(
                self._handle_inbound, "127.0.0.1", self.config.listen_port)
        except OSError as exc:
            raise PortInUse(f"peer port {self.config.listen_port}: {exc}") from exc

        app = self._build_app()
        uv_config = uvicorn.Config(app, host="127.0.0.1", port=self.config.api_port,
                                   log_level="warning", lifespan="off")
        self._uvicorn = uvicorn.Server(uv_config)
        self._serve_task = asyncio.create_task(self._uvicorn.serve())
        self._tasks.append(self._serve_task)
        self._tasks.append(asyncio.create_task(self._tick_loop()))
        for host, port in self.config.peers:
            self._tasks.append(asyncio.create_task(self._dial_with_retry(host, port)))
        await self._wait_api_ready()
        self._emit("node_started", {
            "node_id": self.node_id, "address": self.address,
            "listen_port": self.config.listen_port, "api_port": self.config.api_port,
            "chain_height": self.chain.height,
        })

    async def _wait_api_ready(self, timeout: float = 10.0) -> None:
        deadline = time.monotonic() + timeout
        while not self._uvicorn.started:
            if time.monotonic() > deadline:
                raise NodeError("API server failed to start")
            await asyncio.sleep(0.02)

    async def stop(self) -> None:
        self._stopping = True
        self._cancel_mining("node stopping")
        if self._uvicorn is not None:
            self._uvicorn.should_exit = True
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for link in list(self.peers.values()):
            link.writer.close()
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks.clear()
        if getattr(self, "_events_file", None):
            self._events_file.close()
            self._events_file = None

    async def run(self) -> None:
        """Run until the API server exits (SIGINT/SIGTERM trigger that)."""
        await self.start()
        try:
            await self._serve_task
        finally:
            await self.stop()

    # ---------------------------------------------------------------- events

    def _emit(self, event: str, data: dict | None = None) -> None:
        self._seq += 1
        payload = {"seq": self._seq, "event": event, "data": data or {}}
        line = f"{format_iso(datetime.now(timezone.utc))} {event} {json.dumps(data or {}, default=str)}"
        logger.info("[%s] %s", self.node_id, line)
        if getattr(self, "_events_file", None):
            self._events_file.write(line + "\n")
            self._events_file.flush()
        payload["snapshot"] = self.api_snapshot()
        for queue in list(self._subscribers):
            queue.put_nowait(payload)

    def subscribe(self) -> asyncio.Queue:
        queue: asyncio.Queue = asyncio.Queue()
        self._subscribers.add(queue)
        return queue

    def unsubscribe(self, queue: asyncio.Queue) -> None:
        self._subscribers.discard(queue)

    # ----------------------------------------------------------------- clock

    async def _tick_loop(self) -> None:
        interval = self.config.market_interval_s
        while True:
            now = self.clock.now()
            if self.market.covers(now):
                before = self.market.interval_index
                state = self.market.tick(now)
                if self.market.interval_index != before:
                    self._emit("tick", {
                        "sim_time": format_iso(now),
                        "gen_w": state.gen_now_w,
                        "demand_w": state.demand_now_w,
                        "surplus_w": state.surplus_now_w,
                    })
            # sleep until just past the next interval boundary (wall time)
            epoch = now.timestamp()
            next_boundary = (epoch // interval + 1) * interval
            wall = (next_boundary - epoch) / self.clock.factor
            await asyncio.sleep(min(max(wall + 0.01, 0.02), 2.0))

    # ------------------------------------------------------------------ peers

    async def _handle_inbound(self, reader: asyncio.StreamReader,
                              writer: asyncio.StreamWriter) -> None:
        try:
            line = await asyncio.wait_for(reader.readline(),
                                          self.config.handshake_timeout_s)
            msg = protocol.decode(line)
            if msg.kind is not MessageKind.ADD_CLIENT:
                raise protocol.MalformedMessage("expected ADD_CLIENT")
            peer_id = str(msg.body.get("node_id", ""))
            listen_port = int(msg.body.get("listen_port", 0))
            if not peer_id or peer_id == self.node_id or peer_id in self.peers:
                self._emit("peer_duplicate", {"node_id": peer_id})
                writer.close()
                return
        except (protocol.ProtocolError, asyncio.TimeoutError, ValueError, OSError) as exc:
            logger.warning("[%s] inbound handshake failed: %s", self.node_id, exc)
            writer.close()
            return
        host = writer.get_extra_info("peername", ("?", 0))[0]
        link = PeerLink(node_id=peer_id, host=host, port=listen_port,
                        reader=reader, writer=writer)
        self.peers[peer_id] = link
        self._post(link, protocol.make(MessageKind.ADD_CLIENT_ACK, node_id=self.node_id))
        self._emit("peer_added", {"node_id": peer_id, "direction": "inbound"})
        # first-contact sync: fetch the peer's chain and adopt it if longer
        self._post(link, protocol.make(MessageKind.CHAIN_REQUEST))
        await self._read_loop(link)

    async def connect_peer(self, host: str, port: int) -> PeerLink:
        """Dial a peer, perform the ADD_CLIENT handshake, start its reader."""
        reader, writer = await asyncio.open_connection(host, port)
        writer.write(protocol.encode(protocol.make(
            MessageKind.ADD_CLIENT, node_id=self.node_id,
            listen_port=self.config.listen_port)))
        await writer.drain()
        try:
            line = await asyncio.wait_for(reader.readline(),
                                          self.config.handshake_timeout_s)
        except asyncio.TimeoutError:
            writer.close()
            raise NodeError("handshake timeout") from None
        if not line:
            writer.close()
            raise DuplicatePeer("peer closed the connection during handshake")
        msg = protocol.decode(line)
        if msg.kind is not MessageKind.ADD_CLIENT_ACK:
            writer.close()
            raise protocol.MalformedMessage("expected ADD_CLIENT_ACK")
        peer_id = str(msg.body.get("node_id", ""))
        if not peer_id or peer_id in self.peers:
            writer.close()
            raise DuplicatePeer(f"already connected to {peer_id!r}")
        link = PeerLink(node_id=peer_id, host=host, port=port,
                        reader=reader, writer=writer)
        self.peers[peer_id] = link
        self._emit("peer_added", {"node_id": peer_id, "direction": "outbound"})
        self._tasks.append(asyncio.create_task(self._read_loop(link)))
        self._post(link, protocol.make(MessageKind.CHAIN_REQUEST))
        return link

    async def _dial_with_retry(self, host: str, port: int) -> None:
        delay = 0.2
        while not self._stopping:
            try:
                await self.connect_peer(host, port)
                return
            except DuplicatePeer:
                return
            except (OSError, NodeError, protocol.ProtocolError):
                await asyncio.sleep(delay)
                delay = min(delay * 1.6, 3.0)

    async def _read_loop(self, link: PeerLink) -> None:
        try:
            while True:
                line = await link.reader.readline()
                if not line:
                    break
                link.last_seen = time.time()
                try:
                    msg = protocol.decode(line)
                except protocol.ProtocolError as exc:
                    logger.warning("[%s] bad message from %s: %s",
                                   self.node_id, link.node_id, exc)
                    continue
                await self._dispatch(link, msg)
        except (ConnectionError, asyncio.CancelledError, OSError):
            pass
        finally:
            link.established = False
            if self.peers.get(link.node_id) is link:
                del self.peers[link.node_id]
                self._emit("peer_lost", {"node_id": link.node_id})
            link.writer.close()

    def _post(self, link: PeerLink, msg: PeerMessage) -> None:
        """Queue a message on the link; per-connection ordering is preserved."""
        try:
            link.writer.write(protocol.encode(msg))
            asyncio.ensure_future(self._drain(link))
        except (ConnectionError, RuntimeError, OSError) as exc:
            logger.warning("[%s] send to %s failed: %s", self.node_id, link.node_id, exc)

    async def _drain(self, link: PeerLink) -> None:
        with contextlib.suppress(ConnectionError, RuntimeError, OSError):
            await link.writer.drain()

    async def _dispatch(self, link: PeerLink, msg: PeerMessage) -> None:
        kind, body = msg.kind, msg.body
        if kind is MessageKind.PING:
            return
        if kind is MessageKind.ADD_CLIENT:
            self._emit("peer_duplicate", {"node_id": link.node_id})
            return
        if kind is MessageKind.TRADE_REQUEST:
            self._on_trade_request(link, body)
        elif kind is MessageKind.TRADE_ACCEPT:
            self._on_trade_accept(body)
        elif kind is MessageKind.TRADE_REJECT:
            self._on_trade_reject(body)
        elif kind is MessageKind.BLOCK_ANNOUNCE:
            try:
                block = protocol.block_from_wire(body.get("block", {}))
            except protocol.MalformedMessage as exc:
                logger.warning("[%s] bad block from %s: %s", self.node_id,
                               link.node_id, exc)
                return
            self.on_block_received(block, link)
        elif kind is MessageKind.CHAIN_REQUEST:
            self._post(link, protocol.make(
                MessageKind.CHAIN_RESPONSE,
                blocks=[protocol.block_to_wire(b) for b in self.chain.blocks]))
        elif kind is MessageKind.CHAIN_RESPONSE:
            self._adopt_chain(body.get("blocks", []), link)

    # ------------------------------------------------------------- trade flow

    def request_trade(self, units: int) -> TradeSession:
        """Buyer side: verify funds locally, then ask the selling peer."""
        if not isinstance(units, int) or units <= 0:
            raise ValueError(f"units must be a positive integer, got {units!r}")
        balance = self.ledger.balance_of(self.address)
        if balance < units:
            raise InsufficientBalance(balance, units)
        link = next((l for l in self.peers.values() if l.established), None)
        if link is None:
            raise NoPeer("no established peer to trade with")
        if any(s.role is Role.BUYER and s.state in ACTIVE_STATES
               for s in self.sessions.values()):
            raise TradeOutstanding("a trade is already outstanding")
        order = TradeOrder(order_id=uuid.uuid4().hex[:12], buyer=self.node_id,
                           seller=link.node_id, units_wh=units,
                           created_at=self.clock.now())
        session = TradeSession(order=order, role=Role.BUYER)
        self.sessions[order.order_id] = session
        self._post(link, protocol.make(MessageKind.TRADE_REQUEST,
                                       order_id=order.order_id, units=units,
                                       buyer=self.node_id))
        self._tasks.append(asyncio.create_task(self._session_timeout(order.order_id)))
        self._emit("trade_sent", {"order_id": order.order_id, "units": units,
                                  "seller": link.node_id})
        return session

    async def _session_timeout(self, order_id: str) -> None:
        await asyncio.sleep(self.config.negotiation_timeout_s)
        session = self.sessions.get(order_id)
        if session is not None and session.state is SessionState.REQUESTED:
            session.state = SessionState.TIMED_OUT
            self._emit("trade_timeout", {"order_id": order_id})

    def _on_trade_request(self, link: PeerLink, body: dict) -> None:
        try:
            order = TradeOrder(order_id=str(body.get("order_id", "")),
                               buyer=link.node_id, seller=self.node_id,
                               units_wh=body.get("units"),
                               created_at=self.clock.now())
        except (ValueError, TypeError) as exc:
            logger.warning("[%s] bad trade request: %s", self.node_id, exc)
            return
        if not order.order_id or order.order_id in self.sessions:
            return
        self.sessions[order.order_id] = TradeSession(order=order, role=Role.SELLER)
        self._emit("trade_requested", {"order_id": order.order_id,
                                       "buyer": order.buyer,
                                       "units": order.units_wh})

    def approve_trade(self, order_id: str) -> TradeSession:
        """Seller side: reserve surplus, accept, and mine the block."""
        session = self.sessions.get(order_id)
        if session is None or session.role is not Role.SELLER:
            raise UnknownOrder(f"no incoming order {order_id!r}")
        if session.state is not SessionState.REQUESTED:
            raise UnknownOrder(f"order {order_id!r} is {session.state.value}")
        link = self.peers.get(session.order.buyer)
        now = self.clock.now()
        if self.market.covers(now):
            self.market.tick(now)
        try:
            self.market.reserve(session.order.units_wh)
        except InsufficientSurplus as exc:
            session.state = SessionState.REJECTED
            session.reason = "insufficient_surplus"
            if link is not None:
                self._post(link, protocol.make(MessageKind.TRADE_REJECT,
                                               order_id=order_id,
                                               reject_reason="insufficient_surplus"))
            self._emit("trade_rejected", {"order_id": order_id,
                                          "reason": "insufficient_surplus",
                                          "available": exc.available_wh})
            raise
        session.state = SessionState.ACCEPTED
        if link is not None:
            self._post(link, protocol.make(MessageKind.TRADE_ACCEPT, order_id=order_id))
        session.state = SessionState.MINING
        self._emit("mining_started", {"order_id": order_id,
                                      "units": session.order.units_wh})
        self._tasks.append(asyncio.create_task(self._mine_and_commit(session)))
        return session

    def _on_trade_accept(self, body: dict) -> None:
        session = self.sessions.get(str(body.get("order_id", "")))
        if session is not None and session.state is SessionState.REQUESTED:
            session.state = SessionState.ACCEPTED
            session.state = SessionState.MINING  # the seller mines right away
            self._emit("trade_accepted", {"order_id": session.order.order_id})

    def _on_trade_reject(self, body: dict) -> None:
        session = self.sessions.get(str(body.get("order_id", "")))
        if session is not None and session.state in ACTIVE_STATES:
            session.state = SessionState.REJECTED
            session.reason = str(body.get("reject_reason", "rejected"))
            self._emit("trade_rejected", {"order_id": session.order.order_id,
                                          "reason": session.reason})

    async def _mine_and_commit(self, session: TradeSession) -> None:
        order = session.order
        loop = asyncio.get_running_loop()
        for attempt in (1, 2):
            cancel = threading.Event()
            self._active_mine = (order.order_id, cancel)
            prev = self.chain.tip
            try:
                block = await loop.run_in_executor(
                    None, chain_mod.mine, prev, address_for(order.buyer),
                    self.address, order.units_wh, self.chain.difficulty_bits,
                    self.clock.now(), cancel.is_set)
            except Cancelled:
                self._active_mine = None
                if attempt == 1 and not self._stopping:
                    session.state = SessionState.ACCEPTED  # one retry on a fresh tip
                    self._emit("mining_cancelled", {"order_id": order.order_id,
                                                    "retry": True})
                    session.state = SessionState.MINING
                    continue
                self._fail_mining(session, "mining_cancelled")
                return
            self._active_mine = None
            if block.prev_hash != self.chain.tip.hash:
                if attempt == 1:  # a competing block landed while we searched
                    continue
                self._fail_mining(session, "stale_tip")
                return
            try:
                self._commit_block(block, announce=True)
            except LedgerError as exc:
                self.chain.blocks.pop()
                self.market.release(order.units_wh)
                session.state = SessionState.REJECTED
                session.reason = "insufficient_balance"
                link = self.peers.get(order.buyer)
                if link is not None:
                    self._post(link, protocol.make(MessageKind.TRADE_REJECT,
                                                   order_id=order.order_id,
                                                   reject_reason="insufficient_balance"))
                self._emit("trade_rejected", {"order_id": order.order_id,
                                              "reason": f"ledger: {exc}"})
            return

    def _fail_mining(self, session: TradeSession, reason: str) -> None:
        self.market.release(session.order.units_wh)
        session.state = SessionState.REJECTED
        session.reason = reason
        link = self.peers.get(session.order.buyer)
        if link is not None:
            self._post(link, protocol.make(MessageKind.TRADE_REJECT,
                                           order_id=session.order.order_id,
                                           reject_reason=reason))
        self._emit("trade_rejected", {"order_id": session.order.order_id,
                                      "reason": reason})

    def _cancel_mining(self, why: str) -> None:
        if self._active_mine is not None:
            order_id, cancel = self._active_mine
            cancel.set()
            logger.info("[%s] cancelling mining of %s: %s", self.node_id, order_id, why)

    # ------------------------------------------------------------ chain logic

    def on_block_received(self, block: Block, link: PeerLink | None = None) -> str:
        """Apply, queue or reject an announced block. Idempotent on duplicates."""
        if chain_mod.hash_block(block) != block.hash or not chain_mod.meets_difficulty(
                block.hash, self.chain.difficulty_bits):
            self._emit("block_rejected", {"index": block.index, "reason": "bad_hash",
                                          "from": link.node_id if link else None})
            return "rejected"
        tip = self.chain.tip
        if block.index <= tip.index:
            existing = self.chain.blocks[block.index]
            if existing.hash == block.hash:
                return "applied"  # duplicate announce; effects already applied
            if link is not None:  # conflicting history: resolve via full sync
                self._post(link, protocol.make(MessageKind.CHAIN_REQUEST))
            return "rejected"
        if block.index == tip.index + 1:
            if block.prev_hash != tip.hash or block.timestamp < tip.timestamp:
                if link is not None:
                    self._post(link, protocol.make(MessageKind.CHAIN_REQUEST))
                return "rejected"
            self._cancel_mining("competing block arrived")
            try:
                self._commit_block(block, announce=False)
            except LedgerError as exc:
                self.chain.blocks.pop()
                self._emit("block_rejected", {"index": block.index,
                                              "reason": f"ledger: {exc}"})
                return "rejected"
            self._drain_pending()
            return "applied"
        self._pending_blocks[block.index] = block
        if link is not None:
            self._post(link, protocol.make(MessageKind.CHAIN_REQUEST))
        self._emit("block_queued", {"index": block.index})
        return "queued"

    def _drain_pending(self) -> None:
        while self.chain.tip.index + 1 in self._pending_blocks:
            block = self._pending_blocks.pop(self.chain.tip.index + 1)
            if self.on_block_received(block, link=None) != "applied":
                break

    def _commit_block(self, block: Block, announce: bool) -> None:
        """Append one block and apply its ledger/market/session effects
        atomically with respect to API snapshots (single-loop ownership)."""
        self.chain.blocks.append(block)
        self.ledger.transfer(block.sender, block.receiver, block.amount)
        if block.receiver == self.address:
            self.market.commit_sold(block.amount)
        if block.sender == self.address:
            self.market.commit_bought(block.amount)
        self._match_session(block)
        chain_mod.save_chain(self.chain, self.chain_path)
        self.ledger.save_wallets(self.wallets_path)
        sent = 0
        if announce:
            for peer in self.peers.values():
                if peer.established:
                    self._post(peer, protocol.make(
                        MessageKind.BLOCK_ANNOUNCE,
                        block=protocol.block_to_wire(block)))
                    sent += 1
        self._emit("block_committed", {
            "index": block.index, "amount": block.amount, "nonce": block.nonce,
            "hash": block.hash, "announced_to": sent,
        })

    def _match_session(self, block: Block) -> None:
        candidates = sorted(
            (s for s in self.sessions.values()
             if s.state in ACTIVE_STATES
             and s.order.units_wh == block.amount
             and address_for(s.order.buyer) == block.sender
             and address_for(s.order.seller) == block.receiver),
            key=lambda s: s.created_wall)
        if candidates:
            session = candidates[0]
            session.state = SessionState.COMMITTED
            session.block_index = block.index
            session.committed_wall = time.time()
            self._emit("session_committed", {"order_id": session.order.order_id,
                                             "block_index": block.index})

    def _adopt_chain(self, blocks_wire: list, link: PeerLink | None) -> None:
        try:
            blocks = [protocol.block_from_wire(b) for b in blocks_wire]
        except protocol.MalformedMessage as exc:
            logger.warning("[%s] bad chain response: %s", self.node_id, exc)
            return
        remote = Chain(blocks=blocks, difficulty_bits=self.chain.difficulty_bits)
        try:
            chosen = chain_mod.choose_chain(self.chain, remote, self.config.genesis_time)
        except RemoteInvalid as exc:
            self._emit("chain_rejected", {"reason": str(exc),
                                          "from": link.node_id if link else None})
            return
        if chosen is not remote:
            return
        try:
            ledger = self._fold_ledger(remote)
        except LedgerError as exc:
            self._emit("chain_rejected", {"reason": f"ledger: {exc}"})
            return
        old_height = self.chain.height
        self.chain = remote
        self.ledger = ledger
        for block in self.chain.blocks[old_height:]:
            self._match_session(block)
            if block.receiver == self.address:
                self.market.commit_sold(block.amount)
            if block.sender == self.address:
                self.market.commit_bought(block.amount)
        chain_mod.save_chain(self.chain, self.chain_path)
        self.ledger.save_wallets(self.wallets_path)
        self._emit("chain_sync", {"height": self.chain.height,
                                  "was": old_height})
        self._drain_pending()

    # ------------------------------------------------------------------- api

    def api_snapshot(self) -> dict:
        now = self.clock.now()
        market: dict | None = None
        if self.market.interval_index is not None:
            state = self.market.state
            market = {
                "gen_w": state.gen_now_w,
                "demand_w": state.demand_now_w,
                "surplus_w": state.surplus_now_w,
                "surplus_remaining_wh": self.market.surplus_remaining_wh,
                "energy_sold_wh": state.energy_sold_wh,
                "energy_bought_wh": state.energy_bought_wh,
                "interval_s": self.market.interval_s,
            }
        tip = self.chain.tip
        return {
            "node_id": self.node_id,
            "address": self.address,
            "sim_time": format_iso(now),
            "clock_mode": self.clock.mode.value,
            "clock_factor": self.clock.factor,
            "market": market,
            "balance": self.ledger.balance_of(self.address),
            "endowment": self.config.endowments.get(self.node_id, 0),
            "chain": {
                "height": self.chain.height,
                "difficulty_bits": self.chain.difficulty_bits,
                "last_block": protocol.block_to_wire(tip),
            },
            "peers": [l.to_dict() for l in self.peers.values()],
            "sessions": [s.to_dict() for s in
                         sorted(self.sessions.values(), key=lambda s: s.created_wall)],
            "forecast": self._latest_forecast,
        }

    def forecast_for(self, date_text: str) -> dict:
        if self.model is None:
            raise ForecastError("no model configured")
        if not self.weather:
            raise ForecastError("no weather data configured")
        try:
            wanted = datetime.strptime(date_text, "%Y-%m-%d").date()
        except ValueError:
            raise ForecastError(f"bad date {date_text!r}; use YYYY-MM-DD") from None
        day = [r for r in self.weather if r.timestamp.date() == wanted]
        predictions = predict_minute_ahead(self.model, day)
        curve = {
            "date": date_text,
            "points": [
                {"timestamp": format_iso(r.timestamp), "predicted_w": float(p)}
                for r, p in zip(day, predictions)
            ],
        }
        self._latest_forecast = curve
        self._emit("forecast_ready", {"date": date_text, "points": len(day)})
        return curve

    def _build_app(self) -> FastAPI:
        app = FastAPI(title=f"wattchain node {self.node_id}")
        # the operator console is served as static assets from another origin
        app.add_middleware(CORSMiddleware, allow_origins=["*"],
                           allow_methods=["*"], allow_headers=["*"])
        node = self

        @app.get("/status")
        async def status():
            return node.api_snapshot()

        @app.get("/chain")
        async def chain_view():
            return {
                "height": node.chain.height,
                "difficulty_bits": node.chain.difficulty_bits,
                "blocks": [protocol.block_to_wire(b) for b in node.chain.blocks],
                "records": [chain_mod.block_record(b) for b in node.chain.blocks],
            }

        @app.get("/balance")
        async def balance():
            return {"address": node.address,
                    "balance": node.ledger.balance_of(node.address),
                    "accounts": node.ledger.snapshot()}

        @app.get("/sessions")
        async def sessions():
            return [s.to_dict() for s in
                    sorted(node.sessions.values(), key=lambda s: s.created_wall)]

        @app.get("/forecast")
        async def forecast(date: str):
            try:
                return node.forecast_for(date)
            except ForecastError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from None

        @app.post("/trade/request")
        async def trade_request(payload: dict = Body(...)):
            try:
                session = node.request_trade(payload.get("units"))
            except (ValueError, InsufficientBalance, NoPeer) as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
            except TradeOutstanding as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from None
            return session.to_dict()

        @app.post("/trade/approve")
        async def trade_approve(payload: dict = Body(...)):
            try:
                session = node.approve_trade(str(payload.get("order_id", "")))
            except UnknownOrder as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from None
            except InsufficientSurplus as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from None
            return session.to_dict()

        @app.post("/peer/add")
        async def peer_add(payload: dict = Body(...)):
            try:
                host = str(payload["host"])
                port = int(payload["port"])
            except (KeyError, TypeError, ValueError):
                raise HTTPException(status_code=400, detail="need host and port") from None
            try:
                link = await node.connect_peer(host, port)
            except DuplicatePeer as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from None
            except (OSError, NodeError, protocol.ProtocolError) as exc:
                raise HTTPException(status_code=502, detail=str(exc)) from None
            return link.to_dict()

        @app.websocket("/events")
        async def events(ws: WebSocket):
            await ws.accept()
            queue = node.subscribe()
            try:
                await ws.send_json({"seq": node._seq, "event": "hello",
                                    "data": {}, "snapshot": node.api_snapshot()})
                while True:
                    await ws.send_json(await queue.get())
            except (WebSocketDisconnect, ConnectionError, RuntimeError):
                pass
            finally:
                node.unsubscribe(queue)

        return app

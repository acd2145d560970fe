"""Two-node integration: handshake, trading, block propagation, chain sync.

Nodes run in-process on one event loop, talking over real localhost TCP
and serving their real HTTP/WebSocket APIs.
"""

import asyncio
import json
from datetime import timedelta

import pytest

from wattchain import chain as chain_mod
from wattchain import protocol
from wattchain.chain import mine, new_chain, save_chain
from wattchain.clock import ClockMode
from wattchain.config import NodeConfig
from wattchain.energy_data import SeriesKind, write_power_csv
from wattchain.ledger import InsufficientBalance, address_for
from wattchain.market import InsufficientSurplus
from wattchain.node import (DuplicatePeer, Node, SessionState,
                            TradeOutstanding)
from wattchain.protocol import MessageKind

from conftest import DAY, free_port, make_series

SIM_START = DAY + timedelta(hours=10)
ENDOWMENTS = {"alpha": 100_000, "beta": 100_000, "ghost": 100_000}


def build_config(tmp_path, name, *, peers=(), gen_w=200_000.0, cons_w=0.0,
                 difficulty=4, negotiation_timeout_s=30.0) -> NodeConfig:
    base = tmp_path / name
    base.mkdir(parents=True, exist_ok=True)
    gen = make_series([gen_w] * 288, interval_s=300, node_id=name)
    cons = make_series([cons_w] * 288, interval_s=300, node_id=name,
                       kind=SeriesKind.CONSUMPTION)
    gen_path = base / "gen.csv"
    cons_path = base / "cons.csv"
    write_power_csv(gen, str(gen_path))
    write_power_csv(cons, str(cons_path))
    return NodeConfig(
        node_id=name,
        listen_port=free_port(),
        api_port=free_port(),
        generation_csv=str(gen_path),
        consumption_csv=str(cons_path),
        state_dir=str(base / "state"),
        peers=list(peers),
        endowments=dict(ENDOWMENTS),
        difficulty_bits=difficulty,
        clock_mode=ClockMode.ACCELERATED,
        clock_factor=1.0,
        sim_start=SIM_START,
        negotiation_timeout_s=negotiation_timeout_s,
    )


async def wait_until(predicate, timeout=10.0, what="condition"):
    deadline = asyncio.get_event_loop().time() + timeout
    while True:
        if predicate():
            return
        if asyncio.get_event_loop().time() > deadline:
            raise AssertionError(f"timed out waiting for {what}")
        await asyncio.sleep(0.02)


async def start_pair(tmp_path, seller_gen_w=200_000.0, **kwargs):
    seller = Node(build_config(tmp_path, "alpha", gen_w=seller_gen_w, **kwargs))
    await seller.start()
    buyer = Node(build_config(
        tmp_path, "beta", peers=[("127.0.0.1", seller.config.listen_port)],
        gen_w=0.0, cons_w=5000.0, **kwargs))
    await buyer.start()
    await wait_until(lambda: "beta" in seller.peers and "alpha" in buyer.peers,
                     what="handshake")
    return seller, buyer


def run(coro, timeout=60.0):
    return asyncio.run(asyncio.wait_for(coro, timeout))


class TestHandshake:
    def test_both_sides_establish(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path)
            try:
                assert seller.peers["beta"].established
                assert buyer.peers["alpha"].established
                assert buyer.api_snapshot()["peers"][0]["node_id"] == "alpha"
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())

    def test_duplicate_peer_rejected(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path)
            try:
                with pytest.raises((DuplicatePeer, OSError)):
                    await buyer.connect_peer("127.0.0.1", seller.config.listen_port)
                assert len(seller.peers) == 1
                assert len(buyer.peers) == 1
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())


class TestTradeFlow:
    def test_committed_trade_moves_tokens_and_energy(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path)
            try:
                session = buyer.request_trade(200)
                await wait_until(
                    lambda: any(s.state is SessionState.REQUESTED
                                for s in seller.sessions.values()),
                    what="request to arrive")
                seller.approve_trade(session.order.order_id)
                await wait_until(
                    lambda: session.state is SessionState.COMMITTED,
                    what="buyer commit")
                await wait_until(
                    lambda: seller.sessions[session.order.order_id].state
                    is SessionState.COMMITTED,
                    what="seller commit")

                assert buyer.chain.height == seller.chain.height == 2
                assert [b.hash for b in buyer.chain.blocks] == \
                       [b.hash for b in seller.chain.blocks]
                for node in (buyer, seller):
                    assert node.ledger.balance_of(address_for("beta")) == 99_800
                    assert node.ledger.balance_of(address_for("alpha")) == 100_200
                assert seller.market.state.energy_sold_wh == 200
                assert buyer.market.state.energy_bought_wh == 200
                block = buyer.chain.blocks[1]
                assert block.sender == address_for("beta")
                assert block.receiver == address_for("alpha")
                assert block.amount == 200
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())

    def test_insufficient_surplus_rejects(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path, seller_gen_w=0.0)
            try:
                session = buyer.request_trade(200)
                await wait_until(
                    lambda: any(s.state is SessionState.REQUESTED
                                for s in seller.sessions.values()),
                    what="request to arrive")
                with pytest.raises(InsufficientSurplus):
                    seller.approve_trade(session.order.order_id)
                await wait_until(
                    lambda: session.state is SessionState.REJECTED,
                    what="buyer side rejection")
                assert session.reason == "insufficient_surplus"
                assert buyer.chain.height == 1
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())

    def test_insufficient_balance_blocks_request(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path)
            try:
                with pytest.raises(InsufficientBalance):
                    buyer.request_trade(100_001)
                assert not buyer.sessions
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())

    def test_one_outstanding_trade_per_buyer(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path)
            try:
                buyer.request_trade(100)
                with pytest.raises(TradeOutstanding):
                    buyer.request_trade(50)
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())

    def test_negotiation_timeout(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path,
                                             negotiation_timeout_s=0.3)
            try:
                session = buyer.request_trade(200)
                await wait_until(
                    lambda: session.state is SessionState.TIMED_OUT,
                    what="negotiation timeout")
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())


def seed_chain_with_ghost_blocks(config: NodeConfig, n_blocks: int):
    """Persist a pre-built valid chain into a node's state directory."""
    chain = new_chain(config.difficulty_bits, config.genesis_time)
    for i in range(n_blocks):
        chain.blocks.append(mine(
            chain.tip, address_for("ghost"), address_for("alpha"), 100 + i,
            config.difficulty_bits, SIM_START + timedelta(minutes=i)))
    import os

    os.makedirs(config.state_dir, exist_ok=True)
    save_chain(chain, f"{config.state_dir}/chain.txt")
    return chain


class TestChainSync:
    def test_stale_node_converges_on_connect(self, tmp_path):
        async def scenario():
            config_a = build_config(tmp_path, "alpha")
            seeded = seed_chain_with_ghost_blocks(config_a, 3)
            node_a = Node(config_a)
            assert node_a.chain.height == 4
            await node_a.start()
            node_b = Node(build_config(
                tmp_path, "beta",
                peers=[("127.0.0.1", config_a.listen_port)], gen_w=0.0))
            await node_b.start()
            try:
                await wait_until(lambda: node_b.chain.height == 4, timeout=10.0,
                                 what="stale node to adopt the longer chain")
                assert [chain_mod.block_record(b) for b in node_b.chain.blocks] == \
                       [chain_mod.block_record(b) for b in seeded.blocks]
                # ledger refolded from the adopted chain
                assert node_b.ledger.balance_of(address_for("ghost")) == \
                    100_000 - (100 + 101 + 102)
            finally:
                await node_b.stop()
                await node_a.stop()

        run(scenario())

    def test_gap_announce_triggers_sync(self, tmp_path):
        async def scenario():
            config = build_config(tmp_path, "alpha")
            node = Node(config)
            await node.start()
            remote = new_chain(config.difficulty_bits, config.genesis_time)
            for i in range(3):
                remote.blocks.append(mine(
                    remote.tip, address_for("ghost"), address_for("alpha"),
                    50 + i, config.difficulty_bits,
                    SIM_START + timedelta(minutes=i)))
            try:
                reader, writer = await asyncio.open_connection(
                    "127.0.0.1", config.listen_port)
                writer.write(protocol.encode(protocol.make(
                    MessageKind.ADD_CLIENT, node_id="ghost", listen_port=1)))
                await writer.drain()
                ack = protocol.decode(await reader.readline())
                assert ack.kind is MessageKind.ADD_CLIENT_ACK

                # announce only the tip: the node sees a gap and asks for the chain
                writer.write(protocol.encode(protocol.make(
                    MessageKind.BLOCK_ANNOUNCE,
                    block=protocol.block_to_wire(remote.tip))))
                await writer.drain()
                saw_request = False
                while True:
                    msg = protocol.decode(await asyncio.wait_for(
                        reader.readline(), 5.0))
                    if msg.kind is MessageKind.CHAIN_REQUEST and saw_request:
                        # second request is the gap-triggered one
                        break
                    if msg.kind is MessageKind.CHAIN_REQUEST:
                        saw_request = True
                        continue
                writer.write(protocol.encode(protocol.make(
                    MessageKind.CHAIN_RESPONSE,
                    blocks=[protocol.block_to_wire(b) for b in remote.blocks])))
                await writer.drain()
                await wait_until(lambda: node.chain.height == 4, timeout=10.0,
                                 what="gap sync adoption")
                writer.close()
            finally:
                await node.stop()

        run(scenario())


class TestMiningRace:
    def test_competing_block_cancels_and_retries(self, tmp_path, monkeypatch):
        real_mine = chain_mod.mine
        calls = {"n": 0}

        def fake_mine(prev, sender, receiver, amount, bits, clock,
                      should_cancel=None, nonce_cap=2**32):
            calls["n"] += 1
            if calls["n"] == 1:
                import time as _time

                while not should_cancel():
                    _time.sleep(0.005)
                raise chain_mod.Cancelled("cancelled by test")
            return real_mine(prev, sender, receiver, amount, bits, clock,
                             should_cancel, nonce_cap)

        async def scenario():
            seller, buyer = await start_pair(tmp_path, difficulty=0)
            monkeypatch.setattr(chain_mod, "mine", fake_mine)
            try:
                session = buyer.request_trade(100)
                await wait_until(
                    lambda: any(s.state is SessionState.REQUESTED
                                for s in seller.sessions.values()),
                    what="request to arrive")
                seller.approve_trade(session.order.order_id)
                await wait_until(lambda: calls["n"] == 1, what="miner running")
                # a competing remote block arrives mid-mine
                competing = real_mine(seller.chain.tip, address_for("ghost"),
                                      address_for("alpha"), 50, 0,
                                      seller.clock.now())
                assert seller.on_block_received(competing) == "applied"
                await wait_until(
                    lambda: seller.sessions[session.order.order_id].state
                    is SessionState.COMMITTED,
                    what="retry after cancellation")
                assert calls["n"] == 2
                trade_block = seller.chain.blocks[-1]
                assert trade_block.index == 2
                assert trade_block.amount == 100
                await wait_until(lambda: buyer.chain.height == 3,
                                 what="buyer catches up")
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario())


class TestApiSurface:
    def test_status_chain_balance_sessions_and_ws(self, tmp_path):
        import httpx
        import websockets

        async def scenario():
            seller, buyer = await start_pair(tmp_path)
            base = f"http://127.0.0.1:{buyer.config.api_port}"
            try:
                async with httpx.AsyncClient() as client:
                    status = (await client.get(f"{base}/status")).json()
                    assert status["node_id"] == "beta"
                    assert status["chain"]["height"] == 1
                    assert status["balance"] == 100_000
                    assert len(status["peers"]) == 1

                    ws_url = f"ws://127.0.0.1:{buyer.config.api_port}/events"
                    async with websockets.connect(ws_url) as ws:
                        hello = json.loads(await asyncio.wait_for(ws.recv(), 5))
                        assert hello["event"] == "hello"

                        resp = await client.post(f"{base}/trade/request",
                                                 json={"units": 200})
                        assert resp.status_code == 200
                        order_id = resp.json()["order_id"]

                        await wait_until(
                            lambda: any(s.state is SessionState.REQUESTED
                                        for s in seller.sessions.values()),
                            what="request to arrive")
                        approve = await httpx.AsyncClient().post(
                            f"http://127.0.0.1:{seller.config.api_port}/trade/approve",
                            json={"order_id": order_id})
                        assert approve.status_code == 200

                        saw_commit = False
                        for _ in range(50):
                            event = json.loads(await asyncio.wait_for(ws.recv(), 10))
                            if event["event"] in ("block_committed", "session_committed"):
                                saw_commit = True
                                break
                        assert saw_commit

                    chain_view = (await client.get(f"{base}/chain")).json()
                    assert chain_view["height"] == 2
                    assert len(chain_view["records"]) == 2
                    balance = (await client.get(f"{base}/balance")).json()
                    assert balance["balance"] == 99_800
                    sessions = (await client.get(f"{base}/sessions")).json()
                    assert sessions[0]["state"] == "committed"
                    assert sessions[0]["block_index"] == 1

                    # surface errors: unknown order and zero units
                    bad = await client.post(f"{base}/trade/request", json={"units": 0})
                    assert bad.status_code == 400
            finally:
                await buyer.stop()
                await seller.stop()

        run(scenario(), timeout=90.0)


class TestRestart:
    def test_chain_and_wallets_survive_restart(self, tmp_path):
        async def scenario():
            seller, buyer = await start_pair(tmp_path)
            config = buyer.config
            try:
                session = buyer.request_trade(500)
                await wait_until(
                    lambda: any(s.state is SessionState.REQUESTED
                                for s in seller.sessions.values()),
                    what="request to arrive")
                seller.approve_trade(session.order.order_id)
                await wait_until(lambda: session.state is SessionState.COMMITTED,
                                 what="commit")
            finally:
                await buyer.stop()
                await seller.stop()

            reborn = Node(config)
            assert reborn.chain.height == 2
            assert reborn.ledger.balance_of(address_for("beta")) == 99_500

        run(scenario())

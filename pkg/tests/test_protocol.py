import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wattchain.chain import genesis, mine
from wattchain.protocol import (MalformedMessage, MessageKind, PeerMessage,
                                ProtocolError, UnknownKind, block_from_wire,
                                block_to_wire, decode, encode, make)

from conftest import DAY


class TestRoundTrip:
    def test_ping(self):
        msg = make(MessageKind.PING)
        assert decode(encode(msg)) == msg

    def test_trade_request_preserves_units(self):
        msg = make(MessageKind.TRADE_REQUEST, order_id="o-17", units=200,
                   buyer="library")
        out = decode(encode(msg))
        assert out == msg
        assert out.body["units"] == 200

    @pytest.mark.parametrize("kind", list(MessageKind))
    def test_all_kinds(self, kind):
        msg = make(kind, node_id="x", listen_port=7401)
        assert decode(encode(msg)) == msg

    def test_unknown_extra_fields_survive(self):
        line = b'{"kind":"PING","future_field":[1,2,3]}\n'
        msg = decode(line)
        assert msg.body["future_field"] == [1, 2, 3]


class TestRejects:
    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            decode(b'{"kind":"NOPE"}')

    def test_missing_kind(self):
        with pytest.raises(MalformedMessage):
            decode(b'{"units":5}')

    def test_non_object(self):
        with pytest.raises(MalformedMessage):
            decode(b"[1,2,3]")

    def test_not_json(self):
        with pytest.raises(MalformedMessage):
            decode(b"hello world")

    def test_not_utf8(self):
        with pytest.raises(MalformedMessage):
            decode(b"\xff\xfe{}")

    @pytest.mark.parametrize("payload", [
        b'{"kind":"TRADE_REQUEST","units":-5}',
        b'{"kind":"TRADE_REQUEST","units":2.5}',
        b'{"kind":"TRADE_REQUEST","units":true}',
        b'{"kind":"TRADE_REQUEST","units":"200"}',
        b'{"kind":"BLOCK_ANNOUNCE","block":{"index":-1}}',
    ])
    def test_counters_must_be_non_negative_ints(self, payload):
        with pytest.raises(MalformedMessage):
            decode(payload)


class TestBlockWire:
    def test_round_trip(self):
        block = mine(genesis(), "aa", "bb", 200, 4, DAY)
        assert block_from_wire(block_to_wire(block)) == block

    def test_bad_payload(self):
        with pytest.raises(MalformedMessage):
            block_from_wire({"index": 1})
        with pytest.raises(MalformedMessage):
            block_from_wire("nope")


@given(st.binary(max_size=200))
@settings(max_examples=500, deadline=None)
def test_decode_total_on_arbitrary_bytes(data):
    try:
        msg = decode(data)
    except ProtocolError:
        return
    assert isinstance(msg, PeerMessage)


def test_decode_total_on_random_lines_bulk():
    rng = random.Random(1)
    fragments = [b'{"kind":', b'"PING"', b'}', b'"units":', b'-3', b'null',
                 b'\x00\xff', b'[', b']', b'{', b'wat', b'"', b',']
    for _ in range(5000):
        line = b"".join(rng.choice(fragments) for _ in range(rng.randrange(1, 8)))
        try:
            decode(line)
        except ProtocolError:
            pass

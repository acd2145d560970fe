"""Newline-delimited JSON wire protocol between prosumer nodes.

One UTF-8 JSON object per line; the mandatory ``kind`` field dispatches.
Unknown extra fields are carried through untouched so newer peers stay
compatible. The decoder never raises anything but the two typed errors
below, whatever bytes arrive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

from .chain import Block
from .energy_data import format_iso, parse_iso


class MessageKind(str, Enum):
    ADD_CLIENT = "ADD_CLIENT"
    ADD_CLIENT_ACK = "ADD_CLIENT_ACK"
    TRADE_REQUEST = "TRADE_REQUEST"
    TRADE_ACCEPT = "TRADE_ACCEPT"
    TRADE_REJECT = "TRADE_REJECT"
    BLOCK_ANNOUNCE = "BLOCK_ANNOUNCE"
    CHAIN_REQUEST = "CHAIN_REQUEST"
    CHAIN_RESPONSE = "CHAIN_RESPONSE"
    PING = "PING"


class ProtocolError(Exception):
    pass


class MalformedMessage(ProtocolError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class UnknownKind(ProtocolError):
    def __init__(self, kind: str):
        super().__init__(f"unknown message kind {kind!r}")
        self.kind = kind


@dataclass(frozen=True)
class PeerMessage:
    kind: MessageKind
    body: dict = field(default_factory=dict)


# Wire fields that must arrive as non-negative integers.
_COUNTER_FIELDS = {"units", "listen_port", "index", "amount", "nonce", "seq"}


def encode(msg: PeerMessage) -> bytes:
    payload = {"kind": msg.kind.value, **msg.body}
    return (json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes | str) -> PeerMessage:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMessage(f"not UTF-8: {exc}") from None
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedMessage(f"not JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise MalformedMessage("message must be a JSON object")
    kind_value = payload.pop("kind", None)
    if not isinstance(kind_value, str):
        raise MalformedMessage("missing or non-string 'kind' field")
    try:
        kind = MessageKind(kind_value)
    except ValueError:
        raise UnknownKind(kind_value) from None
    _check_counters(payload)
    return PeerMessage(kind=kind, body=payload)


def _check_counters(obj) -> None:
    if isinstance(obj, dict):
        for key, value in obj.items():
            if key in _COUNTER_FIELDS:
                if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                    raise MalformedMessage(f"field {key!r} must be a non-negative integer")
            _check_counters(value)
    elif isinstance(obj, list):
        for item in obj:
            _check_counters(item)


def block_to_wire(block: Block) -> dict:
    return {
        "index": block.index,
        "timestamp": format_iso(block.timestamp),
        "sender": block.sender,
        "receiver": block.receiver,
        "amount": block.amount,
        "nonce": block.nonce,
        "prev_hash": block.prev_hash,
        "hash": block.hash,
    }


def block_from_wire(data: dict) -> Block:
    if not isinstance(data, dict):
        raise MalformedMessage("block payload must be an object")
    try:
        return Block(
            index=int(data["index"]),
            timestamp=parse_iso(data["timestamp"]),
            sender=str(data["sender"]),
            receiver=str(data["receiver"]),
            amount=int(data["amount"]),
            nonce=int(data["nonce"]),
            prev_hash=str(data["prev_hash"]),
            hash=str(data["hash"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedMessage(f"bad block payload: {exc}") from None


def make(kind: MessageKind, **body) -> PeerMessage:
    return PeerMessage(kind=kind, body=body)

"""Hash-linked block store with proof-of-work mining and full validation.

Each block carries exactly one trade. The canonical preimage is
``index|timestamp|sender|receiver|amount|prev_hash|nonce`` (UTF-8, second
precision UTC timestamps); the first block appends the ``The origin`` tag
and is exempt from the difficulty rule. Difficulty counts leading zero
bits of the SHA-256 digest.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable

from .energy_data import format_iso, parse_iso

GENESIS_PREV_HASH = "0" * 64
GENESIS_TAG = "The origin"
GENESIS_PARTY = "genesis"
DEFAULT_GENESIS_TIME = datetime(2020, 4, 23, 0, 0, 0, tzinfo=timezone.utc)
DEFAULT_DIFFICULTY_BITS = 12
NONCE_CAP = 2**32


class ChainError(Exception):
    pass


class Cancelled(ChainError):
    """Mining was interrupted, typically by a competing remote block."""


class NonceExhausted(ChainError):
    pass


class RemoteInvalid(ChainError):
    def __init__(self, fault: "ChainFault"):
        super().__init__(f"remote chain invalid: {fault}")
        self.fault = fault


@dataclass(frozen=True)
class Block:
    index: int
    timestamp: datetime
    sender: str
    receiver: str
    amount: int
    nonce: int
    prev_hash: str
    hash: str

    def __post_init__(self):
        if self.index < 0 or self.nonce < 0 or self.amount < 0:
            raise ValueError("index, nonce and amount must be non-negative")
        if "|" in self.sender or "|" in self.receiver:
            raise ValueError("party identifiers must not contain the field delimiter")


def preimage(block: Block) -> bytes:
    """Canonical byte string the block hash commits to."""
    return preimage_fields(block.index, block.timestamp, block.sender,
                           block.receiver, block.amount, block.prev_hash, block.nonce)


def preimage_fields(index: int, timestamp: datetime, sender: str, receiver: str,
                    amount: int, prev_hash: str, nonce: int) -> bytes:
    text = f"{index}|{format_iso(timestamp)}|{sender}|{receiver}|{amount}|{prev_hash}|{nonce}"
    if index == 0:
        text += f"|{GENESIS_TAG}"
    return text.encode("utf-8")


def hash_block(block: Block) -> str:
    return hashlib.sha256(preimage(block)).hexdigest()


def meets_difficulty(hash_hex: str, difficulty_bits: int) -> bool:
    if difficulty_bits <= 0:
        return True
    return int(hash_hex, 16) >> (256 - difficulty_bits) == 0


def genesis(timestamp: datetime = DEFAULT_GENESIS_TIME) -> Block:
    """The deterministic first block; identical for every node that shares
    the configured genesis time."""
    block = Block(index=0, timestamp=timestamp, sender=GENESIS_PARTY,
                  receiver=GENESIS_PARTY, amount=0, nonce=0,
                  prev_hash=GENESIS_PREV_HASH, hash="0" * 64)
    return replace(block, hash=hash_block(block))


def mine(prev: Block, sender: str, receiver: str, amount: int,
         difficulty_bits: int, clock: datetime,
         should_cancel: Callable[[], bool] | None = None,
         nonce_cap: int = NONCE_CAP) -> Block:
    """Search nonces from zero until the block hash meets the difficulty.

    The timestamp is the clock at mining start, clamped to the previous
    block's so chains stay monotone under small clock skew. Checks the
    cancel callback every 256 attempts.
    """
    if amount <= 0:
        raise ValueError("amount must be positive")
    timestamp = max(clock, prev.timestamp)
    ts_text = format_iso(timestamp)
    index = prev.index + 1
    prefix = f"{index}|{ts_text}|{sender}|{receiver}|{amount}|{prev.hash}|"
    threshold = 256 - difficulty_bits
    for nonce in range(nonce_cap):
        if should_cancel is not None and nonce % 256 == 0 and should_cancel():
            raise Cancelled(f"mining of block {index} cancelled at nonce {nonce}")
        digest = hashlib.sha256(f"{prefix}{nonce}".encode("utf-8")).hexdigest()
        if difficulty_bits <= 0 or int(digest, 16) >> threshold == 0:
            return Block(index=index, timestamp=timestamp, sender=sender,
                         receiver=receiver, amount=amount, nonce=nonce,
                         prev_hash=prev.hash, hash=digest)
    raise NonceExhausted(f"no nonce below {nonce_cap} met difficulty {difficulty_bits}")


@dataclass
class Chain:
    blocks: list[Block]
    difficulty_bits: int = DEFAULT_DIFFICULTY_BITS

    @property
    def height(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def copy(self) -> "Chain":
        return Chain(blocks=list(self.blocks), difficulty_bits=self.difficulty_bits)


def new_chain(difficulty_bits: int = DEFAULT_DIFFICULTY_BITS,
              genesis_time: datetime = DEFAULT_GENESIS_TIME) -> Chain:
    return Chain(blocks=[genesis(genesis_time)], difficulty_bits=difficulty_bits)


@dataclass(frozen=True)
class ChainFault:
    index: int
    reason: str  # BadGenesis | BrokenLink | HashMismatch | DifficultyUnmet | TimestampRegression

    def __str__(self) -> str:
        return f"{self.reason}({self.index})"


def validate_chain(chain: Chain,
                   genesis_time: datetime = DEFAULT_GENESIS_TIME) -> ChainFault | None:
    """Check the whole chain; returns the first fault, or None when valid."""
    if not chain.blocks or chain.blocks[0] != genesis(genesis_time):
        return ChainFault(0, "BadGenesis")
    prev = chain.blocks[0]
    for i, block in enumerate(chain.blocks[1:], start=1):
        if block.index != prev.index + 1 or block.prev_hash != prev.hash:
            return ChainFault(i, "BrokenLink")
        if hash_block(block) != block.hash:
            return ChainFault(i, "HashMismatch")
        if not meets_difficulty(block.hash, chain.difficulty_bits):
            return ChainFault(i, "DifficultyUnmet")
        if block.timestamp < prev.timestamp:
            return ChainFault(i, "TimestampRegression")
        prev = block
    return None


def choose_chain(local: Chain, remote: Chain,
                 genesis_time: datetime = DEFAULT_GENESIS_TIME) -> Chain:
    """Longest valid chain wins; ties keep the local chain."""
    fault = validate_chain(remote, genesis_time)
    if fault is not None:
        raise RemoteInvalid(fault)
    return remote if remote.height > local.height else local


def block_record(block: Block) -> str:
    """One-line persistence record: the canonical preimage plus the hash."""
    return preimage(block).decode("utf-8") + "|" + block.hash


def parse_record(line: str) -> Block:
    text = line.rstrip("\n")
    fields = text.split("|")
    if len(fields) == 9 and fields[7] == GENESIS_TAG:
        del fields[7]
    if len(fields) != 8:
        raise ChainError(f"malformed chain record: {line!r}")
    index_s, ts_s, sender, receiver, amount_s, prev_hash, nonce_s, hash_hex = fields
    try:
        block = Block(index=int(index_s), timestamp=parse_iso(ts_s), sender=sender,
                      receiver=receiver, amount=int(amount_s), nonce=int(nonce_s),
                      prev_hash=prev_hash, hash=hash_hex)
    except ValueError as exc:
        raise ChainError(f"malformed chain record: {line!r}") from exc
    # records are canonical: any alternative rendering of the same fields
    # (lenient timestamp separators, leading zeros) is treated as tampering
    if block_record(block) != text:
        raise ChainError(f"non-canonical chain record: {line!r}")
    return block


def save_chain(chain: Chain, path: str) -> None:
    text = "\n".join(block_record(b) for b in chain.blocks) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".chain-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_chain(path: str, difficulty_bits: int = DEFAULT_DIFFICULTY_BITS,
               genesis_time: datetime = DEFAULT_GENESIS_TIME) -> Chain:
    """Reload a persisted chain, re-validating every block."""
    with open(path, encoding="utf-8") as fh:
        blocks = [parse_record(line) for line in fh if line.strip()]
    chain = Chain(blocks=blocks, difficulty_bits=difficulty_bits)
    fault = validate_chain(chain, genesis_time)
    if fault is not None:
        raise ChainError(f"persisted chain failed validation: {fault}")
    return chain

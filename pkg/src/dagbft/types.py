"""Blocks, messages, canonical encoding, identities and signatures."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

PartyId = int
Round = int
BlockId = bytes

DIGEST_SIZE = 32
BLOCK_MAGIC = b"\xb1\x01"
MESSAGE_MAGIC = b"\xb2\x01"

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_MSG_HEADER = struct.Struct(">IQI")


def _canonical_refs(refs: Iterable[bytes]) -> tuple[bytes, ...]:
    return tuple(sorted(set(refs)))


@dataclass(frozen=True, eq=False)
class Block:
    """A DAG vertex. Identity is the hash of the canonical encoding, signature excluded."""

    round: Round
    creator: PartyId
    strong_refs: tuple[BlockId, ...] = ()
    weak_refs: tuple[BlockId, ...] = ()
    payload: bytes = b""
    signature: bytes = b""

    def __post_init__(self):
        if self.round < 1:
            raise ValueError(f"block round must be >= 1, got {self.round}")
        if self.creator < 0:
            raise ValueError(f"negative creator {self.creator}")
        object.__setattr__(self, "strong_refs", _canonical_refs(self.strong_refs))
        object.__setattr__(self, "weak_refs", _canonical_refs(self.weak_refs))

    @cached_property
    def id(self) -> BlockId:
        return hashlib.sha256(canonical_encode(self)).digest()

    @cached_property
    def wire_size(self) -> int:
        return len(encode_block(self))

    @property
    def slot(self) -> tuple[PartyId, Round]:
        return (self.creator, self.round)

    @property
    def refs(self) -> tuple[BlockId, ...]:
        return self.strong_refs + self.weak_refs

    def with_signature(self, signature: bytes) -> "Block":
        return replace(self, signature=signature)

    def __hash__(self):
        return hash(self.id)

    def __eq__(self, other):
        if not isinstance(other, Block):
            return NotImplemented
        return self.id == other.id and self.signature == other.signature

    def __repr__(self):
        return f"Block(r={self.round}, creator={self.creator}, id={self.id.hex()[:10]})"


def _encode_refs(refs: tuple[bytes, ...]) -> bytes:
    parts = [_U32.pack(len(refs))]
    for ref in refs:
        parts.append(_U16.pack(len(ref)))
        parts.append(ref)
    return b"".join(parts)


def canonical_encode(block: Block) -> bytes:
    """Deterministic, injective encoding of everything but the signature.

    Layout: magic, round (u64), creator (u32), strong refs, weak refs,
    payload. Reference lists are count-prefixed, each reference
    length-prefixed, sorted bytewise ascending. All integers big-endian.
    """
    return b"".join((
        BLOCK_MAGIC,
        _U64.pack(block.round),
        _U32.pack(block.creator),
        _encode_refs(block.strong_refs),
        _encode_refs(block.weak_refs),
        _U32.pack(len(block.payload)),
        block.payload,
    ))


def encode_block(block: Block) -> bytes:
    """Wire/persistence form: canonical encoding followed by the signature."""
    return canonical_encode(block) + _U16.pack(len(block.signature)) + block.signature


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, k: int) -> bytes:
        if self.pos + k > len(self.data):
            raise ValueError("truncated encoding")
        chunk = self.data[self.pos:self.pos + k]
        self.pos += k
        return chunk

    def unpack(self, st: struct.Struct) -> int:
        return st.unpack(self.take(st.size))[0]

    def refs(self) -> tuple[bytes, ...]:
        count = self.unpack(_U32)
        return tuple(self.take(self.unpack(_U16)) for _ in range(count))


def _decode_block_at(reader: _Reader) -> Block:
    if reader.take(len(BLOCK_MAGIC)) != BLOCK_MAGIC:
        raise ValueError("bad block magic/version")
    rnd = reader.unpack(_U64)
    creator = reader.unpack(_U32)
    strong = reader.refs()
    weak = reader.refs()
    payload = reader.take(reader.unpack(_U32))
    signature = reader.take(reader.unpack(_U16))
    if list(strong) != sorted(set(strong)) or list(weak) != sorted(set(weak)):
        raise ValueError("reference lists are not canonical")
    return Block(rnd, creator, strong, weak, payload, signature)


def decode_block(data: bytes) -> Block:
    reader = _Reader(data)
    block = _decode_block_at(reader)
    if reader.pos != len(data):
        raise ValueError("trailing bytes after block")
    return block


def block_id(block: Block) -> BlockId:
    return block.id


@dataclass(frozen=True)
class BlockMessage:
    block: Block
    history: tuple[Block, ...]
    sender: PartyId
    round: Round

    @property
    def size(self) -> int:
        return _MSG_HEADER.size + len(MESSAGE_MAGIC) + self.block.wire_size + sum(
            4 + h.wire_size for h in self.history)

    @property
    def payload_size(self) -> int:
        return len(self.block.payload) + sum(len(h.payload) for h in self.history)


def encode_message(msg: BlockMessage) -> bytes:
    parts = [MESSAGE_MAGIC, _MSG_HEADER.pack(msg.sender, msg.round, len(msg.history)),
             encode_block(msg.block)]
    for h in msg.history:
        raw = encode_block(h)
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_message(data: bytes) -> BlockMessage:
    reader = _Reader(data)
    if reader.take(len(MESSAGE_MAGIC)) != MESSAGE_MAGIC:
        raise ValueError("bad message magic/version")
    sender, rnd, count = _MSG_HEADER.unpack(reader.take(_MSG_HEADER.size))
    block = _decode_block_at(reader)
    history = []
    for _ in range(count):
        size = reader.unpack(_U32)
        history.append(decode_block(reader.take(size)))
    if reader.pos != len(data):
        raise ValueError("trailing bytes after message")
    return BlockMessage(block, tuple(history), sender, rnd)


@dataclass(frozen=True)
class Config:
    n: int
    f: int
    delta: float
    gc_multiplier: float = 3.0
    timeout_multiplier: float = 2.0
    max_history: int | None = None
    orphan_limit: int | None = None

    def __post_init__(self):
        if self.n < 4:
            raise ValueError(f"n must be >= 4, got {self.n}")
        if self.f < 0 or 3 * self.f + 1 > self.n:
            raise ValueError(f"need 3f+1 <= n, got n={self.n}, f={self.f}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.gc_multiplier <= 0 or self.timeout_multiplier <= 0:
            raise ValueError("multipliers must be positive")

    @property
    def quorum_size(self) -> int:
        return self.n - self.f

    @property
    def history_cap(self) -> int:
        return self.max_history if self.max_history is not None else 10 * self.n

    @property
    def orphan_cap(self) -> int:
        return self.orphan_limit if self.orphan_limit is not None else 4 * self.n

    @property
    def timeout(self) -> float:
        return self.timeout_multiplier * self.delta

    @property
    def gc_window(self) -> float:
        return self.gc_multiplier * self.delta


class Signer(Protocol):
    def sign(self, block: Block, signer: PartyId) -> bytes: ...

    def verify(self, block: Block) -> bool: ...


@dataclass
class SimulatedSigner:
    """Authenticated-channel stub: remembers who actually signed each block id."""

    registry: dict[BlockId, PartyId] = field(default_factory=dict)

    def sign(self, block: Block, signer: PartyId) -> bytes:
        self.registry.setdefault(block.id, signer)
        return _U16.pack(signer)

    def verify(self, block: Block) -> bool:
        return (self.registry.get(block.id) == block.creator
                and block.signature == _U16.pack(block.creator))


class Ed25519Signer:
    """Real signatures over the block id; keys derived from a seed for reproducibility."""

    def __init__(self, n: int, seed: bytes | int = 0):
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "big")
        self._keys = [
            Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed + i.to_bytes(4, "big")).digest())
            for i in range(n)
        ]
        self._public = [k.public_key() for k in self._keys]

    def sign(self, block: Block, signer: PartyId) -> bytes:
        return self._keys[signer].sign(block.id)

    def verify(self, block: Block) -> bool:
        if not 0 <= block.creator < len(self._public):
            return False
        try:
            self._public[block.creator].verify(block.signature, block.id)
        except InvalidSignature:
            return False
        return True


def make_block(round: Round, creator: PartyId, strong=(), weak=(), payload: bytes = b"",
               signer: Signer | None = None, sign_as: PartyId | None = None) -> Block:
    """Build a block and, if a signer is given, sign it (as `sign_as`, default the creator)."""
    block = Block(round, creator, tuple(strong), tuple(weak), payload)
    if signer is None:
        return block
    who = creator if sign_as is None else sign_as
    return block.with_signature(signer.sign(block, who))

"""Hash-chained, pruned ledger of state estimates with signed packages and proof of work.

Byte layouts are little-endian throughout:

* vector: u64 count, then count binary64 values
* payload digest input: u64 sender, u64 timestep, vector
* block: u64 timestep, 32-byte prev_hash, u64 nonce, u64 node count,
  then per node (ascending id) u64 node id followed by its vector
* ledger file: header ``b"GSLD"``, u16 version, u64 capacity, u64
  difficulty, u64 block count, u64 total file length, first 8 bytes of
  SHA-256 of the preceding header fields; then the blocks, then a 32-byte
  seal ``SHA-256(header || hash(last block))``
"""
from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import (
    LedgerFormatError,
    LedgerTampered,
    MissingBlock,
    PackageRejected,
    PuzzleRejected,
    SealMismatch,
    UnknownSender,
)

DIGEST_SIZE = 32
GENESIS_HASH = bytes(DIGEST_SIZE)
MAGIC = b"GSLD"
FORMAT_VERSION = 1
DEFAULT_DIFFICULTY = 8
NONCE_SPACE = 1 << 64
_MINER_STRIDE = 1 << 56

_U64 = struct.Struct("<Q")
_U16 = struct.Struct("<H")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def serialize_vector(values) -> bytes:
    arr = np.ascontiguousarray(values, dtype="<f8").ravel()
    return _U64.pack(arr.size) + arr.tobytes()


def _read_u64(buf, pos):
    if pos + 8 > len(buf):
        raise LedgerFormatError("truncated integer field")
    return _U64.unpack_from(buf, pos)[0], pos + 8


def _read_vector(buf, pos):
    n, pos = _read_u64(buf, pos)
    end = pos + 8 * n
    if end > len(buf):
        raise LedgerFormatError("truncated vector")
    arr = np.frombuffer(buf[pos:end], dtype="<f8").astype(np.float64)
    arr.setflags(write=False)
    return arr, end


# -- signed packages ---------------------------------------------------------


@dataclass(frozen=True)
class DataPackage:
    sender_id: int
    timestep: int
    payload: bytes
    signature: bytes

    def estimate(self) -> np.ndarray:
        arr, end = _read_vector(self.payload, 0)
        if end != len(self.payload):
            raise LedgerFormatError("trailing bytes in payload")
        return arr


def package_digest(sender_id: int, timestep: int, payload: bytes) -> bytes:
    return sha256(_U64.pack(sender_id) + _U64.pack(timestep) + payload)


@dataclass(frozen=True)
class KeyRegistry:
    """Public keys of every node, fixed at network setup."""

    public_keys: dict

    def key(self, node_id: int) -> Ed25519PublicKey:
        try:
            return self.public_keys[node_id]
        except KeyError:
            raise UnknownSender(f"node {node_id} is not registered") from None

    @property
    def node_ids(self):
        return tuple(sorted(self.public_keys))


def generate_keys(node_ids, seed: int):
    """Deterministic Ed25519 key pairs; returns (private keys by id, registry)."""
    ss = np.random.SeedSequence([int(seed) & (NONCE_SPACE - 1), 0x6B657973])
    private = {}
    for nid in sorted(node_ids):
        raw = ss.spawn(1)[0].generate_state(8, dtype=np.uint32).tobytes()
        private[nid] = Ed25519PrivateKey.from_private_bytes(raw)
    registry = KeyRegistry({nid: k.public_key() for nid, k in private.items()})
    return private, registry


def sign_package(private_key: Ed25519PrivateKey, sender_id: int, timestep: int, estimate) -> DataPackage:
    payload = serialize_vector(estimate)
    sig = private_key.sign(package_digest(sender_id, timestep, payload))
    return DataPackage(int(sender_id), int(timestep), payload, sig)


def verify_package(registry: KeyRegistry, pkg: DataPackage) -> bool:
    key = registry.key(pkg.sender_id)
    try:
        key.verify(pkg.signature, package_digest(pkg.sender_id, pkg.timestep, pkg.payload))
    except InvalidSignature:
        return False
    return True


# -- blocks -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Block:
    timestep: int
    prev_hash: bytes
    nonce: int
    estimates: tuple  # ((node_id, vector), ...) ascending node id

    @classmethod
    def build(cls, timestep, prev_hash, estimates: dict, nonce=0) -> "Block":
        items = []
        for nid in sorted(estimates):
            arr = np.array(estimates[nid], dtype=np.float64).ravel()
            arr.setflags(write=False)
            items.append((int(nid), arr))
        return cls(int(timestep), bytes(prev_hash), int(nonce), tuple(items))

    def with_nonce(self, nonce: int) -> "Block":
        return Block(self.timestep, self.prev_hash, int(nonce), self.estimates)

    def estimate(self, node_id: int) -> np.ndarray:
        for nid, vec in self.estimates:
            if nid == node_id:
                return vec
        raise KeyError(f"block {self.timestep} has no estimate for node {node_id}")

    def _head(self) -> bytes:
        return _U64.pack(self.timestep) + self.prev_hash

    def _body(self) -> bytes:
        parts = [_U64.pack(len(self.estimates))]
        for nid, vec in self.estimates:
            parts.append(_U64.pack(nid))
            parts.append(serialize_vector(vec))
        return b"".join(parts)

    def serialize(self) -> bytes:
        return self._head() + _U64.pack(self.nonce) + self._body()

    def hash(self) -> bytes:
        return sha256(self.serialize())

    def __eq__(self, other):
        return isinstance(other, Block) and self.serialize() == other.serialize()

    __hash__ = None


def parse_block(buf, pos=0):
    t, pos = _read_u64(buf, pos)
    if pos + DIGEST_SIZE > len(buf):
        raise LedgerFormatError("truncated prev_hash")
    prev = bytes(buf[pos:pos + DIGEST_SIZE])
    pos += DIGEST_SIZE
    nonce, pos = _read_u64(buf, pos)
    count, pos = _read_u64(buf, pos)
    if count > (len(buf) - pos) // 16:
        raise LedgerFormatError("implausible estimate count")
    items = []
    for _ in range(count):
        nid, pos = _read_u64(buf, pos)
        vec, pos = _read_vector(buf, pos)
        items.append((nid, vec))
    return Block(t, prev, nonce, tuple(items)), pos


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, "big")
    return 8 * len(digest) - value.bit_length()


def meets_difficulty(digest: bytes, d: int) -> bool:
    return leading_zero_bits(digest) >= d


def mine(block: Block, d: int, start: int = 0, max_iter: int | None = None):
    """Search nonces ``start, start+1, ...``; returns (nonce, hash evaluations)."""
    if d < 0:
        raise ValueError("difficulty must be nonnegative")
    if d == 0:
        return start % NONCE_SPACE, 0
    head, body = block._head(), block._body()
    i = 0
    while max_iter is None or i < max_iter:
        nonce = (start + i) % NONCE_SPACE
        i += 1
        if meets_difficulty(sha256(head + _U64.pack(nonce) + body), d):
            return nonce, i
    raise PuzzleRejected("nonce search exhausted")


def miner_offset(miner_id: int) -> int:
    return (int(miner_id) * _MINER_STRIDE) % NONCE_SPACE


def race(block: Block, d: int, miner_ids):
    """Simulated mining race: every miner searches from its own offset in lockstep.

    The winner needs the fewest iterations; ties go to the lowest miner id.
    Returns (nonce, winner id, iterations).
    """
    miners = sorted(int(m) for m in miner_ids)
    if not miners:
        raise ValueError("at least one miner is required")
    if d == 0:
        return miner_offset(miners[0]), miners[0], 0
    head, body = block._head(), block._body()
    starts = [miner_offset(m) for m in miners]
    i = 0
    while True:
        for m, s in zip(miners, starts):
            nonce = (s + i) % NONCE_SPACE
            if meets_difficulty(sha256(head + _U64.pack(nonce) + body), d):
                return nonce, m, i + 1
        i += 1


# -- the ledger ---------------------------------------------------------------


@dataclass
class Ledger:
    """The ``capacity`` most recent blocks; appending at capacity prunes the oldest."""

    capacity: int
    difficulty: int = DEFAULT_DIFFICULTY
    blocks: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("ledger capacity must be >= 1")
        if self.difficulty < 0:
            raise ValueError("difficulty must be nonnegative")
        self.blocks = deque(self.blocks)

    def __len__(self):
        return len(self.blocks)

    @property
    def tip(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].hash() if self.blocks else GENESIS_HASH

    @property
    def oldest_timestep(self) -> int:
        if not self.blocks:
            raise MissingBlock(0)
        return self.blocks[0].timestep

    @property
    def latest_timestep(self) -> int:
        if not self.blocks:
            raise MissingBlock(0)
        return self.blocks[-1].timestep

    def append(self, block: Block) -> None:
        if self.blocks:
            if block.timestep != self.latest_timestep + 1:
                raise ValueError("timesteps must be consecutive")
            if block.prev_hash != self.tip_hash:
                raise ValueError("prev_hash does not link to the tip")
        self.blocks.append(block)
        while len(self.blocks) > self.capacity:
            self.blocks.popleft()

    def block_at(self, timestep: int) -> Block:
        if not self.blocks:
            raise MissingBlock(timestep)
        i = timestep - self.blocks[0].timestep
        if i < 0 or i >= len(self.blocks):
            raise MissingBlock(timestep, self.blocks[0].timestep)
        return self.blocks[i]

    def get_estimate(self, timestep: int, node_id: int) -> np.ndarray:
        return self.block_at(timestep).estimate(node_id)

    def copy(self) -> "Ledger":
        # blocks are immutable, so replicas can share them
        return Ledger(self.capacity, self.difficulty, deque(self.blocks))


def genesis(estimates: dict, difficulty: int = DEFAULT_DIFFICULTY, miner_ids=(1,)) -> Block:
    block = Block.build(0, GENESIS_HASH, estimates)
    nonce, _, _ = race(block, difficulty, miner_ids)
    return block.with_nonce(nonce)


@dataclass(frozen=True)
class CommitResult:
    block: Block
    winner: int
    iterations: int


def propose_and_commit(
    ledgers,
    packages,
    registry: KeyRegistry,
    miner_ids,
    validators=None,
    faulty_validators=(),
) -> CommitResult:
    """Validate one package per node, mine the block and append it to every replica.

    ``ledgers`` is one replica or a mapping node id -> replica (all in sync).
    A package is accepted iff a strict majority of the validators other than
    its sender verify it. Validators in ``faulty_validators`` report the
    opposite of the truth, to exercise the majority rule.
    """
    replicas = list(ledgers.values()) if isinstance(ledgers, dict) else [ledgers]
    ref = replicas[0]
    validators = tuple(registry.node_ids if validators is None else validators)
    faulty = set(faulty_validators)
    t = ref.latest_timestep + 1
    pkgs = sorted(packages, key=lambda p: p.sender_id)
    if len({p.sender_id for p in pkgs}) != len(pkgs):
        raise ValueError("more than one package per sender")

    rejected = []
    estimates = {}
    for pkg in pkgs:
        honest = verify_package(registry, pkg) and pkg.timestep == t
        others = [v for v in validators if v != pkg.sender_id]
        yes = sum(honest != (v in faulty) for v in others)
        if yes > len(others) / 2:
            estimates[pkg.sender_id] = pkg.estimate()
        else:
            rejected.append(pkg.sender_id)
    if rejected:
        raise PackageRejected(rejected)

    draft = Block.build(t, ref.tip_hash, estimates)
    nonce, winner, iters = race(draft, ref.difficulty, miner_ids)
    block = draft.with_nonce(nonce)
    digest = block.hash()
    yes = sum(meets_difficulty(digest, ref.difficulty) != (v in faulty) for v in validators)
    if not yes > len(validators) / 2:
        raise PuzzleRejected(f"block {t} failed majority validation")
    for replica in replicas:
        replica.append(block)
    return CommitResult(block, winner, iters)


# -- integrity checks ---------------------------------------------------------


@dataclass(frozen=True)
class ChainReport:
    clean: bool
    index: int | None = None
    timestep: int | None = None
    reason: str = ""

    def __str__(self):
        if self.clean:
            return "clean"
        where = f"block index {self.index}" if self.index is not None else "file"
        return f"violation at {where}: {self.reason}"


def verify_chain(ledger: Ledger, registry: KeyRegistry | None = None) -> ChainReport:
    """Check linkage, proof of work, timestep continuity and node ids block by block."""
    blocks = list(ledger.blocks)
    if len(blocks) > ledger.capacity:
        return ChainReport(False, ledger.capacity, None, "more blocks than capacity")
    known = set(registry.node_ids) if registry is not None else None
    prev = None
    for i, b in enumerate(blocks):
        digest = b.hash()
        if prev is not None:
            if b.timestep != prev.timestep + 1:
                return ChainReport(False, i, b.timestep, "timestep discontinuity")
            if b.prev_hash != prev.hash():
                return ChainReport(False, i, b.timestep, "prev_hash linkage broken")
        elif b.timestep == 0 and b.prev_hash != GENESIS_HASH:
            return ChainReport(False, i, b.timestep, "genesis prev_hash is not the zero digest")
        if not meets_difficulty(digest, ledger.difficulty):
            return ChainReport(False, i, b.timestep, "proof of work not satisfied")
        ids = [nid for nid, _ in b.estimates]
        if ids != sorted(set(ids)):
            return ChainReport(False, i, b.timestep, "node estimates not in ascending id order")
        if known is not None and not set(ids) <= known:
            return ChainReport(False, i, b.timestep, "estimate from an unregistered node")
        prev = b
    return ChainReport(True)


_HEADER_SIZE = 4 + 2 + 4 * 8 + 8


def _header(capacity, difficulty, count, total) -> bytes:
    head = MAGIC + _U16.pack(FORMAT_VERSION) + _U64.pack(capacity) + _U64.pack(difficulty)
    head += _U64.pack(count) + _U64.pack(total)
    return head + sha256(head)[:8]


def export_ledger(ledger: Ledger) -> bytes:
    body = b"".join(b.serialize() for b in ledger.blocks)
    total = _HEADER_SIZE + len(body) + DIGEST_SIZE
    head = _header(ledger.capacity, ledger.difficulty, len(ledger.blocks), total)
    return head + body + sha256(head + ledger.tip_hash)


def _header_intact(head: bytes) -> bool:
    return sha256(head[:-8])[:8] == head[-8:]


def import_ledger(data: bytes) -> Ledger:
    """Parse a ledger file.

    The header carries the total file length and a checksum, which separates
    a short file (LedgerFormatError) from altered contents (LedgerTampered).
    """
    buf = memoryview(bytes(data))
    head = bytes(buf[:_HEADER_SIZE])
    if head[:4] != MAGIC:
        # a ledger whose magic bytes were altered still has a consistent checksum
        if len(head) == _HEADER_SIZE and _header_intact(MAGIC + head[4:]):
            raise LedgerTampered("magic bytes altered")
        raise LedgerFormatError("not a ledger file (bad magic bytes)")
    if len(head) < _HEADER_SIZE:
        raise LedgerFormatError("truncated header")
    if not _header_intact(head):
        raise LedgerTampered("header checksum mismatch")
    (version,) = _U16.unpack_from(buf, 4)
    if version != FORMAT_VERSION:
        raise LedgerFormatError(f"unsupported format version {version}")
    capacity, difficulty, count, total = struct.unpack_from("<4Q", buf, 6)
    if len(buf) < total:
        raise LedgerFormatError(f"truncated file: {len(buf)} of {total} bytes")
    if len(buf) > total:
        raise LedgerTampered(f"{len(buf) - total} unexpected trailing bytes")
    try:
        if capacity < 1 or difficulty > 8 * DIGEST_SIZE or count > capacity:
            raise LedgerFormatError("invalid capacity, difficulty or block count")
        body = buf[:total - DIGEST_SIZE]
        pos = _HEADER_SIZE
        blocks = []
        for _ in range(count):
            b, pos = parse_block(body, pos)
            blocks.append(b)
        if pos != len(body):
            raise LedgerFormatError("block data does not fill the declared length")
    except LedgerTampered:
        raise
    except LedgerFormatError as exc:
        raise LedgerTampered(f"corrupted contents: {exc}") from exc
    tip = blocks[-1].hash() if blocks else GENESIS_HASH
    if bytes(buf[total - DIGEST_SIZE:]) != sha256(head + tip):
        raise SealMismatch("seal does not match header and tip block")
    return Ledger(int(capacity), int(difficulty), deque(blocks))


def verify_file(data: bytes, registry: KeyRegistry | None = None) -> ChainReport:
    try:
        ledger = import_ledger(data)
    except LedgerTampered as exc:
        return ChainReport(False, None, None, f"tampered: {exc}")
    except LedgerFormatError as exc:
        return ChainReport(False, None, None, f"format error: {exc}")
    return verify_chain(ledger, registry)

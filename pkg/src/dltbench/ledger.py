"""Hash-linked ledger structures: transactions, blocks, a tangle-style DAG,
per-platform wire sizing, and a local content-addressed blob store.

All digests are SHA-256. Signatures are simulated as deterministic 64-byte
MACs derived from the sender id; they carry no cryptographic weight beyond
making tampering detectable inside a simulation run.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

HASH_LEN = 32
SIG_LEN = 64
ZERO_HASH = b"\x00" * HASH_LEN

NodeId = str
Hash = bytes  # always HASH_LEN bytes


class LedgerError(Exception):
    pass


class UnknownParent(LedgerError):
    pass


class InsufficientPow(LedgerError):
    pass


class EmptyBlob(LedgerError):
    pass


class UnknownBlob(LedgerError):
    pass


class TxKind(Enum):
    MACHINE_PUBLISH = 0
    RENTAL_REQUEST = 1
    CHANNEL_OPEN = 2
    CHANNEL_CLOSE = 3
    DATA_ANCHOR = 4
    TRANSFER = 5


def sha256(data: bytes) -> Hash:
    return hashlib.sha256(data).digest()


def node_secret(node_id: NodeId) -> bytes:
    """Deterministic per-node signing secret (simulated key material)."""
    return sha256(b"key:" + node_id.encode())


def sign(node_id: NodeId, message: bytes) -> bytes:
    """64-byte simulated signature: HMAC-SHA512 over the message."""
    return hmac.new(node_secret(node_id), message, hashlib.sha512).digest()


def _enc_str(s: str) -> bytes:
    raw = s.encode()
    return len(raw).to_bytes(2, "big") + raw


def _enc_bytes(b: bytes) -> bytes:
    return len(b).to_bytes(4, "big") + b


@dataclass(frozen=True)
class Transaction:
    """A typed, signed ledger entry.

    tx_id commits to (sender, kind, payload, created_at); the signature is
    a MAC over tx_id under the sender's derived secret.
    """

    tx_id: Hash
    sender: NodeId
    kind: TxKind
    payload: bytes
    signature: bytes
    created_at: int  # simulated time, ms

    def preimage(self) -> bytes:
        return tx_preimage(self.sender, self.kind, self.payload, self.created_at)


def tx_preimage(sender: NodeId, kind: TxKind, payload: bytes, created_at: int) -> bytes:
    return (
        b"tx"
        + _enc_str(sender)
        + bytes([kind.value])
        + created_at.to_bytes(8, "big")
        + _enc_bytes(payload)
    )


def make_transaction(sender: NodeId, kind: TxKind, payload: bytes, created_at: int) -> Transaction:
    tx_id = sha256(tx_preimage(sender, kind, payload, created_at))
    return Transaction(
        tx_id=tx_id,
        sender=sender,
        kind=kind,
        payload=payload,
        signature=sign(sender, tx_id),
        created_at=created_at,
    )


def verify_transaction(tx: Transaction) -> bool:
    if sha256(tx.preimage()) != tx.tx_id:
        return False
    return hmac.compare_digest(tx.signature, sign(tx.sender, tx.tx_id))


def _enc_tx(tx: Transaction) -> bytes:
    return tx.tx_id + tx.signature + tx.preimage()


@dataclass(frozen=True)
class Block:
    """Chain element; block_hash covers every other field (nonce last)."""

    height: int
    parent: Hash
    txs: Tuple[Transaction, ...]
    proposer: NodeId
    timestamp: int  # simulated time, ms
    nonce: int
    block_hash: Hash


def block_header_bytes(
    height: int,
    parent: Hash,
    txs: Tuple[Transaction, ...],
    proposer: NodeId,
    timestamp: int,
) -> bytes:
    parts = [
        b"blk",
        height.to_bytes(8, "big"),
        parent,
        _enc_str(proposer),
        timestamp.to_bytes(8, "big"),
        len(txs).to_bytes(4, "big"),
    ]
    parts.extend(_enc_tx(tx) for tx in txs)
    return b"".join(parts)


def hash_block_fields(
    height: int,
    parent: Hash,
    txs: Tuple[Transaction, ...],
    proposer: NodeId,
    timestamp: int,
    nonce: int,
) -> Hash:
    header = block_header_bytes(height, parent, txs, proposer, timestamp)
    return sha256(header + nonce.to_bytes(8, "big"))


def hash_block(block: Block) -> Hash:
    """Digest over all block fields except block_hash itself."""
    return hash_block_fields(
        block.height, block.parent, block.txs, block.proposer, block.timestamp, block.nonce
    )


def make_block(
    height: int,
    parent: Hash,
    txs: Iterable[Transaction],
    proposer: NodeId,
    timestamp: int,
    nonce: int = 0,
) -> Block:
    txs = tuple(txs)
    h = hash_block_fields(height, parent, txs, proposer, timestamp, nonce)
    return Block(height, parent, txs, proposer, timestamp, nonce, h)


def genesis_block(proposer: NodeId = "genesis") -> Block:
    return make_block(0, ZERO_HASH, (), proposer, 0)


def verify_chain(chain: List[Block]) -> bool:
    """True iff hashes recompute and parent/height linkage is consistent.

    Never raises; any structural defect simply yields False.
    """
    return find_first_invalid(chain) is None


def find_first_invalid(chain: List[Block]) -> Optional[int]:
    """Height of the first block failing recomputation or linkage, else None."""
    if not chain:
        return 0
    g = chain[0]
    if g.height != 0 or g.parent != ZERO_HASH or hash_block(g) != g.block_hash:
        return 0
    for i in range(1, len(chain)):
        b, prev = chain[i], chain[i - 1]
        if b.height != prev.height + 1:
            return i
        if b.parent != prev.block_hash or b.parent != hash_block(prev):
            return i
        if hash_block(b) != b.block_hash:
            return i
    return None


def chained_hashes(chain: List[Block]) -> List[Hash]:
    """Recompute every block hash with parents substituted transitively.

    Any mutation at height k changes the chained hash of k and of every
    descendant, which is the tamper-evidence argument in digest form.
    """
    out: List[Hash] = []
    parent = ZERO_HASH
    for b in chain:
        h = hash_block_fields(b.height, parent, b.txs, b.proposer, b.timestamp, b.nonce)
        out.append(h)
        parent = h
    return out


def longest_chain(candidates: List[List[Block]]) -> List[Block]:
    """Fork choice: longest chain, ties broken by smaller tip hash."""
    if not candidates:
        raise ValueError("no candidate chains")
    return max(candidates, key=lambda c: (len(c), [0x100 - x for x in c[-1].block_hash]))


# --- Tangle-style DAG --------------------------------------------------------

GENESIS_VERTEX_HASH = sha256(b"dag-genesis")


@dataclass(frozen=True)
class DagVertex:
    """Tangle vertex: one transaction approving exactly two prior vertices."""

    vertex_hash: Hash
    approves: Tuple[Hash, Hash]
    tx: Transaction
    pow_nonce: int


def vertex_preimage(approves: Tuple[Hash, Hash], tx: Transaction) -> bytes:
    # tx_id already commits to the full transaction contents
    return b"vtx" + approves[0] + approves[1] + tx.tx_id


def hash_vertex(approves: Tuple[Hash, Hash], tx: Transaction, pow_nonce: int) -> Hash:
    return sha256(vertex_preimage(approves, tx) + pow_nonce.to_bytes(8, "big"))


def make_vertex(approves: Tuple[Hash, Hash], tx: Transaction, pow_nonce: int) -> DagVertex:
    return DagVertex(hash_vertex(approves, tx, pow_nonce), approves, tx, pow_nonce)


def meets_difficulty(digest: Hash, difficulty_bits: int) -> bool:
    """Check for difficulty_bits leading zero bits."""
    if difficulty_bits <= 0:
        return True
    full, rem = divmod(difficulty_bits, 8)
    if digest[:full] != b"\x00" * full:
        return False
    if rem and digest[full] >= (1 << (8 - rem)):
        return False
    return True


class Dag:
    """Append-only DAG with tip tracking and cumulative descendant weights."""

    def __init__(self) -> None:
        self.vertices: Dict[Hash, DagVertex] = {}
        self.tips: Set[Hash] = {GENESIS_VERTEX_HASH}
        self.weight: Dict[Hash, int] = {GENESIS_VERTEX_HASH: 0}
        self._parents: Dict[Hash, Tuple[Hash, ...]] = {GENESIS_VERTEX_HASH: ()}

    def __contains__(self, h: Hash) -> bool:
        return h in self._parents

    def __len__(self) -> int:
        return len(self.vertices)

    def attach(self, vertex: DagVertex, difficulty_bits: int = 0) -> None:
        """Insert a vertex whose parents exist and whose hash clears the
        little-PoW difficulty; tips and ancestor weights are updated."""
        for parent in vertex.approves:
            if parent not in self._parents:
                raise UnknownParent(parent.hex())
        if hash_vertex(vertex.approves, vertex.tx, vertex.pow_nonce) != vertex.vertex_hash:
            raise InsufficientPow("vertex hash does not match contents")
        if not meets_difficulty(vertex.vertex_hash, difficulty_bits):
            raise InsufficientPow(
                f"vertex hash fails {difficulty_bits}-bit difficulty"
            )
        self.vertices[vertex.vertex_hash] = vertex
        self._parents[vertex.vertex_hash] = vertex.approves
        self.weight[vertex.vertex_hash] = 0
        self.tips.difference_update(vertex.approves)
        self.tips.add(vertex.vertex_hash)
        self._bump_ancestors(vertex)

    def _bump_ancestors(self, vertex: DagVertex) -> None:
        seen: Set[Hash] = set()
        stack = list(vertex.approves)
        while stack:
            h = stack.pop()
            if h in seen:
                continue
            seen.add(h)
            self.weight[h] += 1
            stack.extend(self._parents[h])

    def sorted_tips(self) -> List[Hash]:
        return sorted(self.tips)


def attach_vertex(dag: Dag, vertex: DagVertex, difficulty_bits: int = 0) -> Dag:
    """Attach `vertex` to `dag` in place and return the dag."""
    dag.attach(vertex, difficulty_bits)
    return dag


# --- Wire sizes --------------------------------------------------------------


@dataclass(frozen=True)
class WireSizeModel:
    """Per-platform transaction wire size: base + kind extra + clamped payload."""

    platform: str
    base_bytes: int
    per_kind_bytes: Dict[TxKind, int] = field(default_factory=dict)
    metadata_cap_bytes: Optional[int] = None

    def __post_init__(self) -> None:
        if self.base_bytes <= 0:
            raise ValueError("base_bytes must be positive")
        for kind, extra in self.per_kind_bytes.items():
            if extra <= 0:
                raise ValueError(f"per-kind extra for {kind} must be positive")
        if self.metadata_cap_bytes is not None and self.metadata_cap_bytes <= 0:
            raise ValueError("metadata_cap_bytes must be positive when set")


def wire_size(model: WireSizeModel, tx: Transaction) -> int:
    payload = len(tx.payload)
    if model.metadata_cap_bytes is not None:
        payload = min(payload, model.metadata_cap_bytes)
    return model.base_bytes + model.per_kind_bytes.get(tx.kind, 0) + payload


# --- Content-addressed blob store (local IPFS stand-in) ----------------------


class ContentStore:
    """Maps sha256(blob) -> blob; storing is idempotent."""

    def __init__(self) -> None:
        self.entries: Dict[Hash, bytes] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def put(self, blob: bytes) -> Hash:
        if not blob:
            raise EmptyBlob("refusing to store empty blob")
        key = sha256(blob)
        self.entries[key] = blob
        return key

    def get(self, key: Hash) -> bytes:
        try:
            return self.entries[key]
        except KeyError:
            raise UnknownBlob(key.hex()) from None

    def total_bytes(self) -> int:
        return sum(len(b) for b in self.entries.values())


def store_blob(store: ContentStore, blob: bytes) -> Hash:
    return store.put(blob)

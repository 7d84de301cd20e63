"""Five pluggable consensus engines behind one small contract.

Each engine exposes the primitive the platform is built on (nonce search,
quorum voting, endorse/order/validate, tip selection, sequential hashing)
and charges its computational effort to a shared WorkLedger so the metrics
layer can turn effort into CPU fractions and energy.
"""

from __future__ import annotations

import random
from abc import ABC
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .ledger import (
    Block,
    Dag,
    DagVertex,
    Hash,
    NodeId,
    Transaction,
    block_header_bytes,
    hash_block,
    make_vertex,
    meets_difficulty,
    sha256,
)

import hashlib


class ConsensusError(Exception):
    pass


class PolicyUnsatisfied(ConsensusError):
    pass


class EmptyDag(ConsensusError):
    pass


class UnknownValidator(ConsensusError):
    pass


class FinalityViolation(ConsensusError):
    """Raised on any attempt to un-finalize; finalization is irreversible."""


class WorkLedger:
    """Per-node monotone effort counters plus accumulated work units.

    Counters track raw primitive invocations; work units weight them with
    per-profile costs so heterogeneous effort is comparable.
    """

    COUNTERS = (
        "hash_attempts",
        "signature_verifications",
        "messages_sent",
        "endorsements_performed",
    )

    def __init__(self) -> None:
        self.counters: Dict[str, Dict[str, int]] = {c: {} for c in self.COUNTERS}
        self.work_units: Dict[str, float] = {}

    def add(self, node: NodeId, counter: str, count: int, unit_cost: float = 0.0) -> None:
        if count < 0:
            raise ValueError("counters are monotone; negative increments forbidden")
        bucket = self.counters[counter]
        bucket[node] = bucket.get(node, 0) + count
        if unit_cost:
            self.charge(node, count * unit_cost)

    def charge(self, node: NodeId, units: float) -> None:
        if units < 0:
            raise ValueError("work units are monotone; negative charges forbidden")
        self.work_units[node] = self.work_units.get(node, 0.0) + units

    def get(self, node: NodeId, counter: str) -> int:
        return self.counters[counter].get(node, 0)

    def units(self, node: NodeId) -> float:
        return self.work_units.get(node, 0.0)


@dataclass(frozen=True)
class QuorumConfig:
    """n validators tolerating f faults; quorum is 2f+1 with n >= 3f+1."""

    n: int
    f: int
    quorum: int

    def __post_init__(self) -> None:
        if self.n < 3 * self.f + 1:
            raise ValueError(f"n={self.n} violates n >= 3f+1 for f={self.f}")
        if self.quorum != 2 * self.f + 1:
            raise ValueError("quorum must equal 2f+1")

    @classmethod
    def for_validators(cls, n: int) -> "QuorumConfig":
        f = max((n - 1) // 3, 0)
        return cls(n=n, f=f, quorum=2 * f + 1)


class VoteOutcome(Enum):
    FINALIZED = "finalized"
    PENDING = "pending"


class TxLabel(Enum):
    VALID = "valid"
    INVALID = "invalid"


class ConsensusEngine(ABC):
    """Shared contract: validation is deterministic, finalization only grows."""

    name: str = "abstract"

    def __init__(self, work: Optional[WorkLedger] = None) -> None:
        self.work = work if work is not None else WorkLedger()
        self._finalized: Set[Hash] = set()

    @property
    def finalized(self) -> FrozenSet[Hash]:
        return frozenset(self._finalized)

    def mark_final(self, item_hash: Hash) -> None:
        self._finalized.add(item_hash)

    def assert_final(self, item_hash: Hash) -> None:
        if item_hash not in self._finalized:
            raise FinalityViolation(item_hash.hex())


# --- Proof of Work -----------------------------------------------------------


def pow_seal(
    block: Block,
    difficulty_bits: int,
    rng: Union[int, random.Random],
    work: Optional[WorkLedger] = None,
    worker: NodeId = "",
) -> Tuple[Block, int]:
    """Search nonces until the block hash clears difficulty_bits leading zeros.

    Returns the sealed block and the attempt count. The starting nonce comes
    from the supplied rng so repeated seals sample independent searches.
    """
    if not 0 <= difficulty_bits <= 64:
        raise ValueError("difficulty_bits must lie in [0, 64]")
    if isinstance(rng, int):
        rng = random.Random(rng)
    header = block_header_bytes(
        block.height, block.parent, block.txs, block.proposer, block.timestamp
    )
    midstate = hashlib.sha256(header)
    nonce = rng.getrandbits(64)
    attempts = 0
    full, rem = divmod(difficulty_bits, 8)
    zero_prefix = b"\x00" * full
    limit = (1 << (8 - rem)) if rem else 0x100
    while True:
        attempts += 1
        h = midstate.copy()
        h.update(nonce.to_bytes(8, "big"))
        digest = h.digest()
        if digest[:full] == zero_prefix and digest[full] < limit:
            break
        nonce = (nonce + 1) & 0xFFFFFFFFFFFFFFFF
    if work is not None:
        work.add(worker or block.proposer, "hash_attempts", attempts)
    sealed = Block(
        block.height, block.parent, block.txs, block.proposer, block.timestamp, nonce, digest
    )
    return sealed, attempts


class PowEngine(ConsensusEngine):
    name = "pow"

    def __init__(self, difficulty_bits: int, rng: random.Random, work: Optional[WorkLedger] = None):
        super().__init__(work)
        self.difficulty_bits = difficulty_bits
        self.rng = rng

    def seal(self, block: Block, worker: NodeId) -> Tuple[Block, int]:
        return pow_seal(block, self.difficulty_bits, self.rng, self.work, worker)

    def validate(self, block: Block) -> bool:
        return hash_block(block) == block.block_hash and meets_difficulty(
            block.block_hash, self.difficulty_bits
        )

    def finalize(self, block: Block) -> None:
        self.mark_final(block.block_hash)


# --- Quorum voting -----------------------------------------------------------


def voting_round(
    config: QuorumConfig,
    proposal: Block,
    votes: Iterable[NodeId],
    validators: Optional[Set[NodeId]] = None,
    work: Optional[WorkLedger] = None,
    charge_to: NodeId = "",
) -> VoteOutcome:
    """Count distinct votes against the quorum threshold.

    Duplicate votes from one node count once. A full round costs n(n-1)
    messages on the work ledger.
    """
    distinct = set(votes)
    if validators is not None:
        unknown = distinct - validators
        if unknown:
            raise UnknownValidator(", ".join(sorted(unknown)))
    if work is not None:
        work.add(charge_to or proposal.proposer, "messages_sent", config.n * (config.n - 1))
    if len(distinct) >= config.quorum:
        return VoteOutcome.FINALIZED
    return VoteOutcome.PENDING


class VotingEngine(ConsensusEngine):
    name = "voting"

    def __init__(self, config: QuorumConfig, work: Optional[WorkLedger] = None):
        super().__init__(work)
        self.config = config
        self._finalized_heights: Dict[int, Hash] = {}

    def decide(self, proposal: Block, votes: Iterable[NodeId]) -> VoteOutcome:
        outcome = voting_round(self.config, proposal, votes, work=self.work)
        if outcome is VoteOutcome.FINALIZED:
            prev = self._finalized_heights.get(proposal.height)
            if prev is not None and prev != proposal.block_hash:
                raise FinalityViolation(
                    f"two blocks finalized at height {proposal.height}"
                )
            self._finalized_heights[proposal.height] = proposal.block_hash
            self.mark_final(proposal.block_hash)
        return outcome


# --- Endorse / order / validate (Fabric-style) -------------------------------


@dataclass(frozen=True)
class EndorsementPolicy:
    """AllOf when k is None, otherwise KOfN(k)."""

    k: Optional[int] = None

    def required(self, n_endorsers: int) -> int:
        return n_endorsers if self.k is None else self.k


ALL_OF = EndorsementPolicy()


def k_of_n(k: int) -> EndorsementPolicy:
    return EndorsementPolicy(k=k)


@dataclass
class RwIntent:
    """Read/write intent captured at simulated endorsement time."""

    tx: Transaction
    writes: Tuple[str, ...]
    reads: Dict[str, int] = field(default_factory=dict)


class EndorseOrderValidateEngine(ConsensusEngine):
    """Three-phase flow: endorse per policy, totally order, MVCC-validate.

    A transaction whose read versions were superseded by an earlier
    transaction in the same (or an earlier) block is marked invalid but
    still appended, mirroring the platform's execute-order-validate design.
    """

    name = "endorse-order-validate"

    def __init__(
        self,
        endorsers: Sequence[NodeId],
        policy: EndorsementPolicy = ALL_OF,
        work: Optional[WorkLedger] = None,
    ):
        super().__init__(work)
        if not endorsers:
            raise ValueError("endorser set must be non-empty")
        self.endorsers = tuple(endorsers)
        self.policy = policy
        self.versions: Dict[str, int] = {}
        self._position = 0

    def endorse(
        self, tx: Transaction, writes: Sequence[str], responding: Optional[Set[NodeId]] = None
    ) -> RwIntent:
        """Phase 1: collect simulated endorsements and snapshot read versions."""
        responders = set(self.endorsers) if responding is None else responding & set(self.endorsers)
        need = self.policy.required(len(self.endorsers))
        if len(responders) < need:
            raise PolicyUnsatisfied(
                f"{len(responders)} endorsements < required {need}"
            )
        for node in sorted(responders):
            self.work.add(node, "endorsements_performed", 1)
        reads = {key: self.versions.get(key, 0) for key in writes}
        return RwIntent(tx=tx, writes=tuple(writes), reads=reads)

    def order(self, intents: Sequence[RwIntent]) -> List[Tuple[int, RwIntent]]:
        """Phase 2: assign consecutive total-order positions."""
        out = []
        for intent in intents:
            out.append((self._position, intent))
            self._position += 1
        return out

    def validate_block(self, ordered: Sequence[Tuple[int, RwIntent]]) -> List[TxLabel]:
        """Phase 3: serial MVCC replay; stale reads invalidate, writes commit."""
        labels: List[TxLabel] = []
        for _, intent in ordered:
            stale = any(self.versions.get(k, 0) != v for k, v in intent.reads.items())
            if stale:
                labels.append(TxLabel.INVALID)
            else:
                for key in intent.writes:
                    self.versions[key] = self.versions.get(key, 0) + 1
                labels.append(TxLabel.VALID)
            self.mark_final(intent.tx.tx_id)
        return labels


def endorse_order_validate(
    engine: EndorseOrderValidateEngine,
    tx: Transaction,
    writes: Sequence[str],
    responding: Optional[Set[NodeId]] = None,
) -> Tuple[TxLabel, int]:
    """Run one transaction through all three phases; returns (label, position)."""
    intent = engine.endorse(tx, writes, responding)
    ordered = engine.order([intent])
    labels = engine.validate_block(ordered)
    return labels[0], ordered[0][0]


# --- Tangle ------------------------------------------------------------------


def tangle_select_tips(dag: Dag, rng: random.Random) -> Tuple[Hash, Hash]:
    """Pick two tips uniformly at random, distinct whenever two exist."""
    tips = dag.sorted_tips()
    if not tips:
        raise EmptyDag("dag has no tips")
    if len(tips) == 1:
        return tips[0], tips[0]
    a, b = rng.sample(tips, 2)
    return a, b


class TangleEngine(ConsensusEngine):
    name = "tangle"

    def __init__(
        self,
        difficulty_bits: int,
        rng: random.Random,
        work: Optional[WorkLedger] = None,
    ):
        super().__init__(work)
        self.difficulty_bits = difficulty_bits
        self.rng = rng
        self.dag = Dag()

    def select_tips(self) -> Tuple[Hash, Hash]:
        return tangle_select_tips(self.dag, self.rng)

    def attach(self, tx: Transaction, worker: NodeId) -> Tuple[DagVertex, int]:
        """Little-PoW nonce search, then attach the vertex approving two tips."""
        approves = self.select_tips()
        nonce = self.rng.getrandbits(64)
        attempts = 0
        while True:
            attempts += 1
            vertex = make_vertex(approves, tx, nonce)
            if meets_difficulty(vertex.vertex_hash, self.difficulty_bits):
                break
            nonce = (nonce + 1) & 0xFFFFFFFFFFFFFFFF
        self.work.add(worker, "hash_attempts", attempts)
        self.dag.attach(vertex, self.difficulty_bits)
        return vertex, attempts

    def confirmed(self, vertex_hash: Hash, weight_threshold: int) -> bool:
        return self.dag.weight.get(vertex_hash, 0) >= weight_threshold


# --- Proof of History --------------------------------------------------------


def poh_extend(
    chain_state: Hash,
    ticks: int,
    work: Optional[WorkLedger] = None,
    worker: NodeId = "",
) -> Tuple[Hash, int]:
    """Apply SHA-256 sequentially `ticks` times; returns (state, proof length)."""
    if ticks < 1:
        raise ValueError("ticks must be >= 1")
    state = chain_state
    for _ in range(ticks):
        state = sha256(state)
    if work is not None:
        work.add(worker, "hash_attempts", ticks)
    return state, ticks


def poh_verify(start: Hash, claimed: Hash, ticks: int) -> bool:
    """Verify by independent recomputation."""
    state = start
    for _ in range(ticks):
        state = sha256(state)
    return state == claimed


class PohEngine(ConsensusEngine):
    name = "poh"

    def __init__(self, seed_state: Hash, work: Optional[WorkLedger] = None):
        super().__init__(work)
        self.state = seed_state
        self.total_ticks = 0

    def extend(self, ticks: int, worker: NodeId) -> Hash:
        self.state, _ = poh_extend(self.state, ticks, self.work, worker)
        self.total_ticks += ticks
        return self.state

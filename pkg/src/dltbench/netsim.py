"""Deterministic discrete-event simulation of a private DLT testbed.

One scenario is one single-threaded event loop: clients generate
transactions at a configured rate, managers run the platform's consensus
pipeline, and every message is charged latency, bandwidth, and CPU work.
Identical (scenario, seed) inputs give byte-identical reports.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Set, Tuple

from .channels import update as channel_update
from .consensus import (
    EndorseOrderValidateEngine,
    PohEngine,
    QuorumConfig,
    RwIntent,
    TangleEngine,
    TxLabel,
    VoteOutcome,
    WorkLedger,
    pow_seal,
    voting_round,
)
from .ledger import (
    Block,
    ContentStore,
    Hash,
    NodeId,
    Transaction,
    TxKind,
    genesis_block,
    make_block,
    sha256,
    wire_size,
)
from .marketplace import Machine, Marketplace, RentalRequest
from .metrics import (
    CarbonParams,
    MetricsReport,
    NodeMetrics,
    apply_carbon,
    cpu_fraction_from_work,
    latency_stats,
)
from .profiles import PlatformProfile, PLATFORM_NAMES, load_profile


class NetsimError(Exception):
    pass


class InvalidScenario(NetsimError):
    pass


class UnknownNode(NetsimError):
    pass


class Role(Enum):
    MANAGER = "manager"
    CLIENT = "client"


@dataclass(frozen=True)
class LinkSpec:
    latency_ms: float
    bandwidth_bytes_per_s: float

    def __post_init__(self) -> None:
        if self.latency_ms < 0:
            raise InvalidScenario("link latency_ms must be >= 0")
        if self.bandwidth_bytes_per_s <= 0:
            raise InvalidScenario("link bandwidth_bytes_per_s must be > 0")


@dataclass(frozen=True)
class NodeSpec:
    node_id: NodeId
    role: Role
    link: LinkSpec
    cpu_capacity: float  # work units per simulated second


DEFAULT_MANAGER_LINK = LinkSpec(latency_ms=1.0, bandwidth_bytes_per_s=100_000_000)
DEFAULT_CLIENT_LINK = LinkSpec(latency_ms=5.0, bandwidth_bytes_per_s=10_000_000)
DEFAULT_MANAGER_CAPACITY = 2_000_000.0
DEFAULT_CLIENT_CAPACITY = 150_000.0

CHANNEL_UPDATE_BYTES = 250
CHANNEL_ACK_BYTES = 109


@dataclass(frozen=True)
class MachineScript:
    machine_id: str
    capabilities: Tuple[str, ...]
    owner: str  # client node id acting as plant operator


@dataclass(frozen=True)
class RentalScript:
    request_id: str
    customer: str  # client node id
    capabilities: Tuple[str, ...]
    start_ms: int
    end_ms: int
    price: int  # micro-units per ms
    submit_at_ms: float = 100.0
    progress_reports: int = 4
    use_channel: bool = True


@dataclass(frozen=True)
class MarketplaceScript:
    machines: Tuple[MachineScript, ...]
    rentals: Tuple[RentalScript, ...]


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    platform: str = "quorum"
    managers: int = 2
    clients: int = 2
    input_tps: float = 10.0
    tps_is_total: bool = False
    duration_s: float = 60.0
    seed: int = 42
    arrival: str = "fixed"  # fixed | poisson
    payload_bytes: int = 32
    block_interval_ms: Optional[float] = None  # chain engines; None = profile default
    manager_link: LinkSpec = DEFAULT_MANAGER_LINK
    client_link: LinkSpec = DEFAULT_CLIENT_LINK
    manager_capacity: float = DEFAULT_MANAGER_CAPACITY
    client_capacity: float = DEFAULT_CLIENT_CAPACITY
    profile_overrides: dict = field(default_factory=dict)
    marketplace: Optional[MarketplaceScript] = None

    def validate(self) -> None:
        if self.platform not in PLATFORM_NAMES:
            raise InvalidScenario(
                f"platform: {self.platform!r} is not one of {', '.join(PLATFORM_NAMES)}"
            )
        if self.managers < 1:
            raise InvalidScenario("managers: must be >= 1")
        if self.clients < 1:
            raise InvalidScenario("clients: must be >= 1")
        if self.duration_s <= 0:
            raise InvalidScenario("duration_s: must be > 0")
        if self.input_tps < 0:
            raise InvalidScenario("input_tps: must be >= 0")
        if self.arrival not in ("fixed", "poisson"):
            raise InvalidScenario("arrival: must be 'fixed' or 'poisson'")
        if self.payload_bytes < 0:
            raise InvalidScenario("payload_bytes: must be >= 0")
        if self.block_interval_ms is not None and self.block_interval_ms <= 0:
            raise InvalidScenario("block_interval_ms: must be > 0")
        if self.seed < 0 or self.seed >= 2**64:
            raise InvalidScenario("seed: must fit in 64 bits")


# Event kind ranks; ties at equal time resolve by (rank, node index, seq).
EV_TXGEN = 0
EV_ARRIVAL = 1
EV_BLOCK = 2
EV_CHATTER = 3
EV_MARKET = 4


def _substream(seed: int, label: str) -> random.Random:
    raw = sha256(f"{seed}:{label}".encode())
    return random.Random(int.from_bytes(raw[:8], "big"))


def delivery_delay_ms(size_bytes: int, frm: NodeSpec, to: NodeSpec) -> float:
    """Latency plus serialization over the slower of the two access links."""
    latency = max(frm.link.latency_ms, to.link.latency_ms)
    bandwidth = min(frm.link.bandwidth_bytes_per_s, to.link.bandwidth_bytes_per_s)
    return latency + (size_bytes / bandwidth) * 1000.0


class Simulation:
    """Single-run simulator; construct, call run(), read .report."""

    def __init__(self, scenario: Scenario, record_messages: bool = False):
        scenario.validate()
        self.scenario = scenario
        overrides = dict(scenario.profile_overrides)
        if scenario.block_interval_ms is not None:
            overrides["block_interval_ms"] = scenario.block_interval_ms
        self.profile: PlatformProfile = load_profile(scenario.platform, overrides)
        self.duration_ms = scenario.duration_s * 1000.0
        self.now = 0.0
        self._heap: List[tuple] = []
        self._seq = 0

        self.nodes: Dict[NodeId, NodeSpec] = {}
        self.managers: List[NodeId] = []
        self.clients: List[NodeId] = []
        for i in range(scenario.managers):
            nid = f"manager-{i}"
            self.nodes[nid] = NodeSpec(
                nid, Role.MANAGER, scenario.manager_link, scenario.manager_capacity
            )
            self.managers.append(nid)
        for i in range(scenario.clients):
            nid = f"client-{i}"
            self.nodes[nid] = NodeSpec(
                nid, Role.CLIENT, scenario.client_link, scenario.client_capacity
            )
            self.clients.append(nid)
        self._node_rank = {nid: i for i, nid in enumerate([*self.managers, *self.clients])}

        self.work = WorkLedger()
        self.store = ContentStore()
        self.bytes_sent: Dict[NodeId, int] = {n: 0 for n in self.nodes}
        self.bytes_received: Dict[NodeId, int] = {n: 0 for n in self.nodes}
        self.record_messages = record_messages
        self.messages: List[Tuple[NodeId, NodeId, int]] = []

        self.rng_workload = _substream(scenario.seed, "workload")
        self.rng_consensus = _substream(scenario.seed, "consensus")

        # transaction bookkeeping
        self.gen_time: Dict[Hash, float] = {}
        self.final_time: Dict[Hash, float] = {}
        self.invalidated: Set[Hash] = set()
        self.generated = 0
        self.ledger_txs: List[Transaction] = []  # finalized, in finalization order

        self.adapter = _make_adapter(self)
        self.market = _MarketDriver(self) if scenario.marketplace else None
        self.report: Optional[MetricsReport] = None

    # -- event machinery -------------------------------------------------------

    def schedule(self, t: float, kind: int, node: NodeId, fn: Callable[[], None]) -> None:
        if t < self.now:
            raise NetsimError(f"causality violation: scheduling {t} before now {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (t, kind, self._node_rank.get(node, 1 << 30), self._seq, fn))

    def deliver(
        self,
        frm: NodeId,
        to: NodeId,
        size_bytes: int,
        fn: Optional[Callable[[float], None]] = None,
    ) -> float:
        """Charge a message to both endpoints and schedule its arrival."""
        if frm not in self.nodes or to not in self.nodes:
            raise UnknownNode(frm if frm not in self.nodes else to)
        arrival = self.now + delivery_delay_ms(size_bytes, self.nodes[frm], self.nodes[to])
        self.bytes_sent[frm] += size_bytes
        self.bytes_received[to] += size_bytes
        self.work.add(frm, "messages_sent", 1)
        if self.record_messages:
            self.messages.append((frm, to, size_bytes))
        if fn is not None:
            self.schedule(arrival, EV_ARRIVAL, to, lambda: fn(arrival))
        return arrival

    def broadcast(
        self,
        frm: NodeId,
        targets: List[NodeId],
        size_bytes: int,
        fn: Optional[Callable[[NodeId, float], None]] = None,
    ) -> None:
        for to in targets:
            if to == frm:
                continue
            if fn is None:
                self.deliver(frm, to, size_bytes)
            else:
                self.deliver(frm, to, size_bytes, (lambda t, _to=to: fn(_to, t)))

    def charge(self, node: NodeId, work_key: str, mult: float = 1.0) -> None:
        cost = self.profile.work.get(work_key, 0.0)
        if cost:
            self.work.charge(node, cost * mult)

    def charge_sig_verify(self, node: NodeId, count: int = 1) -> None:
        self.work.add(
            node, "signature_verifications", count, self.profile.work.get("sig_verify", 0.0)
        )

    def wire(self, tx: Transaction) -> int:
        return wire_size(self.profile.wire, tx)

    # -- workload ---------------------------------------------------------------

    def _workload_payload(self, client: NodeId, seq: int) -> bytes:
        digest = sha256(f"{client}:{seq}".encode())
        n = self.scenario.payload_bytes
        if n <= 32:
            return digest[:n]
        reps = -(-n // 32)
        return (digest * reps)[:n]

    def _start_workload(self) -> None:
        sc = self.scenario
        if sc.input_tps == 0:
            return
        spacing = 1000.0 / sc.input_tps
        if sc.tps_is_total:
            self.schedule(0.0, EV_TXGEN, self.clients[0], lambda: self._gen_total(spacing, 0))
        else:
            for idx, client in enumerate(self.clients):
                offset = spacing * idx / len(self.clients)
                self.schedule(
                    offset,
                    EV_TXGEN,
                    client,
                    (lambda c=client, o=offset: self._gen_for_client(c, o, spacing, 0)),
                )

    def _gen_total(self, spacing: float, seq: int) -> None:
        client = self.clients[seq % len(self.clients)]
        self._generate_tx(client, seq)
        if self.scenario.arrival == "poisson":
            nxt = self.now + self.rng_workload.expovariate(1.0) * spacing
        else:
            nxt = (seq + 1) * spacing
        if nxt < self.duration_ms:
            nxt_client = self.clients[(seq + 1) % len(self.clients)]
            self.schedule(nxt, EV_TXGEN, nxt_client, lambda: self._gen_total(spacing, seq + 1))

    def _gen_for_client(self, client: NodeId, offset: float, spacing: float, seq: int) -> None:
        self._generate_tx(client, seq)
        if self.scenario.arrival == "poisson":
            nxt = self.now + self.rng_workload.expovariate(1.0) * spacing
        else:
            nxt = offset + (seq + 1) * spacing
        if nxt < self.duration_ms:
            self.schedule(
                nxt,
                EV_TXGEN,
                client,
                (lambda: self._gen_for_client(client, offset, spacing, seq + 1)),
            )

    def _generate_tx(self, client: NodeId, seq: int) -> None:
        from .ledger import make_transaction

        tx = make_transaction(
            client, TxKind.DATA_ANCHOR, self._workload_payload(client, seq), int(self.now)
        )
        self.submit_tx(client, tx)

    def submit_tx(self, sender_node: NodeId, tx: Transaction) -> None:
        """Entry point for all transactions, workload and contract alike."""
        self.generated += 1
        self.gen_time[tx.tx_id] = self.now
        self.charge(sender_node, "tx_create")
        self.adapter.on_client_tx(sender_node, tx)

    def home_manager(self, client: NodeId) -> NodeId:
        return self.managers[self.clients.index(client) % len(self.managers)]

    def mark_finalized(self, tx: Transaction, t: float) -> None:
        if t >= self.duration_ms:
            return  # still in flight at cutoff; stays pending
        if tx.tx_id not in self.final_time and tx.tx_id not in self.invalidated:
            self.final_time[tx.tx_id] = t
            self.ledger_txs.append(tx)

    def mark_invalidated(self, tx: Transaction) -> None:
        if tx.tx_id not in self.final_time and tx.tx_id not in self.invalidated:
            self.invalidated.add(tx.tx_id)

    # -- chatter ------------------------------------------------------------------

    def _start_chatter(self) -> None:
        rate = self.profile.comm.get("chatter_bytes_per_s", 0.0)
        interval = self.profile.comm.get("chatter_interval_ms", 200.0)
        if rate <= 0 or len(self.managers) < 2:
            return
        per_msg = max(1, int(rate * interval / 1000.0))

        def tick() -> None:
            for frm in self.managers:
                for to in self.managers:
                    if frm != to:
                        self.deliver(frm, to, per_msg)
            nxt = self.now + interval
            if nxt < self.duration_ms:
                self.schedule(nxt, EV_CHATTER, self.managers[0], tick)

        self.schedule(interval, EV_CHATTER, self.managers[0], tick)

    # -- run ------------------------------------------------------------------------

    def run(self) -> MetricsReport:
        self._start_workload()
        self._start_chatter()
        self.adapter.start()
        if self.market:
            self.market.start()
        while self._heap:
            t, _, _, _, fn = heapq.heappop(self._heap)
            if t >= self.duration_ms:
                break
            self.now = t
            fn()
        self.now = self.duration_ms
        self.adapter.at_cutoff()
        self.report = self._build_report()
        return self.report

    def _build_report(self) -> MetricsReport:
        sc = self.scenario
        latencies = [
            self.final_time[txid] - self.gen_time[txid] for txid in self.final_time
        ]
        nodes: Dict[str, NodeMetrics] = {}
        for nid in [*self.managers, *self.clients]:
            spec = self.nodes[nid]
            usage = cpu_fraction_from_work(self.work, nid, spec.cpu_capacity, sc.duration_s)
            nodes[nid] = NodeMetrics(
                role=spec.role.value,
                bytes_sent=self.bytes_sent[nid],
                bytes_received=self.bytes_received[nid],
                cpu_fraction=usage.fraction,
                cpu_saturated=usage.saturated,
            )
        finalized = len(self.final_time)
        report = MetricsReport(
            scenario_name=sc.name,
            platform=sc.platform,
            managers=sc.managers,
            clients=sc.clients,
            duration_s=sc.duration_s,
            seed=sc.seed,
            generated=self.generated,
            finalized=finalized,
            invalidated=len(self.invalidated),
            pending=self.generated - finalized - len(self.invalidated),
            validated_tps=finalized / sc.duration_s,
            latency=latency_stats(latencies),
            nodes=nodes,
        )
        apply_carbon(report, CarbonParams(horizon_hours=sc.duration_s / 3600.0))
        return report


# --- platform adapters ----------------------------------------------------------


class _Adapter:
    def __init__(self, sim: Simulation):
        self.sim = sim
        self.profile = sim.profile

    def on_client_tx(self, client: NodeId, tx: Transaction) -> None:
        raise NotImplementedError

    def start(self) -> None:
        pass

    def at_cutoff(self) -> None:
        pass


class _GossipChainAdapter(_Adapter):
    """Shared machinery for chain platforms that flood transactions between
    managers and periodically cut blocks (proof-of-work and quorum voting)."""

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.chain: List[Block] = [genesis_block()]
        self.mempool: Dict[NodeId, List[Transaction]] = {m: [] for m in sim.managers}
        self.included: Set[Hash] = set()

    def on_client_tx(self, client: NodeId, tx: Transaction) -> None:
        sim = self.sim
        home = sim.home_manager(client)
        size = sim.wire(tx)

        def on_home(_t: float) -> None:
            sim.charge_sig_verify(home)
            sim.charge(home, "tx_validate")
            self.mempool[home].append(tx)
            for other in sim.managers:
                if other == home:
                    continue

                def on_peer(_t2: float, mgr: NodeId = other) -> None:
                    sim.charge_sig_verify(mgr)
                    sim.charge(mgr, "tx_validate")
                    self.mempool[mgr].append(tx)

                sim.deliver(home, other, size, on_peer)

        sim.deliver(client, home, size, on_home)

    def take_txs(self, mgr: NodeId) -> List[Transaction]:
        out: List[Transaction] = []
        pool = self.mempool[mgr]
        keep: List[Transaction] = []
        for tx in pool:
            if tx.tx_id in self.included:
                continue
            if len(out) < self.profile.max_block_txs:
                out.append(tx)
                self.included.add(tx.tx_id)
            else:
                keep.append(tx)
        self.mempool[mgr] = keep
        return out

    def block_bytes(self, block: Block) -> int:
        header = self.profile.comm.get("block_header_bytes", 200)
        extra = self.profile.comm.get("block_extra_bytes_per_tx", 0)
        return int(header + sum(self.sim.wire(tx) + extra for tx in block.txs))

    def block_proc_ms(self, block: Block) -> float:
        return self.profile.timing.get("block_proc_ms", 1.0) + len(block.txs) * (
            self.profile.timing.get("tx_validate_ms", 0.0)
        )


class PowChainAdapter(_GossipChainAdapter):
    """Continuous mining on every manager; sealing by real nonce search at a
    desk-scale difficulty. The mining CPU charge follows the configured
    sustained hash rate, which is what dominates the platform's energy."""

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.attempts_charged = 0

    def start(self) -> None:
        self.sim.schedule(
            self.profile.block_interval_ms, EV_BLOCK, self.sim.managers[0], self._mine_block
        )

    def _charge_mining(self) -> None:
        sim = self.sim
        due = int(self.profile.hash_rate_per_s * sim.now / 1000.0)
        attempts = due - self.attempts_charged
        if attempts <= 0:
            return
        unit = self.profile.work.get("hash_attempt", 1.0)
        for mgr in sim.managers:
            sim.work.add(mgr, "hash_attempts", attempts, unit)
        self.attempts_charged = due

    def _mine_block(self) -> None:
        sim = self.sim
        self._charge_mining()
        miner = sim.rng_consensus.choice(sim.managers)
        txs = self.take_txs(miner)
        draft = make_block(
            len(self.chain), self.chain[-1].block_hash, txs, miner, int(sim.now)
        )
        sealed, _ = pow_seal(draft, self.profile.pow_difficulty_bits, sim.rng_consensus)
        self.chain.append(sealed)
        size = self.block_bytes(sealed)
        proc = self.block_proc_ms(sealed)
        peer_sync = self.profile.timing.get("peer_sync_ms", 0.0)
        finalize_at = sim.now + proc
        sim.charge(miner, "block_proc")
        sim.charge(miner, "tx_validate", len(sealed.txs))
        arrivals = []
        for other in sim.managers:
            if other == miner:
                continue
            arrival = sim.deliver(miner, other, size)
            arrivals.append(arrival)
            sim.charge_sig_verify(other, len(sealed.txs))
            sim.charge(other, "block_proc")
            sim.charge(other, "tx_validate", len(sealed.txs))
        if arrivals:
            finalize_at = max(finalize_at, max(arrivals) + proc)
        # head settles after one sync exchange per peer; mining resumes then
        finalize_at += peer_sync * (len(sim.managers) - 1)
        for tx in sealed.txs:
            sim.mark_finalized(tx, finalize_at)
        nxt = finalize_at + self.profile.block_interval_ms
        sim.schedule(nxt, EV_BLOCK, sim.managers[0], self._mine_block)

    def at_cutoff(self) -> None:
        self._charge_mining()


class VotingChainAdapter(_GossipChainAdapter):
    """Single-round quorum voting: proposer broadcasts, validators vote to
    everyone, each node finalizes at 2f+1 distinct votes."""

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.config = QuorumConfig.for_validators(len(sim.managers))
        self.height = 0

    def start(self) -> None:
        self.sim.schedule(
            self.profile.block_interval_ms, EV_BLOCK, self.sim.managers[0], self._propose
        )

    def _propose(self) -> None:
        sim = self.sim
        proposer = sim.managers[self.height % len(sim.managers)]
        self.height += 1
        txs = self.take_txs(proposer)
        block = make_block(
            len(self.chain), self.chain[-1].block_hash, txs, proposer, int(sim.now)
        )
        self.chain.append(block)
        size = self.block_bytes(block)
        proc = self.block_proc_ms(block)
        vote_bytes = int(self.profile.comm.get("vote_bytes", 110))
        vote_proc_ms = self.profile.timing.get("vote_proc_ms", 5.0)
        votes_at: Dict[NodeId, List[float]] = {m: [] for m in sim.managers}
        finalize_at: Dict[NodeId, float] = {}
        done = {"count": 0}

        def node_votes(mgr: NodeId) -> None:
            """mgr finished validating: counts its own vote, votes to peers."""
            sim.charge(mgr, "block_proc")
            sim.charge(mgr, "tx_validate", len(block.txs))
            sim.charge_sig_verify(mgr, len(block.txs))
            record_vote(mgr, sim.now)
            for other in sim.managers:
                if other == mgr:
                    continue
                sim.deliver(
                    mgr, other, vote_bytes, (lambda t, at=other: record_vote(at, t))
                )

        def record_vote(at: NodeId, t: float) -> None:
            if at in finalize_at:
                return
            sim.charge(at, "vote_proc")
            votes_at[at].append(t)
            if len(votes_at[at]) >= self.config.quorum:
                finalize_at[at] = t + vote_proc_ms * max(0, self.config.quorum - 1)
                done["count"] += 1
                if done["count"] == len(sim.managers):
                    settle()

        def settle() -> None:
            outcome = voting_round(
                self.config, block, set(sim.managers), set(sim.managers)
            )
            assert outcome is VoteOutcome.FINALIZED
            t_final = max(finalize_at.values())
            for tx in block.txs:
                sim.mark_finalized(tx, t_final)
            nxt = max(finalize_at[proposer] + self.profile.block_interval_ms, sim.now)
            sim.schedule(nxt, EV_BLOCK, proposer, self._propose)

        sim.schedule(sim.now + proc, EV_ARRIVAL, proposer, lambda: node_votes(proposer))
        for other in sim.managers:
            if other == proposer:
                continue
            sim.deliver(
                proposer,
                other,
                size,
                (
                    lambda t, mgr=other: sim.schedule(
                        t + proc, EV_ARRIVAL, mgr, lambda: node_votes(mgr)
                    )
                ),
            )


class FabricAdapter(_Adapter):
    """Endorse at the policy peers, order at a single CFT orderer, then
    MVCC-validate at every peer; invalid transactions stay appended."""

    MAX_RETRIES = 3

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        n = max(1, min(self.profile.endorser_count or 2, len(sim.managers)))
        self.endorsers = sim.managers[:n]
        self.orderer = sim.managers[0]
        self.engine = EndorseOrderValidateEngine(self.endorsers, work=sim.work)
        self.queue: List[RwIntent] = []
        self.attempts: Dict[Hash, int] = {}

    def start(self) -> None:
        self.sim.schedule(
            self.profile.block_interval_ms, EV_BLOCK, self.orderer, self._cut_block
        )

    def _writes_for(self, tx: Transaction) -> Tuple[str, ...]:
        return _contract_write_keys(self.sim, tx)

    def on_client_tx(self, client: NodeId, tx: Transaction) -> None:
        sim = self.sim
        size = sim.wire(tx)
        resp_bytes = int(self.profile.comm.get("endorsement_response_bytes", 1200))
        sig_bytes = int(self.profile.comm.get("endorsement_sig_bytes", 100))
        endorse_ms = self.profile.timing.get("endorse_ms", 2.0)
        pending = {"left": len(self.endorsers)}

        def on_response(_t: float) -> None:
            sim.charge(client, "client_response_proc")
            pending["left"] -= 1
            if pending["left"] > 0:
                return
            # all endorsements in: wrap and submit to the ordering service
            sim.charge(client, "client_envelope")
            envelope = size + sig_bytes * len(self.endorsers)

            def on_ordered(_t2: float) -> None:
                sim.charge(self.orderer, "order")
                intent = self.engine.endorse(tx, self._writes_for(tx))
                self.queue.append(intent)

            sim.deliver(client, self.orderer, envelope, on_ordered)

        for endorser in self.endorsers:

            def on_proposal(t: float, mgr: NodeId = endorser) -> None:
                sim.charge(mgr, "endorse")
                sim.work.add(mgr, "endorsements_performed", 1)
                sim.schedule(
                    t + endorse_ms,
                    EV_ARRIVAL,
                    mgr,
                    lambda m=mgr: sim.deliver(m, client, resp_bytes, on_response),
                )

            sim.deliver(client, endorser, size, on_proposal)

    def _cut_block(self) -> None:
        sim = self.sim
        batch = self.queue[: self.profile.max_block_txs]
        self.queue = self.queue[len(batch) :]
        if batch:
            ordered = self.engine.order(batch)
            labels = self.engine.validate_block(ordered)
            header = int(self.profile.comm.get("block_header_bytes", 200))
            extra = int(self.profile.comm.get("block_extra_bytes_per_tx", 0))
            size = header + sum(sim.wire(i.tx) + extra for i in batch)
            proc = self.profile.timing.get("block_proc_ms", 1.0) + len(batch) * (
                self.profile.timing.get("tx_validate_ms", 0.0)
            )
            finalize_at = sim.now + proc
            arrivals = []
            for mgr in sim.managers:
                sim.charge(mgr, "block_proc")
                sim.charge(mgr, "mvcc_check", len(batch))
                sim.charge(mgr, "tx_validate", len(batch))
                sim.charge_sig_verify(mgr, len(batch))
                if mgr != self.orderer:
                    arrivals.append(sim.deliver(self.orderer, mgr, size))
            if arrivals:
                finalize_at = max(finalize_at, max(arrivals) + proc)
            for (pos, intent), label in zip(ordered, labels):
                if label is TxLabel.VALID:
                    sim.mark_finalized(intent.tx, finalize_at)
                else:
                    self._retry_or_drop(intent.tx)
        nxt = sim.now + self.profile.block_interval_ms
        sim.schedule(nxt, EV_BLOCK, self.orderer, self._cut_block)

    def _retry_or_drop(self, tx: Transaction) -> None:
        """MVCC read conflict: the submitting client re-endorses and
        resubmits, as platform SDKs do; give up after a few rounds."""
        sim = self.sim
        tries = self.attempts.get(tx.tx_id, 0) + 1
        self.attempts[tx.tx_id] = tries
        if tries > self.MAX_RETRIES:
            sim.mark_invalidated(tx)
            return
        sender = tx.sender if tx.sender in sim.nodes else sim.clients[0]
        sig_bytes = int(self.profile.comm.get("endorsement_sig_bytes", 100))
        envelope = sim.wire(tx) + sig_bytes * len(self.endorsers)

        def on_ordered(_t: float) -> None:
            sim.charge(self.orderer, "order")
            for mgr in self.endorsers:
                sim.charge(mgr, "endorse")
                sim.work.add(mgr, "endorsements_performed", 1)
            self.queue.append(self.engine.endorse(tx, self._writes_for(tx)))

        sim.deliver(sender, self.orderer, envelope, on_ordered)


class TangleAdapter(_Adapter):
    """Every transaction becomes a vertex attached by the receiving manager
    after a little-PoW; managers exchange compact vertex announcements, and a
    vertex confirms once enough descendants approve it."""

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.engine = TangleEngine(
            self.profile.pow_difficulty_bits, sim.rng_consensus, work=sim.work
        )
        self.unconfirmed: List[Tuple[Hash, Transaction]] = []

    def on_client_tx(self, client: NodeId, tx: Transaction) -> None:
        sim = self.sim
        home = sim.home_manager(client)
        size = sim.wire(tx)
        pow_rate = self.profile.timing.get("pow_rate_per_s", 1_000_000.0)
        expected_pow_ms = (2**self.profile.pow_difficulty_bits) / pow_rate * 1000.0
        validate_ms = self.profile.timing.get("tx_validate_ms", 0.0)

        def on_arrival(t: float) -> None:
            sim.charge_sig_verify(home)
            sim.charge(home, "tx_validate")
            sim.schedule(
                t + validate_ms + expected_pow_ms, EV_ARRIVAL, home, lambda: attach(home)
            )

        def attach(mgr: NodeId) -> None:
            vertex, attempts = self.engine.attach(tx, mgr)
            sim.charge(mgr, "hash_attempt", attempts)
            sim.charge(mgr, "tangle_bookkeeping")
            announce = int(self.profile.comm.get("announce_bytes", 104))
            for other in sim.managers:
                if other == mgr:
                    continue
                sim.deliver(
                    mgr, other, announce, (lambda _t, m=other: sim.charge(m, "announce_proc"))
                )
            self.unconfirmed.append((vertex.vertex_hash, tx))
            self._sweep_confirmations()

        sim.deliver(client, home, size, on_arrival)

    def _sweep_confirmations(self) -> None:
        sim = self.sim
        threshold = max(1, self.profile.confirm_weight)
        announce_lag = sim.nodes[sim.managers[0]].link.latency_ms if len(sim.managers) > 1 else 0.0
        still: List[Tuple[Hash, Transaction]] = []
        for vh, tx in self.unconfirmed:
            if self.engine.dag.weight.get(vh, 0) >= threshold:
                sim.mark_finalized(tx, sim.now + announce_lag)
            else:
                still.append((vh, tx))
        self.unconfirmed = still


class PohAdapter(_Adapter):
    """Fixed leader streams PoH-stamped entries each slot; validators verify
    and send vote messages back. The leader's clock never stops ticking."""

    def __init__(self, sim: Simulation):
        super().__init__(sim)
        self.leader = sim.managers[0]
        self.engine = PohEngine(sha256(f"poh:{sim.scenario.seed}".encode()), work=sim.work)
        self.queue: List[Transaction] = []

    def start(self) -> None:
        self.sim.schedule(
            self.profile.block_interval_ms, EV_BLOCK, self.leader, self._slot
        )

    def on_client_tx(self, client: NodeId, tx: Transaction) -> None:
        sim = self.sim
        home = sim.home_manager(client)
        size = sim.wire(tx)

        def at_home(_t: float) -> None:
            sim.charge_sig_verify(home)
            sim.charge(home, "tx_validate")
            if home == self.leader:
                self.queue.append(tx)
            else:
                sim.deliver(home, self.leader, size, lambda _t2: self.queue.append(tx))

        sim.deliver(client, home, size, at_home)

    def _tick_poh(self) -> None:
        sim = self.sim
        due = int(self.profile.tick_rate_per_s * sim.now / 1000.0)
        ticks = due - self.engine.total_ticks
        if ticks >= 1:
            self.engine.extend(ticks, self.leader)
            sim.charge(self.leader, "poh_tick", ticks)

    def _slot(self) -> None:
        sim = self.sim
        self._tick_poh()
        txs = self.queue[: self.profile.max_block_txs]
        self.queue = self.queue[len(txs) :]
        header = int(self.profile.comm.get("block_header_bytes", 80))
        overhead = int(self.profile.comm.get("entry_overhead_bytes", 48))
        vote_bytes = int(self.profile.comm.get("vote_bytes", 200))
        size = header + sum(sim.wire(tx) + overhead for tx in txs)
        proc = self.profile.timing.get("block_proc_ms", 1.0) + len(txs) * (
            self.profile.timing.get("tx_validate_ms", 0.0)
        )
        sim.charge(self.leader, "block_proc")
        finalize_at = sim.now + proc
        arrivals = []
        for mgr in sim.managers:
            if mgr == self.leader:
                continue
            arrival = sim.deliver(self.leader, mgr, size)
            arrivals.append(arrival)
            sim.charge_sig_verify(mgr, len(txs))
            sim.charge(mgr, "tx_validate", len(txs))
            sim.charge(mgr, "vote_create")
            sim.deliver(mgr, self.leader, vote_bytes)
        if arrivals:
            finalize_at = max(finalize_at, max(arrivals) + proc)
        for tx in txs:
            sim.mark_finalized(tx, finalize_at)
        nxt = sim.now + self.profile.block_interval_ms
        sim.schedule(nxt, EV_BLOCK, self.leader, self._slot)

    def at_cutoff(self) -> None:
        self._tick_poh()


def _contract_write_keys(sim: Simulation, tx: Transaction) -> Tuple[str, ...]:
    """Write-set keys for MVCC: contract records touch their entity keys,
    generic workload anchors each touch a unique key."""
    import json

    try:
        body = json.loads(tx.payload.decode())
    except (UnicodeDecodeError, ValueError):
        body = None
    if isinstance(body, dict):
        op = body.get("op")
        if op == "publish":
            return (f"machine:{body['machine_id']}",)
        if op == "request":
            return (f"request:{body['request_id']}",)
        if op == "match":
            return (f"agreement:{body['agreement_id']}", f"machine:{body['machine_id']}")
        if op == "unlock":
            return (f"agreement:{body['agreement_id']}",)
        if op == "settle":
            return (f"agreement:{body['agreement_id']}",)
        if "channel_id" in body:
            return (f"channel:{body['channel_id']}",)
    if tx.kind is TxKind.DATA_ANCHOR and len(tx.payload) == 32:
        blob = sim.store.entries.get(tx.payload)
        if blob:
            try:
                head = json.loads(blob.decode())
                if isinstance(head, dict) and "agreement_id" in head:
                    return (f"agreement:{head['agreement_id']}",)
            except (UnicodeDecodeError, ValueError):
                pass
    return (f"tx:{tx.tx_id.hex()}",)


def _make_adapter(sim: Simulation) -> _Adapter:
    kind = sim.profile.consensus
    if kind == "pow":
        return PowChainAdapter(sim)
    if kind == "voting":
        return VotingChainAdapter(sim)
    if kind == "endorse-order-validate":
        return FabricAdapter(sim)
    if kind == "tangle":
        return TangleAdapter(sim)
    if kind == "poh":
        return PohAdapter(sim)
    raise InvalidScenario(f"platform: unsupported consensus kind {kind!r}")


# --- marketplace driver -----------------------------------------------------------


class _MarketDriver:
    """Schedules the seven-step rental workflow inside the event loop and
    routes every contract transaction through the platform pipeline."""

    def __init__(self, sim: Simulation):
        self.sim = sim
        script = sim.scenario.marketplace
        assert script is not None
        self.script = script
        self.market = Marketplace(sim.store, submit=self._submit)
        self.channels: Dict[str, object] = {}
        self.channel_history: Dict[str, List[Tuple[int, int, int, int]]] = {}
        self.scripts: Dict[str, RentalScript] = {}

    def _submit(self, tx: Transaction) -> None:
        sender = tx.sender if tx.sender in self.sim.nodes else self.sim.clients[0]
        self.sim.submit_tx(sender, tx)

    def start(self) -> None:
        sim = self.sim
        for m in self.script.machines:
            sim.schedule(
                1.0,
                EV_MARKET,
                m.owner,
                (
                    lambda ms=m: self.market.publish_machine(
                        Machine(ms.machine_id, set(ms.capabilities), ms.owner),
                        int(sim.now),
                    )
                ),
            )
        for r in self.script.rentals:
            sim.schedule(r.submit_at_ms, EV_MARKET, r.customer, (lambda rs=r: self._request(rs)))

    def _request(self, rs: RentalScript) -> None:
        sim = self.sim
        self.scripts[rs.request_id] = rs
        self.market.submit_request(
            RentalRequest(
                request_id=rs.request_id,
                customer=rs.customer,
                required_capabilities=set(rs.capabilities),
                period=(rs.start_ms, rs.end_ms),
                offered_price=rs.price,
            ),
            int(sim.now),
        )
        self._try_match()

    def _try_match(self) -> None:
        """Contract-automatic matching; re-runs whenever machines free up."""
        sim = self.sim
        for agreement in self.market.match_requests(int(sim.now)):
            rs = self.scripts.pop(agreement.request_id)
            sim.schedule(
                float(max(agreement.period[0], sim.now + 1.0)),
                EV_MARKET,
                agreement.customer,
                (lambda a=agreement, r=rs: self._unlock(a, r)),
            )

    def _unlock(self, agreement, rs: RentalScript) -> None:
        sim = self.sim
        self.market.unlock_and_assign(agreement, int(sim.now))
        total = agreement.price * agreement.duration()
        if rs.use_channel:
            state, _tx = self.market.open_payment_channel(agreement, total, int(sim.now))
            self.channels[agreement.agreement_id] = state
        if rs.use_channel:
            state = self.channels[agreement.agreement_id]
            self._record_channel(agreement.agreement_id, state)
        start, end = agreement.period
        n = max(1, rs.progress_reports)
        step = (end - start) / (n + 1)
        for i in range(n):
            # a late match may unlock mid-period; never schedule into the past
            at = max(start + step * (i + 1), sim.now + 1.0 + i * 0.001)
            sim.schedule(
                at,
                EV_MARKET,
                agreement.customer,
                (lambda a=agreement, seq=i + 1, r=rs: self._progress(a, seq, r)),
            )
        sim.schedule(
            max(float(end), sim.now + 2.0 + n * 0.001),
            EV_MARKET,
            agreement.customer,
            (lambda a=agreement, r=rs: self._settle(a, r)),
        )

    def _progress(self, agreement, seq: int, rs: RentalScript) -> None:
        sim = self.sim
        blob = Marketplace.progress_blob(agreement.agreement_id, seq)
        self.market.record_job_progress(agreement, blob, int(sim.now))
        if rs.use_channel:
            state = self.channels[agreement.agreement_id]
            total = agreement.price * agreement.duration()
            n = max(1, rs.progress_reports)
            slice_amount = (total * seq) // n - (total * (seq - 1)) // n
            if slice_amount > 0:
                state = channel_update(state, slice_amount)
                self.channels[agreement.agreement_id] = state
                self._record_channel(agreement.agreement_id, state)
                sim.deliver(agreement.customer, agreement.operator, CHANNEL_UPDATE_BYTES)
                sim.deliver(agreement.operator, agreement.customer, CHANNEL_ACK_BYTES)

    def _settle(self, agreement, rs: RentalScript) -> None:
        sim = self.sim
        if rs.use_channel:
            state = self.channels[agreement.agreement_id]
            total = agreement.price * agreement.duration()
            if state.balance_b < total:
                state = channel_update(state, total - state.balance_b)
                self.channels[agreement.agreement_id] = state
                self._record_channel(agreement.agreement_id, state)
                sim.deliver(agreement.customer, agreement.operator, CHANNEL_UPDATE_BYTES)
                sim.deliver(agreement.operator, agreement.customer, CHANNEL_ACK_BYTES)
            self.market.complete_and_settle(agreement, int(sim.now), state)
        else:
            self.market.complete_and_settle(agreement, int(sim.now))
        self._try_match()  # the freed machine may serve a queued request

    def _record_channel(self, agreement_id: str, state) -> None:
        self.channel_history.setdefault(agreement_id, []).append(
            (state.seq, state.balance_a, state.balance_b, int(self.sim.now))
        )

    def channel_history_rows(self) -> List[Tuple[str, int, int, int, int]]:
        """(channel_id, seq, balance_a, balance_b, time_ms) across agreements."""
        rows = []
        for agreement_id in sorted(self.channel_history):
            for seq, bal_a, bal_b, t in self.channel_history[agreement_id]:
                rows.append((f"chan:{agreement_id}", seq, bal_a, bal_b, t))
        return rows


# --- public entry points ------------------------------------------------------------


def run_scenario(scenario: Scenario) -> MetricsReport:
    """Run one scenario to completion; deterministic for a fixed seed."""
    return Simulation(scenario).run()


@dataclass(frozen=True)
class SweepRow:
    platform: str
    managers: int
    clients: int
    load_tps: float
    validated_tps: float
    mean_latency_ms: float
    p99_latency_ms: float
    manager_bytes_per_tx: float
    client_bytes_per_tx: float


def sweep_cell(base: Scenario, managers: int, load_tps: float) -> Scenario:
    return replace(
        base,
        name=f"{base.name}-m{managers}-tps{load_tps:g}",
        managers=managers,
        input_tps=load_tps,
        tps_is_total=True,
    )


def row_from_report(report: MetricsReport, load_tps: float) -> SweepRow:
    from .metrics import overhead_per_tx

    overhead = overhead_per_tx(report, report.finalized)
    return SweepRow(
        platform=report.platform,
        managers=report.managers,
        clients=report.clients,
        load_tps=load_tps,
        validated_tps=report.validated_tps,
        mean_latency_ms=report.latency.mean_ms if report.latency else 0.0,
        p99_latency_ms=report.latency.p99_ms if report.latency else 0.0,
        manager_bytes_per_tx=overhead["manager"] or 0.0,
        client_bytes_per_tx=overhead["client"] or 0.0,
    )


def sweep_managers(
    base: Scenario, manager_counts: List[int], load_tps: List[float]
) -> List[SweepRow]:
    """One run per (managers, load) grid cell, row-major by managers."""
    rows = []
    for m in manager_counts:
        for load in load_tps:
            report = run_scenario(sweep_cell(base, m, load))
            rows.append(row_from_report(report, load))
    return rows

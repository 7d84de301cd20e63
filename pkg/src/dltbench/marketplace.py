"""Shared-manufacturing marketplace contract.

Machine registry, rental matching, unlock/assignment, job progress anchoring
and settlement. Every state transition emits a ledger transaction, so the
whole history is reconstructible by replaying the ledger alone (plus the
content store for job-progress blobs, whose 32-byte hashes are what the
ledger carries).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Set, Tuple

from .channels import ChannelState, close_channel, open_channel
from .ledger import (
    ContentStore,
    NodeId,
    Transaction,
    TxKind,
    make_transaction,
)


class MarketplaceError(Exception):
    pass


class DuplicateMachineId(MarketplaceError):
    pass


class InvalidPeriod(MarketplaceError):
    pass


class NonPositivePrice(MarketplaceError):
    pass


class WrongState(MarketplaceError):
    pass


class NotYetStartTime(MarketplaceError):
    pass


class BalanceMismatch(MarketplaceError):
    pass


class MachineStatus(Enum):
    AVAILABLE = "available"
    LOCKED = "locked"
    ASSIGNED = "assigned"
    EXECUTING = "executing"


class AgreementState(Enum):
    MATCHED = 1
    UNLOCKED = 2
    EXECUTING = 3
    COMPLETED = 4
    SETTLED = 5


@dataclass
class Machine:
    machine_id: str
    capabilities: Set[str]
    owner: NodeId
    status: MachineStatus = MachineStatus.AVAILABLE


@dataclass
class RentalRequest:
    request_id: str
    customer: NodeId
    required_capabilities: Set[str]
    period: Tuple[int, int]  # (start_ms, end_ms)
    offered_price: int  # micro-units per time unit

    def validate(self) -> None:
        start, end = self.period
        if start >= end:
            raise InvalidPeriod(f"period start {start} must precede end {end}")
        if self.offered_price <= 0:
            raise NonPositivePrice(f"offered price must be positive, got {self.offered_price}")


@dataclass
class RentalAgreement:
    agreement_id: str
    machine_id: str
    customer: NodeId
    operator: NodeId
    period: Tuple[int, int]
    price: int
    state: AgreementState = AgreementState.MATCHED
    channel_id: Optional[str] = None
    control_token: Optional[str] = None
    request_id: Optional[str] = None
    t_matched: int = 0
    t_settled: Optional[int] = None
    amount_paid: Optional[int] = None

    def advance(self, new_state: AgreementState) -> None:
        if new_state.value <= self.state.value:
            raise WrongState(
                f"{self.agreement_id}: cannot move {self.state.name} -> {new_state.name}"
            )
        self.state = new_state

    def duration(self) -> int:
        return self.period[1] - self.period[0]


def _json_payload(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()


def _parse_json(raw: bytes):
    try:
        return json.loads(raw.decode())
    except (UnicodeDecodeError, ValueError):
        return None


class Marketplace:
    """Deterministic contract state machine over one machine registry.

    `submit` receives every emitted transaction; the driving harness routes
    it into whichever ledger is active. When replaying, emission is off.
    """

    def __init__(
        self,
        store: ContentStore,
        submit: Optional[Callable[[Transaction], None]] = None,
    ) -> None:
        self.store = store
        self.submit = submit
        self.machines: Dict[str, Machine] = {}
        self.pending: List[RentalRequest] = []
        self.agreements: Dict[str, RentalAgreement] = {}
        self.bookings: Dict[str, List[Tuple[int, int]]] = {}
        self._agreement_seq = 0
        self._progress_seq: Dict[str, int] = {}
        self._emitting = True

    # -- emission ------------------------------------------------------------

    def _emit(self, tx: Transaction) -> Transaction:
        if self._emitting and self.submit is not None:
            self.submit(tx)
        return tx

    # -- step 1: publish -------------------------------------------------------

    def publish_machine(self, machine: Machine, now_ms: int = 0) -> Transaction:
        if machine.machine_id in self.machines:
            raise DuplicateMachineId(machine.machine_id)
        self.machines[machine.machine_id] = machine
        self.bookings[machine.machine_id] = []
        payload = _json_payload(
            {
                "op": "publish",
                "machine_id": machine.machine_id,
                "capabilities": sorted(machine.capabilities),
                "owner": machine.owner,
            }
        )
        return self._emit(
            make_transaction(machine.owner, TxKind.MACHINE_PUBLISH, payload, now_ms)
        )

    # -- step 2: request -------------------------------------------------------

    def submit_request(self, req: RentalRequest, now_ms: int = 0) -> Transaction:
        req.validate()
        self.pending.append(req)
        payload = _json_payload(
            {
                "op": "request",
                "request_id": req.request_id,
                "customer": req.customer,
                "capabilities": sorted(req.required_capabilities),
                "start": req.period[0],
                "end": req.period[1],
                "price": req.offered_price,
            }
        )
        return self._emit(
            make_transaction(req.customer, TxKind.RENTAL_REQUEST, payload, now_ms)
        )

    # -- step 3: match ---------------------------------------------------------

    def _schedule_free(self, machine_id: str, period: Tuple[int, int]) -> bool:
        start, end = period
        return all(not (s < end and start < e) for (s, e) in self.bookings[machine_id])

    def match_requests(self, now_ms: int = 0) -> List[RentalAgreement]:
        """Greedy first-come-first-served; ties go to the lexicographically
        smallest available machine. Unmatched requests stay queued."""
        matched: List[RentalAgreement] = []
        still_pending: List[RentalRequest] = []
        for req in self.pending:
            choice = None
            for mid in sorted(self.machines):
                m = self.machines[mid]
                if (
                    m.status is MachineStatus.AVAILABLE
                    and req.required_capabilities <= m.capabilities
                    and self._schedule_free(mid, req.period)
                ):
                    choice = m
                    break
            if choice is None:
                still_pending.append(req)
                continue
            self._agreement_seq += 1
            agreement = RentalAgreement(
                agreement_id=f"agr-{self._agreement_seq:04d}",
                machine_id=choice.machine_id,
                customer=req.customer,
                operator=choice.owner,
                period=req.period,
                price=req.offered_price,
                request_id=req.request_id,
                t_matched=now_ms,
            )
            choice.status = MachineStatus.LOCKED
            self.bookings[choice.machine_id].append(req.period)
            self.agreements[agreement.agreement_id] = agreement
            matched.append(agreement)
            payload = _json_payload(
                {
                    "op": "match",
                    "agreement_id": agreement.agreement_id,
                    "machine_id": agreement.machine_id,
                    "customer": agreement.customer,
                    "operator": agreement.operator,
                    "start": req.period[0],
                    "end": req.period[1],
                    "price": req.offered_price,
                    "request_id": req.request_id,
                }
            )
            self._emit(
                make_transaction(agreement.operator, TxKind.DATA_ANCHOR, payload, now_ms)
            )
        self.pending = still_pending
        return matched

    # -- step 4: unlock ---------------------------------------------------------

    def unlock_and_assign(
        self, agreement: RentalAgreement, now_ms: int, tolerance_ms: int = 0
    ) -> Transaction:
        if agreement.state is not AgreementState.MATCHED:
            raise WrongState(f"{agreement.agreement_id} is {agreement.state.name}, not MATCHED")
        if now_ms < agreement.period[0] - tolerance_ms:
            raise NotYetStartTime(
                f"now {now_ms} is before period start {agreement.period[0]}"
            )
        machine = self.machines[agreement.machine_id]
        machine.status = MachineStatus.ASSIGNED
        agreement.control_token = f"token:{agreement.agreement_id}:{agreement.customer}"
        agreement.advance(AgreementState.UNLOCKED)
        payload = _json_payload(
            {
                "op": "unlock",
                "agreement_id": agreement.agreement_id,
                "token": agreement.control_token,
            }
        )
        return self._emit(
            make_transaction(agreement.operator, TxKind.DATA_ANCHOR, payload, now_ms)
        )

    # -- micro-payment channel (step 7 setup) -----------------------------------

    def open_payment_channel(
        self, agreement: RentalAgreement, deposit: int, now_ms: int
    ) -> Tuple[ChannelState, Transaction]:
        channel_id = f"chan:{agreement.agreement_id}"
        state, tx = open_channel(
            agreement.customer, agreement.operator, deposit, channel_id, now_ms
        )
        agreement.channel_id = channel_id
        self._emit(tx)
        return state, tx

    # -- steps 5-6: control and execute ------------------------------------------

    def record_job_progress(
        self, agreement: RentalAgreement, anchor: bytes, now_ms: int
    ) -> Transaction:
        if agreement.state not in (AgreementState.UNLOCKED, AgreementState.EXECUTING):
            raise WrongState(
                f"{agreement.agreement_id} is {agreement.state.name}; progress needs UNLOCKED/EXECUTING"
            )
        key = self.store.put(anchor)
        if agreement.state is AgreementState.UNLOCKED:
            agreement.advance(AgreementState.EXECUTING)
            self.machines[agreement.machine_id].status = MachineStatus.EXECUTING
        self._progress_seq[agreement.agreement_id] = (
            self._progress_seq.get(agreement.agreement_id, 0) + 1
        )
        # the ledger carries only the 32-byte content hash, never the blob
        return self._emit(
            make_transaction(agreement.customer, TxKind.DATA_ANCHOR, key, now_ms)
        )

    @staticmethod
    def progress_blob(agreement_id: str, seq: int, data: bytes = b"") -> bytes:
        """Blob convention for job progress: JSON header so replay can link
        an anchored hash back to its agreement via the content store."""
        return _json_payload(
            {"agreement_id": agreement_id, "seq": seq, "data": data.hex()}
        )

    # -- step 7: settle ------------------------------------------------------------

    def complete_and_settle(
        self,
        agreement: RentalAgreement,
        now_ms: int,
        channel_final: Optional[ChannelState] = None,
    ) -> Transaction:
        if agreement.state is not AgreementState.EXECUTING:
            raise WrongState(
                f"{agreement.agreement_id} is {agreement.state.name}, not EXECUTING"
            )
        expected = agreement.price * agreement.duration()
        if channel_final is not None:
            if agreement.channel_id != channel_final.channel_id:
                raise BalanceMismatch("channel does not belong to this agreement")
            if channel_final.balance_b != expected:
                raise BalanceMismatch(
                    f"operator balance {channel_final.balance_b} != price x time {expected}"
                )
            _, tx, _ = close_channel(channel_final, now_ms)
            amount = channel_final.balance_b
        else:
            payload = _json_payload(
                {"op": "settle", "agreement_id": agreement.agreement_id, "amount": expected}
            )
            tx = make_transaction(agreement.customer, TxKind.TRANSFER, payload, now_ms)
            amount = expected
        agreement.advance(AgreementState.COMPLETED)
        agreement.advance(AgreementState.SETTLED)
        agreement.t_settled = now_ms
        agreement.amount_paid = amount
        self.machines[agreement.machine_id].status = MachineStatus.AVAILABLE
        return self._emit(tx)

    # -- exports --------------------------------------------------------------

    def agreement_rows(self) -> List[Tuple[str, str, str, int, Optional[int], Optional[int]]]:
        """(agreement_id, machine_id, customer, t_matched, t_settled, amount)"""
        return [
            (a.agreement_id, a.machine_id, a.customer, a.t_matched, a.t_settled, a.amount_paid)
            for a in sorted(self.agreements.values(), key=lambda a: a.agreement_id)
        ]

    def snapshot(self) -> dict:
        """Comparable view of contract state for event-sourcing checks."""
        return {
            "machines": {
                m.machine_id: {
                    "status": m.status.value,
                    "owner": m.owner,
                    "capabilities": sorted(m.capabilities),
                    "bookings": sorted(self.bookings[m.machine_id]),
                }
                for m in self.machines.values()
            },
            "agreements": {
                a.agreement_id: {
                    "machine_id": a.machine_id,
                    "customer": a.customer,
                    "operator": a.operator,
                    "period": list(a.period),
                    "price": a.price,
                    "state": a.state.name,
                    "channel_id": a.channel_id,
                    "request_id": a.request_id,
                    "t_matched": a.t_matched,
                    "t_settled": a.t_settled,
                    "amount_paid": a.amount_paid,
                }
                for a in self.agreements.values()
            },
            "pending": [r.request_id for r in self.pending],
        }

    # -- event sourcing -----------------------------------------------------------

    @classmethod
    def replay(cls, txs: List[Transaction], store: ContentStore) -> "Marketplace":
        """Rebuild contract state from ledger transactions alone."""
        mp = cls(store=store, submit=None)
        mp._emitting = False
        by_channel: Dict[str, str] = {}
        matched_requests: Set[str] = set()
        for tx in txs:
            if tx.kind is TxKind.MACHINE_PUBLISH:
                body = json.loads(tx.payload.decode())
                mp.publish_machine(
                    Machine(
                        machine_id=body["machine_id"],
                        capabilities=set(body["capabilities"]),
                        owner=body["owner"],
                    ),
                    tx.created_at,
                )
            elif tx.kind is TxKind.RENTAL_REQUEST:
                body = json.loads(tx.payload.decode())
                # a match may legally finalize in the same block, ahead of
                # its request; such requests were consumed, not queued
                if body["request_id"] in matched_requests:
                    continue
                mp.submit_request(
                    RentalRequest(
                        request_id=body["request_id"],
                        customer=body["customer"],
                        required_capabilities=set(body["capabilities"]),
                        period=(body["start"], body["end"]),
                        offered_price=body["price"],
                    ),
                    tx.created_at,
                )
            elif tx.kind is TxKind.DATA_ANCHOR:
                if len(tx.payload) == 32:
                    blob = _parse_json(store.entries.get(tx.payload, b""))
                    if isinstance(blob, dict) and blob.get("agreement_id") in mp.agreements:
                        agreement = mp.agreements[blob["agreement_id"]]
                        mp.record_job_progress(agreement, store.get(tx.payload), tx.created_at)
                    continue
                body = _parse_json(tx.payload)
                if not isinstance(body, dict):
                    continue  # foreign anchor, not a contract record
                if body.get("op") == "match":
                    matched_requests.add(body["request_id"])
                    mp._agreement_seq += 1
                    agreement = RentalAgreement(
                        agreement_id=body["agreement_id"],
                        machine_id=body["machine_id"],
                        customer=body["customer"],
                        operator=body["operator"],
                        period=(body["start"], body["end"]),
                        price=body["price"],
                        request_id=body["request_id"],
                        t_matched=tx.created_at,
                    )
                    mp.agreements[agreement.agreement_id] = agreement
                    mp.machines[agreement.machine_id].status = MachineStatus.LOCKED
                    mp.bookings[agreement.machine_id].append(agreement.period)
                    mp.pending = [
                        r for r in mp.pending if r.request_id != body["request_id"]
                    ]
                elif body.get("op") == "unlock":
                    agreement = mp.agreements[body["agreement_id"]]
                    mp.unlock_and_assign(agreement, tx.created_at)
            elif tx.kind is TxKind.CHANNEL_OPEN:
                body = _parse_json(tx.payload)
                if not isinstance(body, dict) or "channel_id" not in body:
                    continue
                cid = body["channel_id"]
                if cid.startswith("chan:"):
                    agid = cid.split(":", 1)[1]
                    if agid in mp.agreements:
                        mp.agreements[agid].channel_id = cid
                        by_channel[cid] = agid
            elif tx.kind is TxKind.CHANNEL_CLOSE:
                body = _parse_json(tx.payload)
                if not isinstance(body, dict):
                    continue
                agid = by_channel.get(body.get("channel_id"))
                if agid is not None:
                    agreement = mp.agreements[agid]
                    agreement.advance(AgreementState.COMPLETED)
                    agreement.advance(AgreementState.SETTLED)
                    agreement.t_settled = tx.created_at
                    agreement.amount_paid = body["balance_b"]
                    mp.machines[agreement.machine_id].status = MachineStatus.AVAILABLE
            elif tx.kind is TxKind.TRANSFER:
                body = _parse_json(tx.payload)
                if isinstance(body, dict) and body.get("op") == "settle":
                    agreement = mp.agreements[body["agreement_id"]]
                    agreement.advance(AgreementState.COMPLETED)
                    agreement.advance(AgreementState.SETTLED)
                    agreement.t_settled = tx.created_at
                    agreement.amount_paid = body["amount"]
                    mp.machines[agreement.machine_id].status = MachineStatus.AVAILABLE
        return mp

"""Layer-2 micro-payment channel.

Two on-chain transactions (open, close) bracket any number of off-chain
dual-signed balance updates. Funding is unidirectional: party A deposits
and pays party B. All amounts are integer micro-units; no floats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

from .ledger import NodeId, Transaction, TxKind, make_transaction, sign


class ChannelError(Exception):
    pass


class NonPositiveDeposit(ChannelError):
    pass


class InsufficientBalance(ChannelError):
    pass


class MissingSignature(ChannelError):
    pass


class BadSignature(ChannelError):
    pass


class AlreadyClosed(ChannelError):
    pass


class ReplayedSequence(ChannelError):
    pass


@dataclass(frozen=True)
class ChannelState:
    """One dual-signed channel snapshot; updates produce new snapshots."""

    channel_id: str
    party_a: NodeId
    party_b: NodeId
    deposit: int
    balance_a: int
    balance_b: int
    seq: int
    sig_a: bytes
    sig_b: bytes
    closed: bool = False

    def signing_message(self) -> bytes:
        return channel_message(
            self.channel_id, self.seq, self.balance_a, self.balance_b
        )


def channel_message(channel_id: str, seq: int, balance_a: int, balance_b: int) -> bytes:
    return b"chan" + json.dumps(
        [channel_id, seq, balance_a, balance_b], separators=(",", ":")
    ).encode()


def _signed_state(
    channel_id: str,
    party_a: NodeId,
    party_b: NodeId,
    deposit: int,
    balance_a: int,
    balance_b: int,
    seq: int,
    sign_a: bool = True,
    sign_b: bool = True,
) -> ChannelState:
    msg = channel_message(channel_id, seq, balance_a, balance_b)
    return ChannelState(
        channel_id=channel_id,
        party_a=party_a,
        party_b=party_b,
        deposit=deposit,
        balance_a=balance_a,
        balance_b=balance_b,
        seq=seq,
        sig_a=sign(party_a, msg) if sign_a else b"\x00" * 64,
        sig_b=sign(party_b, msg) if sign_b else b"\x00" * 64,
    )


def signatures_valid(state: ChannelState) -> bool:
    msg = state.signing_message()
    return state.sig_a == sign(state.party_a, msg) and state.sig_b == sign(
        state.party_b, msg
    )


def open_channel(
    party_a: NodeId,
    party_b: NodeId,
    deposit: int,
    channel_id: str,
    created_at: int = 0,
) -> Tuple[ChannelState, Transaction]:
    """Fund a channel: A deposits, balances start (deposit, 0) at seq 0.

    Emits exactly one on-chain ChannelOpen transaction.
    """
    if deposit <= 0:
        raise NonPositiveDeposit(f"deposit must be positive, got {deposit}")
    state = _signed_state(channel_id, party_a, party_b, deposit, deposit, 0, 0)
    payload = json.dumps(
        {"channel_id": channel_id, "party_a": party_a, "party_b": party_b, "deposit": deposit},
        separators=(",", ":"),
        sort_keys=True,
    ).encode()
    tx = make_transaction(party_a, TxKind.CHANNEL_OPEN, payload, created_at)
    return state, tx


def update(
    state: ChannelState,
    transfer_to_b: int,
    sign_a: bool = True,
    sign_b: bool = True,
) -> ChannelState:
    """Move transfer_to_b micro-units from A to B off-chain; seq increments.

    No ledger transaction is emitted; the new state carries fresh dual
    signatures over (channel_id, seq, balance_a, balance_b).
    """
    if state.closed:
        raise AlreadyClosed(state.channel_id)
    if not (sign_a and sign_b):
        raise MissingSignature("both parties must sign a channel update")
    if transfer_to_b <= 0 or transfer_to_b > state.balance_a:
        raise InsufficientBalance(
            f"transfer {transfer_to_b} not in (0, {state.balance_a}]"
        )
    return _signed_state(
        state.channel_id,
        state.party_a,
        state.party_b,
        state.deposit,
        state.balance_a - transfer_to_b,
        state.balance_b + transfer_to_b,
        state.seq + 1,
    )


def accept_update(current: ChannelState, candidate: ChannelState) -> ChannelState:
    """Receiver-side acceptance: reject stale sequence numbers and bad MACs."""
    if current.closed:
        raise AlreadyClosed(current.channel_id)
    if candidate.channel_id != current.channel_id:
        raise ChannelError("update for a different channel")
    if candidate.seq <= current.seq:
        raise ReplayedSequence(
            f"seq {candidate.seq} <= current {current.seq}"
        )
    if candidate.balance_a + candidate.balance_b != current.deposit:
        raise ChannelError("balances do not conserve the deposit")
    if not signatures_valid(candidate):
        raise BadSignature(candidate.channel_id)
    return candidate


def close_channel(
    state: ChannelState, closed_at: int = 0
) -> Tuple[ChannelState, Transaction, Tuple[int, int]]:
    """Cooperative close: settle the submitted dual-signed state on-chain.

    Returns (closed state, the single ChannelClose transaction, payouts).
    """
    if state.closed:
        raise AlreadyClosed(state.channel_id)
    if not signatures_valid(state):
        raise BadSignature(state.channel_id)
    payload = json.dumps(
        {
            "channel_id": state.channel_id,
            "seq": state.seq,
            "balance_a": state.balance_a,
            "balance_b": state.balance_b,
        },
        separators=(",", ":"),
        sort_keys=True,
    ).encode()
    tx = make_transaction(state.party_b, TxKind.CHANNEL_CLOSE, payload, closed_at)
    closed = replace(state, closed=True)
    return closed, tx, (state.balance_a, state.balance_b)


def on_chain_tx_count(txs: List[Transaction], channel_id: str) -> int:
    """Count ledger transactions belonging to one channel's lifetime."""
    n = 0
    for tx in txs:
        if tx.kind in (TxKind.CHANNEL_OPEN, TxKind.CHANNEL_CLOSE):
            try:
                body = json.loads(tx.payload.decode())
            except (UnicodeDecodeError, ValueError):
                continue
            if body.get("channel_id") == channel_id:
                n += 1
    return n


def channel_history_rows(states: List[ChannelState], times: Optional[List[int]] = None):
    """CSV-friendly rows: (seq, balance_a, balance_b, time_ms)."""
    rows = []
    for i, st in enumerate(states):
        t = times[i] if times is not None else 0
        rows.append((st.seq, st.balance_a, st.balance_b, t))
    return rows

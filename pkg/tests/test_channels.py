import random
from dataclasses import replace

import pytest

from dltbench.channels import (
    AlreadyClosed,
    BadSignature,
    InsufficientBalance,
    MissingSignature,
    NonPositiveDeposit,
    ReplayedSequence,
    accept_update,
    channel_history_rows,
    close_channel,
    on_chain_tx_count,
    open_channel,
    signatures_valid,
    update,
)
from dltbench.ledger import TxKind


def fresh(deposit=1000, cid="chan-1"):
    state, tx = open_channel("alice", "bob", deposit, cid)
    return state, tx


class TestOpen:
    def test_initial_state(self):
        state, tx = fresh()
        assert (state.balance_a, state.balance_b) == (1000, 0)
        assert state.seq == 0
        assert tx.kind is TxKind.CHANNEL_OPEN
        assert signatures_valid(state)

    def test_zero_deposit_rejected(self):
        with pytest.raises(NonPositiveDeposit):
            open_channel("a", "b", 0, "c")

    def test_two_opens_distinct_ids(self):
        s1, _ = open_channel("a", "b", 10, "chan-x")
        s2, _ = open_channel("a", "b", 10, "chan-y")
        assert s1.channel_id != s2.channel_id


class TestUpdate:
    def test_single_transfer(self):
        state, _ = fresh()
        nxt = update(state, 1)
        assert (nxt.balance_a, nxt.balance_b) == (999, 1)
        assert nxt.seq == 1
        assert signatures_valid(nxt)

    def test_overdraw_rejected(self):
        state, _ = fresh()
        with pytest.raises(InsufficientBalance):
            update(state, 1001)
        with pytest.raises(InsufficientBalance):
            update(state, 0)

    def test_missing_signature(self):
        state, _ = fresh()
        with pytest.raises(MissingSignature):
            update(state, 5, sign_b=False)

    def test_500_sequential_transfers_zero_on_chain(self):
        state, open_tx = fresh()
        ledger = [open_tx]
        for _ in range(500):
            state = update(state, 1)
        assert (state.balance_a, state.balance_b) == (500, 500)
        assert state.seq == 500
        assert on_chain_tx_count(ledger, state.channel_id) == 1  # only the open

    def test_conservation_random_walk(self):
        rng = random.Random(404)
        state, _ = fresh(deposit=10_000)
        for _ in range(300):
            if state.balance_a == 0:
                break
            state = update(state, rng.randrange(1, state.balance_a + 1))
            assert state.balance_a + state.balance_b == 10_000

    def test_replay_rejected(self):
        state, _ = fresh()
        s1 = update(state, 10)
        s2 = update(s1, 10)
        accepted = accept_update(s1, s2)
        assert accepted.seq == 2
        with pytest.raises(ReplayedSequence):
            accept_update(s2, s1)
        with pytest.raises(ReplayedSequence):
            accept_update(s2, s2)


class TestClose:
    def test_cooperative_close(self):
        state, open_tx = fresh()
        for _ in range(500):
            state = update(state, 1)
        closed, close_tx, payout = close_channel(state)
        assert payout == (500, 500)
        assert close_tx.kind is TxKind.CHANNEL_CLOSE
        assert on_chain_tx_count([open_tx, close_tx], state.channel_id) == 2

    def test_double_close(self):
        state, _ = fresh()
        closed, _, _ = close_channel(state)
        with pytest.raises(AlreadyClosed):
            close_channel(closed)

    def test_update_after_close(self):
        state, _ = fresh()
        closed, _, _ = close_channel(state)
        with pytest.raises(AlreadyClosed):
            update(closed, 1)

    def test_tampered_balance_stale_signature(self):
        state, _ = fresh()
        s1 = update(state, 100)
        forged = replace(s1, balance_b=900, balance_a=100)  # signatures now stale
        with pytest.raises(BadSignature):
            close_channel(forged)

    def test_settlement_pays_highest_seq_state(self):
        state, _ = fresh()
        s1 = update(state, 100)
        s2 = update(s1, 200)
        _, _, payout = close_channel(s2)
        assert payout == (700, 300)


class TestConstantOnChainCost:
    @pytest.mark.parametrize("n_updates", [0, 1, 100, 1000])
    def test_exactly_two_onchain_txs(self, n_updates):
        state, open_tx = open_channel("cust", "oper", 2000, f"chan-{n_updates}")
        ledger = [open_tx]
        for _ in range(n_updates):
            state = update(state, 1)
        _, close_tx, payout = close_channel(state)
        ledger.append(close_tx)
        assert on_chain_tx_count(ledger, state.channel_id) == 2
        assert sum(payout) == 2000

    def test_ten_channels_hundred_updates(self):
        ledger = []
        for i in range(10):
            state, open_tx = open_channel("a", "b", 500, f"bulk-{i}")
            ledger.append(open_tx)
            for _ in range(100):
                state = update(state, 1)
            _, close_tx, _ = close_channel(state)
            ledger.append(close_tx)
        assert len(ledger) == 20
        for i in range(10):
            assert on_chain_tx_count(ledger, f"bulk-{i}") == 2


def test_history_rows():
    state, _ = fresh()
    states = [state]
    for _ in range(3):
        states.append(update(states[-1], 10))
    rows = channel_history_rows(states, times=[0, 5, 10, 15])
    assert rows[0] == (0, 1000, 0, 0)
    assert rows[-1] == (3, 970, 30, 15)

from typing import List, Tuple

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import conftest
from xcsim.auth import (
    FINALITY_DEPTH,
    AdmissionController,
    AdmissionDecision,
    CapacityTracker,
    CollateralLedger,
    EntryStatus,
    FeeSchedule,
    Settlement,
    SettleKind,
    XChainMempool,
)
from xcsim.encoding import Address, ChainId
from xcsim.errors import (
    AdmissionRefused,
    DoubleSettle,
    InsufficientCollateral,
    InsufficientFunds,
    UnknownRequest,
)

SOURCE = ChainId.from_name("B")
TARGET = ChainId.from_name("A")
USER = (SOURCE, Address.from_int(0xE0A))
SCHEDULE = FeeSchedule(10, 1, 2)


def ledger(balance: int = 1000, collateral: int = 10_000) -> CollateralLedger:
    ledger = CollateralLedger()
    ledger.deposit(USER, balance)
    ledger.open_account(SOURCE, TARGET, collateral)
    return ledger


def rid(n: int) -> bytes:
    return n.to_bytes(32, "big")


def test_fee_schedule() -> None:
    assert SCHEDULE.fee_fn(0) == 10
    assert SCHEDULE.fee_fn(5) == 15
    assert FeeSchedule(10, 1, 2, multiplier=3).fee_fn(5) == 25
    assert SCHEDULE.estimate_cd(declared_writes=1) == 3
    with pytest.raises(ValueError):
        FeeSchedule(0, 1, 1)


def test_lock_moves_fee_into_collateral() -> None:
    l = ledger()
    assert l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET) == 15
    assert l.balance(USER) == 985
    assert l.account(SOURCE, TARGET).locked == {rid(1): 15}
    assert l.is_live(rid(1))
    assert l.total() == l.funded


def test_lock_refused_without_funds() -> None:
    l = ledger(balance=14)
    with pytest.raises(InsufficientFunds):
        l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET)
    assert l.balance(USER) == 14


def test_lock_refused_without_collateral() -> None:
    l = ledger(collateral=20)
    l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET)
    with pytest.raises(InsufficientCollateral):
        l.lock_fee(USER, rid(2), 5, SCHEDULE, TARGET)
    with pytest.raises(InsufficientCollateral):
        l.lock_fee(USER, rid(3), 0, SCHEDULE, SOURCE)


def test_settle_executed() -> None:
    l = ledger()
    l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET)
    record = l.settle_or_refund(rid(1), Settlement.executed(4))
    assert (record.consumed, record.refunded, record.burned) == (4, 11, 0)
    assert l.balance(USER) == 996
    assert l.treasuries[SOURCE] == 4
    assert l.account(SOURCE, TARGET).balance == 10_000 - 4
    assert not l.is_live(rid(1))
    assert l.total() == l.funded


def test_settle_executed_is_capped_by_lock() -> None:
    l = ledger()
    l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET)
    record = l.settle_or_refund(rid(1), Settlement.executed(100))
    assert (record.consumed, record.refunded) == (15, 0)


def test_settle_failed_burns_base_fee() -> None:
    l = ledger()
    l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET)
    record = l.settle_or_refund(rid(1), Settlement.failed())
    assert (record.consumed, record.refunded, record.burned) == (0, 5, 10)
    assert l.balance(USER) == 990
    assert l.total() == l.funded


def test_settle_cancelled_refunds_everything() -> None:
    l = ledger()
    l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET)
    record = l.settle_or_refund(rid(1), Settlement.cancelled())
    assert record.kind == SettleKind.CANCELLED
    assert l.balance(USER) == 1000


def test_double_settle() -> None:
    l = ledger()
    l.lock_fee(USER, rid(1), 5, SCHEDULE, TARGET)
    l.settle_or_refund(rid(1), Settlement.executed(1))
    with pytest.raises(DoubleSettle):
        l.settle_or_refund(rid(1), Settlement.failed())
    with pytest.raises(UnknownRequest):
        l.settle_or_refund(rid(2), Settlement.failed())


def test_top_up() -> None:
    l = ledger(collateral=0)
    with pytest.raises(InsufficientFunds):
        l.top_up(SOURCE, TARGET, 50)
    l.fund_treasury(SOURCE, 50)
    l.top_up(SOURCE, TARGET, 50)
    assert l.account(SOURCE, TARGET).balance == 50
    assert l.total() == l.funded


operations = st.lists(
    st.tuples(
        st.integers(min_value=0, max_value=40),
        st.sampled_from(["executed", "failed", "cancelled", "open"]),
        st.integers(min_value=0, max_value=60),
    ),
    max_size=40,
)


@given(operations)
def test_fee_units_are_conserved(ops: List[Tuple[int, str, int]]) -> None:
    l = ledger(balance=500, collateral=300)
    for i, (cd, kind, actual) in enumerate(ops):
        try:
            l.lock_fee(USER, rid(i), cd, SCHEDULE, TARGET)
        except InsufficientFunds:
            continue
        if kind == "executed":
            l.settle_or_refund(rid(i), Settlement.executed(actual))
        elif kind == "failed":
            l.settle_or_refund(rid(i), Settlement.failed())
        elif kind == "cancelled":
            l.settle_or_refund(rid(i), Settlement.cancelled())
        assert l.total() == l.funded
        assert conftest.Helpers.fee_units(l) == 800
        account = l.account(SOURCE, TARGET)
        assert account.total_locked <= account.balance


@settings(max_examples=50)
@given(
    st.integers(min_value=0, max_value=2000),
    st.integers(min_value=1, max_value=50),
    st.lists(st.integers(min_value=0, max_value=100), min_size=1, max_size=300),
)
def test_admission_stops_at_capital(capital: int, f_base: int, costs: List[int]) -> None:
    schedule = FeeSchedule(f_base, 1, 1)
    l = CollateralLedger()
    l.deposit(USER, capital)
    l.open_account(SOURCE, TARGET, 10**9)
    admission = AdmissionController(l, schedule)
    accepted = 0
    for i, cost in enumerate(costs):
        decision = admission.admission_check(USER, rid(i), cost, TARGET)
        if not decision.accepted:
            break
        accepted += 1
        assert decision.total_cost <= capital
    assert accepted == conftest.n_star(capital, f_base, costs)
    assert admission.totals.get(USER, 0) <= capital


def test_admission_history() -> None:
    admission = AdmissionController(ledger(balance=29), SCHEDULE)
    assert admission.admission_check(USER, rid(1), 5, TARGET).accepted
    refused = admission.admission_check(USER, rid(2), 5, TARGET)
    assert not refused.accepted
    first, second = admission.history[USER]
    assert (first.n, first.fee, first.total_cost, first.accepted) == (1, 15, 15, True)
    assert (second.n, second.total_cost, second.accepted) == (2, 15, False)
    assert (admission.accepted, admission.refused) == (1, 1)


ACCEPT = AdmissionDecision(True, 10)


def test_mempool_refuses_without_admission() -> None:
    with pytest.raises(AdmissionRefused):
        XChainMempool().submit(b"tx", 0, AdmissionDecision(False, reason="no lock"))


@given(
    st.integers(min_value=0, max_value=1000),
    st.integers(min_value=0, max_value=20),
    st.booleans(),
)
def test_finality_after_six_blocks(included: int, waited: int, validated: bool) -> None:
    pool = XChainMempool()
    entry = pool.submit(b"tx", included, ACCEPT, via_compact=validated)
    finalized = pool.finalize_ready(included + waited)
    expected = conftest.Helpers.finalized(included, included + waited, validated)
    assert (entry in finalized) == expected
    assert (entry.status == EntryStatus.FINALIZED) == expected
    assert FINALITY_DEPTH == 6


def test_compact_validation_finalizes_at_once() -> None:
    pool = XChainMempool()
    pool.submit(b"a", 10, ACCEPT)
    pool.submit(b"b", 10, ACCEPT)
    pool.mark_validated(b"b")
    (entry,) = pool.finalize_ready(10)
    assert entry.tx_digest == b"b"
    pool.reject(b"a")
    assert pool.pending() == []


def test_settled_entries_leave_the_pool() -> None:
    pool = XChainMempool()
    for digest in (b"a", b"b", b"c"):
        pool.submit(digest, 3, ACCEPT)
    pool.reject(b"a")
    assert sorted(pool.entries) == [b"b", b"c"]
    (entry, _) = pool.finalize_ready(3 + FINALITY_DEPTH)
    assert entry.status == EntryStatus.FINALIZED
    assert entry.finalized_height == 9
    assert pool.entries == {}
    assert pool.settled == {EntryStatus.FINALIZED: 2, EntryStatus.REJECTED: 1}
    # a settled digest is no longer known to the pool
    with pytest.raises(KeyError):
        pool.reject(b"b")


def test_capacity_tracker() -> None:
    tracker = CapacityTracker(window=10, comp_max=20)
    for tick in range(0, 5):
        tracker.record(tick, 5)
    tracker.record(12, 5)
    assert tracker.load(3) == 25
    assert tracker.load(15) == 5
    assert tracker.max_load() == 25
    assert tracker.exceeded()
    assert not CapacityTracker(10).exceeded()

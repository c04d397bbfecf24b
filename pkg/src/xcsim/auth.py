#!/usr/bin/env python3
"""
Cross-chain authorization layer: the XChain mempool with its finalization
rule, the collateral ledger that holds prepaid execution fees, and the
admission check that turns fee locks into accept/refuse decisions.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from intervaltree import Interval, IntervalTree

from .encoding import Address, ChainId
from .errors import (
    AdmissionRefused,
    DoubleSettle,
    InsufficientCollateral,
    InsufficientFunds,
    UnknownRequest,
)

log = logging.getLogger(__name__)

FINALITY_DEPTH = 6

# (chain the account lives on, account address)
Holder = Tuple[ChainId, Address]


@dataclass(frozen=True)
class FeeSchedule:
    f_base: int
    per_call: int
    per_write: int
    # fee_fn(C_d) = f_base + multiplier * C_d
    multiplier: int = 1

    def __post_init__(self) -> None:
        if self.f_base <= 0:
            raise ValueError(f"f_base must be positive, got {self.f_base}")
        if self.per_call < 0 or self.per_write < 0:
            raise ValueError("per-call and per-write costs must not be negative")
        if self.multiplier < 1:
            raise ValueError(f"multiplier must be >= 1, got {self.multiplier}")

    def fee_fn(self, estimated_cd: int) -> int:
        assert estimated_cd >= 0
        return self.f_base + self.multiplier * estimated_cd

    def call_cost(self, calls: int, writes: int) -> int:
        return self.per_call * calls + self.per_write * writes

    def estimate_cd(self, declared_writes: int, calls: int = 1) -> int:
        return self.call_cost(calls, declared_writes)


class SettleKind(Enum):
    EXECUTED = "executed"
    FAILED = "failed"
    # the local transaction that took the lock reverted
    CANCELLED = "cancelled"


@dataclass(frozen=True)
class Settlement:
    kind: SettleKind
    actual_cost: int = 0

    @classmethod
    def executed(cls, actual_cost: int) -> "Settlement":
        return cls(SettleKind.EXECUTED, actual_cost)

    @classmethod
    def failed(cls) -> "Settlement":
        return cls(SettleKind.FAILED)

    @classmethod
    def cancelled(cls) -> "Settlement":
        return cls(SettleKind.CANCELLED)


@dataclass
class CollateralAccount:
    owner: ChainId
    host: ChainId
    balance: int
    locked: Dict[bytes, int] = field(default_factory=dict)

    @property
    def total_locked(self) -> int:
        return sum(self.locked.values())


@dataclass(frozen=True)
class LockRecord:
    request_id: bytes
    payer: Holder
    owner: ChainId
    host: ChainId
    amount: int
    f_base: int


@dataclass(frozen=True)
class SettlementRecord:
    request_id: bytes
    kind: SettleKind
    locked: int
    consumed: int
    refunded: int
    burned: int


class CollateralLedger:
    """
    Fee units live in exactly one of: user balances, chain treasuries,
    collateral account balances, collateral locks, or the consumed-cost sink.
    `total()` is therefore constant under every operation except funding.
    """

    def __init__(self) -> None:
        self.balances: Dict[Holder, int] = {}
        self.accounts: Dict[Tuple[ChainId, ChainId], CollateralAccount] = {}
        self.treasuries: Dict[ChainId, int] = {}
        self.sink = 0
        self.locks: Dict[bytes, LockRecord] = {}
        self.settled: Dict[bytes, SettlementRecord] = {}
        self.funded = 0

    def deposit(self, holder: Holder, amount: int) -> None:
        assert amount >= 0
        self.balances[holder] = self.balances.get(holder, 0) + amount
        self.funded += amount

    def open_account(self, owner: ChainId, host: ChainId, amount: int) -> None:
        assert amount >= 0
        if (owner, host) in self.accounts:
            raise ValueError(f"collateral account {owner.short()}@{host.short()} exists")
        self.accounts[(owner, host)] = CollateralAccount(owner, host, amount)
        self.funded += amount

    def fund_treasury(self, owner: ChainId, amount: int) -> None:
        assert amount >= 0
        self.treasuries[owner] = self.treasuries.get(owner, 0) + amount
        self.funded += amount

    def top_up(self, owner: ChainId, host: ChainId, amount: int) -> None:
        """
        Move fee units from the owner chain's treasury into its collateral
        account on `host`.
        """
        available = self.treasuries.get(owner, 0)
        if amount > available:
            raise InsufficientFunds(
                f"treasury of {owner.short()} holds {available}, top-up needs {amount}"
            )
        account = self.account(owner, host)
        self.treasuries[owner] = available - amount
        account.balance += amount
        log.info(f"top-up {owner.short()}@{host.short()} +{amount} -> {account.balance}")

    def account(self, owner: ChainId, host: ChainId) -> CollateralAccount:
        try:
            return self.accounts[(owner, host)]
        except KeyError:
            raise InsufficientCollateral(
                f"no collateral account for {owner.short()} on {host.short()}"
            )

    def balance(self, holder: Holder) -> int:
        return self.balances.get(holder, 0)

    def is_live(self, request_id: bytes) -> bool:
        return request_id in self.locks

    def total(self) -> int:
        return (
            sum(self.balances.values())
            + sum(self.treasuries.values())
            + sum(a.balance + a.total_locked for a in self.accounts.values())
            + self.sink
        )

    def lock_fee(
        self,
        sender: Holder,
        request_id: bytes,
        estimated_cd: int,
        schedule: FeeSchedule,
        host: ChainId,
    ) -> int:
        """
        Lock F = fee_fn(estimated_cd) from `sender` into the collateral account
        that the sender's chain holds on `host`.
        """
        if request_id in self.locks or request_id in self.settled:
            raise ValueError(f"request 0x{request_id.hex()} already has a lock")
        fee = schedule.fee_fn(estimated_cd)
        balance = self.balance(sender)
        if balance < fee:
            raise InsufficientFunds(f"balance {balance} < required fee {fee}")
        owner = sender[0]
        account = self.account(owner, host)
        if account.balance < account.total_locked + fee:
            raise InsufficientCollateral(
                f"collateral {account.balance} cannot cover "
                f"{account.total_locked} locked + {fee}"
            )
        self.balances[sender] = balance - fee
        account.locked[request_id] = fee
        self.locks[request_id] = LockRecord(
            request_id, sender, owner, host, fee, schedule.f_base
        )
        return fee

    def settle_or_refund(self, request_id: bytes, outcome: Settlement) -> SettlementRecord:
        if request_id in self.settled:
            raise DoubleSettle(f"request 0x{request_id.hex()} was already settled")
        lock = self.locks.pop(request_id, None)
        if lock is None:
            raise UnknownRequest(f"no lock for request 0x{request_id.hex()}")
        account = self.accounts[(lock.owner, lock.host)]
        del account.locked[request_id]

        consumed = burned = 0
        if outcome.kind == SettleKind.EXECUTED:
            consumed = min(outcome.actual_cost, lock.amount)
            # the lock reimburses the source chain, the collateral on the
            # destination pays the executors
            self.treasuries[lock.owner] = self.treasuries.get(lock.owner, 0) + consumed
            account.balance -= consumed
            self.sink += consumed
        elif outcome.kind == SettleKind.FAILED:
            burned = min(lock.f_base, lock.amount)
            self.sink += burned
        refunded = lock.amount - consumed - burned
        self.balances[lock.payer] = self.balance(lock.payer) + refunded

        record = SettlementRecord(
            request_id, outcome.kind, lock.amount, consumed, refunded, burned
        )
        self.settled[request_id] = record
        log.debug(
            f"settled 0x{request_id.hex()[:8]} {outcome.kind.value}: "
            f"consumed={consumed} refunded={refunded} burned={burned}"
        )
        return record


@dataclass(frozen=True)
class AdmissionDecision:
    accepted: bool
    fee: int = 0
    reason: str = ""
    # T(n) of the sender after this decision
    total_cost: int = 0
    window_load: int = 0


@dataclass(frozen=True)
class AdmissionRecord:
    n: int
    c_i: int
    fee: int
    total_cost: int
    accepted: bool
    balance_after: int


class AdmissionController:
    def __init__(self, ledger: CollateralLedger, schedule: FeeSchedule) -> None:
        self.ledger = ledger
        self.schedule = schedule
        self.totals: Dict[Holder, int] = {}
        self.history: Dict[Holder, List[AdmissionRecord]] = {}
        self.accepted = 0
        self.refused = 0

    def admission_check(
        self,
        sender: Holder,
        request_id: bytes,
        estimated_cd: int,
        host: ChainId,
        window_load: int = 0,
    ) -> AdmissionDecision:
        """
        Accepts iff the fee lock succeeds; refusal is returned, not raised.
        """
        history = self.history.setdefault(sender, [])
        try:
            fee = self.ledger.lock_fee(
                sender, request_id, estimated_cd, self.schedule, host
            )
        except InsufficientFunds as e:
            self.refused += 1
            total = self.totals.get(sender, 0)
            history.append(
                AdmissionRecord(
                    len(history) + 1,
                    estimated_cd,
                    self.schedule.fee_fn(estimated_cd),
                    total,
                    False,
                    self.ledger.balance(sender),
                )
            )
            log.info(f"admission refused for {sender[1]}: {e}")
            return AdmissionDecision(False, 0, str(e), total, window_load)

        self.accepted += 1
        total = self.totals.get(sender, 0) + fee
        self.totals[sender] = total
        history.append(
            AdmissionRecord(
                len(history) + 1,
                estimated_cd,
                fee,
                total,
                True,
                self.ledger.balance(sender),
            )
        )
        return AdmissionDecision(True, fee, "", total, window_load + estimated_cd)


class EntryStatus(Enum):
    PENDING = "Pending"
    FINALIZED = "Finalized"
    REJECTED = "Rejected"


@dataclass
class XChainMempoolEntry:
    tx_digest: bytes
    inclusion_height: int
    via_compact: bool = False
    status: EntryStatus = EntryStatus.PENDING
    request_id: bytes = b""
    finalized_height: Optional[int] = None

    def depth(self, current_height: int) -> int:
        return current_height - self.inclusion_height


class XChainMempool:
    """
    Pool of inbound cross-chain transactions, kept apart from the local
    transaction queue. An entry finalizes six blocks after inclusion, or at
    once when it was committed on the compact chain first. Finalized and
    rejected entries leave the pool; only their counts are kept.
    """

    def __init__(self) -> None:
        self.entries: Dict[bytes, XChainMempoolEntry] = {}
        self.settled: Dict[EntryStatus, int] = {
            EntryStatus.FINALIZED: 0,
            EntryStatus.REJECTED: 0,
        }

    def submit(
        self,
        tx_digest: bytes,
        current_height: int,
        admission: AdmissionDecision,
        via_compact: bool = False,
        request_id: bytes = b"",
    ) -> XChainMempoolEntry:
        if not admission.accepted:
            raise AdmissionRefused(admission.reason)
        if tx_digest in self.entries:
            raise ValueError(f"transaction 0x{tx_digest.hex()} already submitted")
        entry = XChainMempoolEntry(
            tx_digest, current_height, via_compact, request_id=request_id
        )
        self.entries[tx_digest] = entry
        return entry

    def mark_validated(self, tx_digest: bytes) -> None:
        self.entries[tx_digest].via_compact = True

    def reject(self, tx_digest: bytes) -> None:
        entry = self.entries.pop(tx_digest)
        assert entry.status == EntryStatus.PENDING
        entry.status = EntryStatus.REJECTED
        self.settled[EntryStatus.REJECTED] += 1

    def pending(self) -> List[XChainMempoolEntry]:
        return [e for e in self.entries.values() if e.status == EntryStatus.PENDING]

    def finalize_ready(self, current_height: int) -> List[XChainMempoolEntry]:
        finalized = []
        for entry in self.pending():
            if entry.via_compact or entry.depth(current_height) >= FINALITY_DEPTH:
                entry.status = EntryStatus.FINALIZED
                entry.finalized_height = current_height
                del self.entries[entry.tx_digest]
                self.settled[EntryStatus.FINALIZED] += 1
                finalized.append(entry)
        return finalized


class CapacityTracker:
    """
    Destination execution load over time. Each execution occupies the tick
    interval it ran in; a window's load is the cost of everything that
    overlaps it.
    """

    def __init__(self, window: int, comp_max: Optional[int] = None) -> None:
        if window <= 0:
            raise ValueError(f"window must be positive, got {window}")
        self.window = window
        self.comp_max = comp_max
        self.tree = IntervalTree()

    def record(self, tick: int, cost: int, duration: int = 1) -> None:
        if cost > 0:
            self.tree.add(Interval(tick, tick + duration, cost))

    def window_of(self, tick: int) -> Interval:
        start = tick - tick % self.window
        return Interval(start, start + self.window)

    def load(self, tick: int) -> int:
        w = self.window_of(tick)
        return sum(iv.data for iv in self.tree.overlap(w.begin, w.end))

    def max_load(self) -> int:
        if not self.tree:
            return 0
        start = self.window_of(self.tree.begin()).begin
        return max(
            self.load(t) for t in range(start, self.tree.end(), self.window)
        )

    def exceeded(self) -> bool:
        return self.comp_max is not None and self.max_load() > self.comp_max

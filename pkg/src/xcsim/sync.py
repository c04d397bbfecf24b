#!/usr/bin/env python3
"""
Keeps a main chain and its compact chain in agreement: authorized writes on
the main chain are copied into S_compact block by block, and every write set
committed on the compact chain is replayed into S_main as a SyncMirror
transaction.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .chain import (
    MIRROR_SELECTOR,
    SYSTEM_SENDER,
    Block,
    ChainState,
    Transaction,
    TxKind,
)
from .compact import (
    CompactBlock,
    CompactChain,
    CompactEntry,
    CompactExecution,
    CompactState,
    ExposurePolicy,
    Origin,
    StorageKey,
)
from .encoding import Address, ChainId, decode_words, encode_words
from .errors import HeightGap

log = logging.getLogger(__name__)

# mirrors only replay stored words, the limit just has to be positive
MIRROR_GAS_LIMIT = 1

Mismatch = Tuple[Address, int, int, int]


@dataclass(frozen=True)
class SyncReport:
    checked_keys: int
    mismatches: Tuple[Mismatch, ...]
    heights: Tuple[int, int]

    @property
    def consistent(self) -> bool:
        return not self.mismatches


@dataclass(frozen=True)
class ConflictRecord:
    tick: int
    chain: ChainId
    address: Address
    key: int
    winner: str = "mirror"

    def csv_row(self) -> List[str]:
        return [str(self.tick), str(self.chain), str(self.address), str(self.key), self.winner]


@dataclass(frozen=True)
class MirrorFailure:
    """
    A SyncMirror transaction the main chain refused to apply.
    """

    height: int
    tx_digest: bytes
    error: Optional[str]


@dataclass
class Synchronizer:
    chain: ChainState
    compact: CompactChain
    mirrored_height: int = 0
    in_flight: Dict[StorageKey, int] = field(default_factory=dict)
    conflicts: List[ConflictRecord] = field(default_factory=list)
    failures: List[MirrorFailure] = field(default_factory=list)
    mirror_nonce: int = 0

    @property
    def policy(self) -> ExposurePolicy:
        return self.compact.policy

    @property
    def quiescent(self) -> bool:
        return not self.in_flight

    def on_main_block(self, block: Block, tick: int = 0) -> CompactBlock:
        """
        Copy every authorized key the block wrote into S_compact. Keys with a
        mirror still in flight keep the compact value; the mirror overwrites
        the main value once it lands.
        """
        if block.height != self.mirrored_height + 1:
            raise HeightGap(
                f"chain {self.chain.chain_id.short()}: expected block "
                f"{self.mirrored_height + 1}, got {block.height}"
            )
        authorized = self.policy.authorized_keys()
        entries = []
        for receipt in block.receipts:
            if receipt.kind == TxKind.SYNC_MIRROR:
                self._landed(block, receipt.tx_digest, receipt.status, receipt.error)
                continue
            if not receipt.status:
                continue
            keys = []
            values = []
            for w in receipt.writes:
                key = (w.address, w.key)
                if key not in authorized:
                    continue
                if self.in_flight.get(key):
                    self.conflicts.append(
                        ConflictRecord(tick, self.chain.chain_id, w.address, w.key)
                    )
                    log.info(
                        f"sync {self.chain.chain_id.short()}: conflict on "
                        f"{w.address}:{w.key} at tick {tick}, mirror wins"
                    )
                    continue
                keys.append(key)
                values.append(w.value)
            if keys:
                entries.append(CompactEntry(receipt.tx_digest, tuple(keys), tuple(values)))

        for e in entries:
            for key, value in zip(e.keys, e.values):
                self.compact.state.s_compact[key] = value
        self.mirrored_height = block.height
        return self.compact.commit(entries, Origin.MAIN_SYNC)

    def _landed(
        self, block: Block, tx_digest: bytes, status: bool, error: Optional[str]
    ) -> None:
        for tx in block.transactions:
            if tx.digest != tx_digest:
                continue
            words = _mirror_keys(tx)
            for key in words:
                left = self.in_flight.get(key, 0) - 1
                if left > 0:
                    self.in_flight[key] = left
                else:
                    self.in_flight.pop(key, None)
            break
        if not status:
            self.failures.append(MirrorFailure(block.height, tx_digest, error))
            log.error(
                f"sync {self.chain.chain_id.short()}: mirror 0x{tx_digest.hex()[:8]} "
                f"rejected at height {block.height}: {error}"
            )

    def on_compact_exec(self, execution: CompactExecution) -> Optional[Transaction]:
        """
        The SyncMirror transaction replaying a committed compact write set,
        or None for executions that wrote nothing.
        """
        if not execution.committed or not execution.writes:
            return None
        target = execution.tx.target
        params = []
        for w in execution.writes:
            assert w.address == target, "compact execution wrote outside its target"
            params.extend([w.key, w.value])
            key = (w.address, w.key)
            self.in_flight[key] = self.in_flight.get(key, 0) + 1
        tx = Transaction(
            SYSTEM_SENDER,
            target,
            MIRROR_SELECTOR,
            encode_words(params),
            self.mirror_nonce,
            MIRROR_GAS_LIMIT,
            TxKind.SYNC_MIRROR,
        )
        self.mirror_nonce += 1
        log.debug(
            f"sync {self.chain.chain_id.short()}: mirror 0x{tx.digest.hex()[:8]} "
            f"with {len(execution.writes)} writes"
        )
        return tx


def _mirror_keys(tx: Transaction) -> List[StorageKey]:
    words = decode_words(tx.params)
    return [(tx.target, k) for k in words[::2]]


def verify_consistency(
    main: ChainState, compact: CompactState, policy: ExposurePolicy
) -> SyncReport:
    mismatches = []
    keys = sorted(policy.authorized_keys())
    for address, key in keys:
        main_value = main.load(address, key)
        compact_value = compact.s_compact.get((address, key), 0)
        if main_value != compact_value:
            mismatches.append((address, key, main_value, compact_value))
    return SyncReport(len(keys), tuple(mismatches), (main.height, compact.height))

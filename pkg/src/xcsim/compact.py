#!/usr/bin/env python3
"""
The compact chain: a per-chain sidechain that keeps only the storage words a
policy exposes for cross-chain use (S_compact). Inbound cross-chain calls run
here first; they never hold a handle to the main chain's storage.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, FrozenSet, List, Optional, Set, Tuple

from .auth import FeeSchedule
from .chain import (
    ChainState,
    FunctionTable,
    Storage,
    Transaction,
    TxKind,
    Write,
    execute,
)
from .encoding import Address, ChainId, Selector, digest, pack
from .errors import UnauthorizedTarget, UnknownContract, WriteToReadOnly

if TYPE_CHECKING:
    from .router import CrossChainCall

log = logging.getLogger(__name__)

StorageKey = Tuple[Address, int]

INBOUND_GAS_LIMIT = 1 << 32


class Mode(Enum):
    READ_ONLY = "ReadOnly"
    READ_WRITE = "ReadWrite"


@dataclass(frozen=True)
class ExposureEntry:
    contract: Address
    selector: Selector
    storage_keys: FrozenSet[int]
    mode: Mode


@dataclass(frozen=True)
class ExposurePolicy:
    entries: Tuple[ExposureEntry, ...] = ()

    def lookup(self, contract: Address, selector: Selector) -> Optional[ExposureEntry]:
        for entry in self.entries:
            if entry.contract == contract and entry.selector == selector:
                return entry
        return None

    def contracts(self) -> Set[Address]:
        return {e.contract for e in self.entries}

    def authorized_keys(self) -> Set[StorageKey]:
        return {(e.contract, k) for e in self.entries for k in e.storage_keys}

    def readable(self, contract: Address) -> Set[int]:
        return {k for e in self.entries if e.contract == contract for k in e.storage_keys}

    def writable(self) -> Set[StorageKey]:
        return {
            (e.contract, k)
            for e in self.entries
            if e.mode == Mode.READ_WRITE
            for k in e.storage_keys
        }


@dataclass
class CompactState:
    s_compact: Dict[StorageKey, int] = field(default_factory=dict)
    height: int = 0

    def digest(self) -> bytes:
        return digest(
            b"".join(
                pack(a.as_word(), k, self.s_compact[(a, k)])
                for a, k in sorted(self.s_compact)
            )
        )


class Origin(Enum):
    MAIN_SYNC = "MainSync"
    CROSS_CHAIN_EXEC = "CrossChainExec"


@dataclass(frozen=True)
class CompactEntry:
    source_digest: bytes
    keys: Tuple[StorageKey, ...]
    values: Tuple[int, ...]


@dataclass(frozen=True)
class CompactBlock:
    height: int
    parent_digest: bytes
    entries: Tuple[CompactEntry, ...]
    origin: Origin

    @property
    def digest(self) -> bytes:
        parts = [pack(self.height, self.parent_digest, self.origin.value.encode())]
        for e in self.entries:
            parts.append(e.source_digest)
            for (address, key), value in zip(e.keys, e.values):
                parts.append(pack(address.as_word(), key, value))
        return digest(b"".join(parts))


class CompactStorage(Storage):
    """
    Storage view of one inbound call. Reads are limited to keys the policy
    exposes for the contract, writes to keys of the invoked ReadWrite entry.
    """

    def __init__(self, state: CompactState, policy: ExposurePolicy, entry: ExposureEntry) -> None:
        self.state = state
        self.policy = policy
        self.entry = entry
        self.accessed: Set[StorageKey] = set()

    def load(self, address: Address, key: int) -> int:
        if key not in self.policy.readable(address):
            raise UnauthorizedTarget(f"read of unexposed key {address}:{key}")
        self.accessed.add((address, key))
        return self.state.s_compact.get((address, key), 0)

    def check_store(self, address: Address, key: int) -> None:
        if self.entry.mode != Mode.READ_WRITE:
            raise WriteToReadOnly(f"{address} is exposed read-only")
        if address != self.entry.contract or key not in self.entry.storage_keys:
            raise UnauthorizedTarget(f"write to unexposed key {address}:{key}")
        self.accessed.add((address, key))

    def store(self, address: Address, key: int, value: int) -> None:
        self.check_store(address, key)
        self.state.s_compact[(address, key)] = value


@dataclass(frozen=True)
class CompactExecution:
    call: "CrossChainCall"
    tx: Transaction
    status: bool
    return_data: bytes
    cost: int
    writes: Tuple[Write, ...]
    accessed: FrozenSet[StorageKey]
    block: Optional[CompactBlock]
    error: Optional[str] = None

    @property
    def committed(self) -> bool:
        return self.block is not None


class CompactChain:
    def __init__(self, chain_id: ChainId, policy: ExposurePolicy, schedule: FeeSchedule) -> None:
        self.chain_id = chain_id
        self.policy = policy
        self.schedule = schedule
        self.state = CompactState()
        self.blocks: List[CompactBlock] = []
        # function tables only, copied at authorization
        self.code: Dict[Address, FunctionTable] = {}

    def authorize(self, main: ChainState) -> CompactState:
        """
        Seed S_compact with the current main-chain values of every exposed
        key; absent keys are mirrored as the zero word.
        """
        for contract in sorted(self.policy.contracts()):
            if contract not in main.s_main:
                raise UnknownContract(f"exposed contract {contract} is not deployed")
            self.code[contract] = dict(main.s_main[contract].functions)
        for address, key in sorted(self.policy.authorized_keys()):
            self.state.s_compact[(address, key)] = main.load(address, key)
        return self.state

    @property
    def head_digest(self) -> bytes:
        return self.blocks[-1].digest if self.blocks else bytes(32)

    def commit(self, entries: List[CompactEntry], origin: Origin) -> CompactBlock:
        authorized = self.policy.authorized_keys()
        for e in entries:
            assert set(e.keys) <= authorized, "compact entry touches unexposed keys"
        block = CompactBlock(self.state.height + 1, self.head_digest, tuple(entries), origin)
        self.blocks.append(block)
        self.state.height = block.height
        return block

    def apply_cross_chain_tx(self, call: "CrossChainCall", caller: Address) -> CompactExecution:
        """
        Execute an inbound call against S_compact. Raises UnauthorizedTarget
        or WriteToReadOnly without touching state; an ordinary execution
        failure returns status false and commits no block.
        """
        target = call.target
        entry = self.policy.lookup(target.contract_address, target.function_selector)
        if entry is None or target.contract_address not in self.code:
            raise UnauthorizedTarget(
                f"{target.contract_address}:{target.function_selector} is not exposed"
            )
        tx = Transaction(
            call.sender,
            target.contract_address,
            target.function_selector,
            target.params,
            self.state.height,
            INBOUND_GAS_LIMIT,
            TxKind.CROSS_CHAIN_INBOUND,
        )
        storage = CompactStorage(self.state, self.policy, entry)
        result = execute(
            self.code,
            storage,
            target.contract_address,
            target.function_selector,
            target.params,
            self.chain_id,
            self.schedule,
            caller,
            origin=call.sender,
        )
        if isinstance(result.error, (UnauthorizedTarget, WriteToReadOnly)):
            raise result.error
        accessed = frozenset(storage.accessed)
        if not result.status:
            log.info(
                f"compact {self.chain_id.short()}: {target.function_selector} "
                f"failed: {result.error}"
            )
            return CompactExecution(
                call, tx, False, b"", result.cost, (), accessed, None, result.error_name
            )
        keys = tuple((w.address, w.key) for w in result.writes)
        values = tuple(w.value for w in result.writes)
        block = self.commit([CompactEntry(tx.digest, keys, values)], Origin.CROSS_CHAIN_EXEC)
        return CompactExecution(
            call,
            tx,
            True,
            result.return_data,
            result.cost,
            result.writes,
            accessed,
            block,
        )


#!/usr/bin/env python3
"""
One blockchain: accounts, blocks and a registered-function contract machine
over 32-byte word storage.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import (
    TYPE_CHECKING,
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Tuple,
)

from .auth import FeeSchedule
from .encoding import Address, ChainId, Selector, decode_words, digest, pack
from .errors import (
    DuplicateAddress,
    InvalidNonce,
    MirrorRejected,
    OutOfGas,
    Revert,
    UnknownAddress,
    UnknownSelector,
    XcsimError,
)

if TYPE_CHECKING:
    from .router import Callback, ExternalContract

log = logging.getLogger(__name__)

# reserved sender of synchronizer mirror transactions, exempt from fees
SYSTEM_SENDER = Address(b"\xff" * 20)
MIRROR_SELECTOR = Selector(b"\xff\xff\xff\xff")
MAX_CALL_DEPTH = 8


class Write(NamedTuple):
    address: Address
    key: int
    value: int


class TxKind(Enum):
    LOCAL = 0
    CROSS_CHAIN_INBOUND = 1
    SYNC_MIRROR = 2


@dataclass(frozen=True)
class Transaction:
    sender: Address
    target: Address
    selector: Selector
    params: bytes
    nonce: int
    gas_limit: int
    kind: TxKind = TxKind.LOCAL

    def __post_init__(self) -> None:
        if self.gas_limit <= 0:
            raise ValueError("gas_limit must be positive")

    def encode(self) -> bytes:
        return pack(
            self.kind.value,
            self.sender.as_word(),
            self.target.as_word(),
            self.selector.as_word(),
            self.params,
            self.nonce,
            self.gas_limit,
        )

    @property
    def digest(self) -> bytes:
        return digest(self.encode())


@dataclass(frozen=True)
class Receipt:
    tx_digest: bytes
    kind: TxKind
    status: bool
    return_data: bytes = b""
    cost: int = 0
    error: Optional[str] = None
    writes: Tuple[Write, ...] = ()
    # router events emitted while executing the transaction
    events: Tuple[Any, ...] = ()


@dataclass(frozen=True)
class Block:
    height: int
    parent_digest: bytes
    transactions: Tuple[Transaction, ...]
    state_digest: bytes
    timestamp: int
    receipts: Tuple[Receipt, ...] = ()

    @property
    def digest(self) -> bytes:
        return digest(
            pack(
                self.height,
                self.parent_digest,
                self.state_digest,
                self.timestamp,
                b"".join(tx.digest for tx in self.transactions),
            )
        )

    @property
    def events(self) -> List[Any]:
        return [e for r in self.receipts for e in r.events]


Handler = Callable[["CallContext", bytes], bytes]


@dataclass(frozen=True)
class ContractFunction:
    signature: str
    handler: Handler
    # declared storage writes, used to estimate destination cost
    writes: int = 0

    @property
    def selector(self) -> Selector:
        return Selector.of(self.signature)


FunctionTable = Dict[Selector, ContractFunction]
CodeView = Mapping[Address, Mapping[Selector, ContractFunction]]


@dataclass
class ContractAccount:
    address: Address
    storage: Dict[int, int] = field(default_factory=dict)
    functions: FunctionTable = field(default_factory=dict)
    kind: str = ""

    def load(self, key: int) -> int:
        return self.storage.get(key, 0)


class Storage(ABC):
    @abstractmethod
    def load(self, address: Address, key: int) -> int:
        ...

    @abstractmethod
    def store(self, address: Address, key: int, value: int) -> None:
        ...

    def check_store(self, address: Address, key: int) -> None:
        """
        Raise if a later `store` of this key would be refused
        """


class MainStorage(Storage):
    def __init__(self, state: "ChainState") -> None:
        self.state = state

    def load(self, address: Address, key: int) -> int:
        account = self.state.s_main.get(address)
        return account.load(key) if account else 0

    def store(self, address: Address, key: int, value: int) -> None:
        account = self.state.s_main.get(address)
        if account is None:
            raise UnknownAddress(f"store into unknown account {address}")
        account.storage[key] = value


class Journal(Storage):
    """
    Buffers writes of one call frame; `commit` pushes them into the parent.
    """

    def __init__(self, parent: Storage) -> None:
        self.parent = parent
        self.pending: Dict[Tuple[Address, int], int] = {}
        self.writes: List[Write] = []

    def load(self, address: Address, key: int) -> int:
        if (address, key) in self.pending:
            return self.pending[(address, key)]
        return self.parent.load(address, key)

    def check_store(self, address: Address, key: int) -> None:
        self.parent.check_store(address, key)

    def store(self, address: Address, key: int, value: int) -> None:
        self.parent.check_store(address, key)
        self.pending[(address, key)] = value
        self.writes.append(Write(address, key, value))

    def commit(self) -> List[Write]:
        for w in self.writes:
            self.parent.store(w.address, w.key, w.value)
        return self.writes


class ExecutionHost(ABC):
    """
    Gives contract code access to the cross-chain layer of its chain.
    """

    @abstractmethod
    def initiate_cross_chain_call(
        self,
        ctx: "CallContext",
        target_chain: ChainId,
        target: "ExternalContract",
        callback: "Callback",
    ) -> bytes:
        ...


@dataclass
class Meter:
    calls: int = 0
    writes: int = 0


@dataclass
class CallContext:
    chain_id: ChainId
    address: Address
    caller: Address
    origin: Address
    storage: Journal
    code: CodeView
    schedule: FeeSchedule
    meter: Meter
    host: Optional[ExecutionHost] = None
    depth: int = 0
    events: List[Any] = field(default_factory=list)

    def sload(self, key: int) -> int:
        return self.storage.load(self.address, key)

    def sstore(self, key: int, value: int) -> None:
        self.meter.writes += 1
        self.storage.store(self.address, key, value)

    def call(self, target: Address, selector: Selector, params: bytes) -> bytes:
        if self.depth + 1 >= MAX_CALL_DEPTH:
            raise Revert("call depth exceeded")
        journal = Journal(self.storage)
        ctx = CallContext(
            self.chain_id,
            target,
            self.address,
            self.origin,
            journal,
            self.code,
            self.schedule,
            self.meter,
            self.host,
            self.depth + 1,
        )
        try:
            data = _dispatch(ctx, target, selector, params)
        except (XcsimError, ValueError) as e:
            raise Revert(f"nested call to {target} failed: {e}")
        journal.commit()
        self.events.extend(ctx.events)
        return data

    def require_host(self) -> ExecutionHost:
        if self.host is None:
            raise Revert("no cross-chain host available")
        return self.host


@dataclass(frozen=True)
class CallResult:
    status: bool
    return_data: bytes
    cost: int
    writes: Tuple[Write, ...] = ()
    events: Tuple[Any, ...] = ()
    error: Optional[XcsimError] = None

    @property
    def error_name(self) -> Optional[str]:
        return type(self.error).__name__ if self.error is not None else None


def _dispatch(ctx: CallContext, target: Address, selector: Selector, params: bytes) -> bytes:
    functions = ctx.code.get(target)
    if functions is None:
        raise UnknownAddress(f"no contract at {target}")
    function = functions.get(selector)
    if function is None:
        raise UnknownSelector(f"{target} has no function {selector}")
    ctx.meter.calls += 1
    return function.handler(ctx, params)


def execute(
    code: CodeView,
    storage: Storage,
    target: Address,
    selector: Selector,
    params: bytes,
    chain_id: ChainId,
    schedule: FeeSchedule,
    caller: Address,
    origin: Optional[Address] = None,
    host: Optional[ExecutionHost] = None,
    gas_limit: Optional[int] = None,
) -> CallResult:
    """
    Run one top-level call. Writes reach `storage` only if the call succeeds
    within `gas_limit`.
    """
    journal = Journal(storage)
    meter = Meter()
    ctx = CallContext(
        chain_id,
        target,
        caller,
        origin or caller,
        journal,
        code,
        schedule,
        meter,
        host,
    )
    try:
        data = _dispatch(ctx, target, selector, params)
    except (UnknownAddress, UnknownSelector) as e:
        return CallResult(False, b"", 0, error=e)
    except XcsimError as e:
        cost = schedule.call_cost(meter.calls, meter.writes)
        return CallResult(False, b"", cost, error=e)
    except ValueError as e:
        cost = schedule.call_cost(meter.calls, meter.writes)
        return CallResult(False, b"", cost, error=Revert(str(e)))

    cost = schedule.call_cost(meter.calls, meter.writes)
    if gas_limit is not None and cost > gas_limit:
        return CallResult(
            False, b"", gas_limit, error=OutOfGas(f"cost {cost} > gas limit {gas_limit}")
        )
    writes = journal.commit()
    return CallResult(True, data, cost, tuple(writes), tuple(ctx.events))


class ChainState:
    def __init__(self, chain_id: ChainId, schedule: FeeSchedule) -> None:
        self.chain_id = chain_id
        self.schedule = schedule
        self.s_main: Dict[Address, ContractAccount] = {}
        self.height = 0
        self.receipts: List[Receipt] = []
        self.blocks: List[Block] = []
        self.nonces: Dict[Address, int] = {}
        self.host: Optional[ExecutionHost] = None

    def code(self) -> Dict[Address, FunctionTable]:
        return {a: acc.functions for a, acc in self.s_main.items()}

    def state_digest(self) -> bytes:
        """
        Digest over all contract storage; nonzero words only, so an absent key
        and a stored zero word are indistinguishable.
        """
        items = []
        for address in sorted(self.s_main):
            storage = self.s_main[address].storage
            for key in sorted(storage):
                if storage[key] != 0:
                    items.append(pack(address.as_word(), key, storage[key]))
        return digest(b"".join(items))

    def load(self, address: Address, key: int) -> int:
        return MainStorage(self).load(address, key)

    @property
    def head(self) -> Block:
        if not self.blocks:
            self.seal_genesis()
        return self.blocks[-1]

    def seal_genesis(self, timestamp: int = 0) -> Block:
        assert not self.blocks, "genesis already sealed"
        genesis = Block(0, bytes(32), (), self.state_digest(), timestamp)
        self.blocks.append(genesis)
        return genesis


def register_contract(state: ChainState, account: ContractAccount) -> ChainState:
    if account.address in state.s_main:
        raise DuplicateAddress(f"{account.address} already registered")
    state.s_main[account.address] = account
    return state


def call_function(
    state: ChainState,
    target: Address,
    selector: Selector,
    params: bytes,
    caller: Address = SYSTEM_SENDER,
) -> Tuple[bool, bytes, int]:
    result = execute(
        state.code(),
        MainStorage(state),
        target,
        selector,
        params,
        state.chain_id,
        state.schedule,
        caller,
        host=state.host,
    )
    return result.status, result.return_data, result.cost


def _apply_mirror(state: ChainState, tx: Transaction) -> Receipt:
    if tx.sender != SYSTEM_SENDER:
        raise MirrorRejected(f"mirror transaction from {tx.sender}")
    if tx.target not in state.s_main:
        raise MirrorRejected(f"mirror target {tx.target} missing on main chain")
    words = decode_words(tx.params)
    if len(words) % 2:
        raise MirrorRejected("mirror write set has odd length")
    storage = MainStorage(state)
    writes = []
    for key, value in zip(words[::2], words[1::2]):
        storage.store(tx.target, key, value)
        writes.append(Write(tx.target, key, value))
    return Receipt(tx.digest, tx.kind, True, writes=tuple(writes))


def apply_transaction(state: ChainState, tx: Transaction) -> Receipt:
    expected = state.nonces.get(tx.sender, 0)
    if tx.nonce != expected:
        return Receipt(
            tx.digest,
            tx.kind,
            False,
            error=InvalidNonce.__name__,
        )
    state.nonces[tx.sender] = expected + 1

    if tx.kind == TxKind.SYNC_MIRROR:
        try:
            return _apply_mirror(state, tx)
        except MirrorRejected as e:
            log.error(f"chain {state.chain_id.short()}: {e}")
            return Receipt(tx.digest, tx.kind, False, error=MirrorRejected.__name__)

    result = execute(
        state.code(),
        MainStorage(state),
        tx.target,
        tx.selector,
        tx.params,
        state.chain_id,
        state.schedule,
        tx.sender,
        host=state.host,
        gas_limit=tx.gas_limit,
    )
    return Receipt(
        tx.digest,
        tx.kind,
        result.status,
        result.return_data,
        result.cost,
        result.error_name,
        result.writes,
        result.events,
    )


def mine_block(chain: ChainState, txs: List[Transaction], timestamp: int = 0) -> Block:
    """
    Apply `txs` in order and append the resulting block. Transactions with a
    wrong nonce are skipped and leave an InvalidNonce receipt.
    """
    parent = chain.head
    receipts = [apply_transaction(chain, tx) for tx in txs]
    chain.receipts.extend(receipts)
    chain.height = parent.height + 1
    block = Block(
        chain.height,
        parent.digest,
        tuple(txs),
        chain.state_digest(),
        timestamp,
        tuple(receipts),
    )
    chain.blocks.append(block)
    log.debug(
        f"chain {chain.chain_id.short()} mined block {block.height} "
        f"with {len(txs)} txs"
    )
    return block

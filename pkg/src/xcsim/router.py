#!/usr/bin/env python3
"""
Per-chain router: packages outbound requests, executes inbound ones against
the compact chain, and routes the result to the callback.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Callable, Dict, Optional, Set, Tuple, Union

from .encoding import (
    EMPTY_SELECTOR,
    ZERO_ADDRESS,
    Address,
    ChainId,
    Selector,
    Unpacker,
    digest,
    pack,
)
from .errors import InvalidContractAddress, UnknownTargetChain, XcsimError

if TYPE_CHECKING:
    from .compact import CompactExecution

log = logging.getLogger(__name__)

ROUTER_ADDRESS = Address.from_int(0x100)
NO_PARENT = bytes(32)


@dataclass(frozen=True)
class ExternalContract:
    contract_address: Address
    function_selector: Selector
    params: bytes = b""


@dataclass(frozen=True)
class Callback:
    # None encodes the empty Blockchain(bytes32(0), "") of a fire-and-forget leg
    chain: Optional[ChainId]
    callback_address: Address = ZERO_ADDRESS
    callback_selector: Selector = EMPTY_SELECTOR

    @classmethod
    def empty(cls) -> "Callback":
        return cls(None)

    @property
    def is_empty(self) -> bool:
        return self.callback_address.is_zero()


@dataclass(frozen=True)
class CrossChainCall:
    request_id: bytes
    sender: Address
    target: ExternalContract
    callback: Callback
    # set on a re-initiated callback leg; the leg is funded by the parent's lock
    parent_id: bytes = NO_PARENT

    @property
    def funding_id(self) -> bytes:
        return self.request_id if self.parent_id == NO_PARENT else self.parent_id

    def encode(self) -> bytes:
        return pack(
            self.request_id,
            self.sender.as_word(),
            self.target.contract_address.as_word(),
            self.target.function_selector.as_word(),
            self.target.params,
            self.callback.chain.as_word() if self.callback.chain else 0,
            self.callback.callback_address.as_word(),
            self.callback.callback_selector.as_word(),
            self.parent_id,
        )

    @classmethod
    def decode(cls, data: bytes) -> "CrossChainCall":
        u = Unpacker(data)
        request_id = u.read_bytes()
        sender = Address.from_word(u.read_int())
        target = ExternalContract(
            Address.from_word(u.read_int()),
            Selector.from_word(u.read_int()),
            u.read_bytes(),
        )
        chain_word = u.read_int()
        callback = Callback(
            ChainId(chain_word.to_bytes(32, "big")) if chain_word else None,
            Address.from_word(u.read_int()),
            Selector.from_word(u.read_int()),
        )
        parent_id = u.read_bytes()
        u.done()
        return cls(request_id, sender, target, callback, parent_id)

    @property
    def digest(self) -> bytes:
        return digest(self.encode())


@dataclass(frozen=True)
class CrossChainRequest:
    chain: ChainId
    target_chain: ChainId
    call: CrossChainCall

    @property
    def request_id(self) -> bytes:
        return self.call.request_id


@dataclass(frozen=True)
class CallBackResult:
    chain: ChainId
    request_id: bytes
    status: bool
    result: bytes


RouterEvent = Union[CrossChainRequest, CallBackResult]
Executor = Callable[[CrossChainCall], "CompactExecution"]


class Action(Enum):
    STOP = "stop"
    LOCAL_CALLBACK = "local-callback"
    REINITIATE = "reinitiate"
    FAILED = "failed"


@dataclass
class IncomingOutcome:
    call: CrossChainCall
    action: Action
    execution: Optional["CompactExecution"] = None
    released: bool = False
    event: Optional[RouterEvent] = None
    callback_execution: Optional["CompactExecution"] = None

    @property
    def cost(self) -> int:
        total = self.execution.cost if self.execution else 0
        if self.callback_execution is not None:
            total += self.callback_execution.cost
        return total


class Router:
    def __init__(self, chain_id: ChainId, address: Address = ROUTER_ADDRESS) -> None:
        self.chain_id = chain_id
        self.address = address
        self.known_chains: Set[ChainId] = set()
        self.nonces: Dict[Address, int] = {}

    def register_chain(self, chain_id: ChainId) -> None:
        self.known_chains.add(chain_id)

    def next_request_id(self, sender: Address, tick: int) -> bytes:
        """
        The id the next request of `sender` at `tick` will receive. The
        per-sender nonce keeps two requests in one block apart, the chain id
        keeps equal senders on different chains apart.
        """
        nonce = self.nonces.get(sender, 0)
        return digest(pack(tick, sender.as_word(), nonce, self.chain_id.as_word()))

    def initiate_cross_chain_call(
        self,
        target_chain: ChainId,
        target: ExternalContract,
        callback: Callback,
        sender: Address,
        tick: int,
        parent_id: bytes = NO_PARENT,
    ) -> Tuple[bytes, CrossChainRequest]:
        if target_chain not in self.known_chains:
            raise UnknownTargetChain(f"chain {target_chain.short()} is not connected")
        request_id = self.next_request_id(sender, tick)
        self.nonces[sender] = self.nonces.get(sender, 0) + 1
        call = CrossChainCall(request_id, sender, target, callback, parent_id)
        event = CrossChainRequest(self.chain_id, target_chain, call)
        log.debug(
            f"router {self.chain_id.short()}: request 0x{request_id.hex()[:8]} "
            f"-> {target_chain.short()}"
        )
        return request_id, event

    def handle_incoming(
        self,
        call: CrossChainCall,
        executor: Executor,
        tick: int,
        release: bool = True,
    ) -> IncomingOutcome:
        """
        Execute the target of an inbound call. Authorization errors from the
        compact chain propagate to the caller. With `release=False` the
        callback step is left for a later `release` once the mempool entry
        has finalized.
        """
        if call.target.contract_address.is_zero():
            raise InvalidContractAddress("Invalid contract address")
        execution = executor(call)
        if not execution.status:
            # no callback on failure
            return IncomingOutcome(call, Action.FAILED, execution, released=True)
        if call.callback.is_empty:
            action = Action.STOP
        elif call.callback.chain == self.chain_id:
            action = Action.LOCAL_CALLBACK
        else:
            action = Action.REINITIATE
        outcome = IncomingOutcome(call, action, execution)
        if release:
            self.release(outcome, executor, tick)
        return outcome

    def release(self, outcome: IncomingOutcome, executor: Executor, tick: int) -> None:
        assert not outcome.released
        assert outcome.execution is not None
        call = outcome.call
        return_data = outcome.execution.return_data
        outcome.released = True
        if outcome.action == Action.LOCAL_CALLBACK:
            leg = _callback_call(call.request_id, call.sender, call.callback, return_data)
            outcome.event, outcome.callback_execution = self._callback(leg, executor)
        elif outcome.action == Action.REINITIATE:
            assert call.callback.chain is not None
            target = ExternalContract(
                call.callback.callback_address,
                call.callback.callback_selector,
                return_data,
            )
            _, outcome.event = self.initiate_cross_chain_call(
                call.callback.chain,
                target,
                Callback.empty(),
                self.address,
                tick,
                parent_id=call.funding_id,
            )

    def deliver_callback(
        self,
        request_id: bytes,
        callback: Callback,
        return_data: bytes,
        executor: Executor,
        sender: Address = ZERO_ADDRESS,
    ) -> CallBackResult:
        if callback.chain != self.chain_id:
            raise ValueError("callback does not belong to this chain")
        call = _callback_call(request_id, sender, callback, return_data)
        event, _ = self._callback(call, executor)
        return event

    def _callback(
        self, call: CrossChainCall, executor: Executor
    ) -> Tuple[CallBackResult, Optional["CompactExecution"]]:
        execution: Optional["CompactExecution"] = None
        try:
            execution = executor(call)
            status, result = execution.status, execution.return_data
        except XcsimError as e:
            log.info(f"router {self.chain_id.short()}: callback failed: {e}")
            status, result = False, b""
        event = CallBackResult(self.chain_id, call.request_id, status, result)
        return event, execution


def _callback_call(
    request_id: bytes, sender: Address, callback: Callback, return_data: bytes
) -> CrossChainCall:
    target = ExternalContract(
        callback.callback_address, callback.callback_selector, return_data
    )
    return CrossChainCall(request_id, sender, target, Callback.empty())

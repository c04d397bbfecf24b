from typing import List

import pytest

from xcsim.chain import Transaction, TxKind
from xcsim.compact import CompactExecution
from xcsim.encoding import Address, ChainId, Selector, digest, encode_words, pack
from xcsim.errors import InvalidContractAddress, UnknownTargetChain
from xcsim.router import (
    NO_PARENT,
    ROUTER_ADDRESS,
    Action,
    CallBackResult,
    Callback,
    CrossChainCall,
    CrossChainRequest,
    ExternalContract,
    Router,
)

A = ChainId.from_name("A")
B = ChainId.from_name("B")
SENDER = Address.from_int(0xB1)
TARGET = ExternalContract(Address.from_int(0xA1), Selector.of("getValue()"), b"")
HANDLER = Selector.of("handleResult(uint256)")


class Executor:
    """
    Stands in for the compact chain: answers every call with `result`.
    """

    def __init__(self, status: bool = True, result: bytes = b"") -> None:
        self.status = status
        self.result = result
        self.calls: List[CrossChainCall] = []

    def __call__(self, call: CrossChainCall) -> CompactExecution:
        self.calls.append(call)
        tx = Transaction(
            call.sender,
            call.target.contract_address,
            call.target.function_selector,
            call.target.params,
            0,
            1,
            TxKind.CROSS_CHAIN_INBOUND,
        )
        return CompactExecution(
            call, tx, self.status, self.result, 1, (), frozenset(), None
        )


def router(chain: ChainId = A) -> Router:
    r = Router(chain)
    r.register_chain(B if chain == A else A)
    return r


def inbound(callback: Callback, target: ExternalContract = TARGET) -> CrossChainCall:
    return CrossChainCall(b"\x07" * 32, SENDER, target, callback)


def test_request_ids() -> None:
    r = router(B)
    first, _ = r.initiate_cross_chain_call(A, TARGET, Callback.empty(), SENDER, 3)
    second, event = r.initiate_cross_chain_call(A, TARGET, Callback.empty(), SENDER, 3)
    assert first != second
    assert second == digest(pack(3, SENDER.as_word(), 1, B.as_word()))
    assert isinstance(event, CrossChainRequest)
    assert (event.chain, event.target_chain, event.request_id) == (B, A, second)


def test_same_sender_on_two_chains() -> None:
    on_a, _ = router(A).initiate_cross_chain_call(B, TARGET, Callback.empty(), SENDER, 0)
    on_b, _ = router(B).initiate_cross_chain_call(A, TARGET, Callback.empty(), SENDER, 0)
    assert on_a != on_b


def test_unknown_target_chain() -> None:
    r = router()
    with pytest.raises(UnknownTargetChain):
        r.initiate_cross_chain_call(
            ChainId.from_name("C"), TARGET, Callback.empty(), SENDER, 0
        )
    assert r.nonces == {}


def test_call_encoding() -> None:
    call = CrossChainCall(
        b"\x01" * 32,
        SENDER,
        ExternalContract(TARGET.contract_address, TARGET.function_selector, b"\x05" * 33),
        Callback(B, SENDER, HANDLER),
        parent_id=b"\x02" * 32,
    )
    assert CrossChainCall.decode(call.encode()) == call
    assert call.funding_id == b"\x02" * 32


def test_zero_target_is_invalid() -> None:
    executor = Executor()
    call = inbound(Callback.empty(), ExternalContract(Address.from_int(0), HANDLER))
    with pytest.raises(InvalidContractAddress):
        router().handle_incoming(call, executor, 0)
    assert executor.calls == []


def test_fire_and_forget_stops() -> None:
    outcome = router().handle_incoming(inbound(Callback.empty()), Executor(), 0)
    assert outcome.action == Action.STOP
    assert outcome.released and outcome.event is None


def test_failed_execution_has_no_callback() -> None:
    r = router()
    outcome = r.handle_incoming(inbound(Callback(B, SENDER, HANDLER)), Executor(False), 0)
    assert outcome.action == Action.FAILED
    assert outcome.event is None and outcome.callback_execution is None


def test_local_callback() -> None:
    r = router()
    executor = Executor(result=encode_words([42]))
    outcome = r.handle_incoming(
        inbound(Callback(A, Address.from_int(0xA5), HANDLER)), executor, 0
    )
    assert outcome.action == Action.LOCAL_CALLBACK
    result = outcome.event
    assert isinstance(result, CallBackResult)
    assert result.status and result.request_id == b"\x07" * 32
    callback_call = executor.calls[-1]
    assert callback_call.target.params == encode_words([42])
    assert outcome.cost == 2


def test_remote_callback_is_reinitiated() -> None:
    r = router()
    outcome = r.handle_incoming(
        inbound(Callback(B, SENDER, HANDLER)), Executor(result=encode_words([42])), 5
    )
    assert outcome.action == Action.REINITIATE
    child = outcome.event
    assert isinstance(child, CrossChainRequest)
    assert child.target_chain == B
    assert child.call.sender == ROUTER_ADDRESS
    assert child.call.parent_id == b"\x07" * 32
    assert child.call.callback.is_empty
    assert child.call.target == ExternalContract(SENDER, HANDLER, encode_words([42]))


def test_release_waits() -> None:
    r = router()
    outcome = r.handle_incoming(
        inbound(Callback(B, SENDER, HANDLER)), Executor(), 0, release=False
    )
    assert not outcome.released and outcome.event is None
    r.release(outcome, Executor(), 9)
    assert outcome.released
    assert isinstance(outcome.event, CrossChainRequest)
    assert outcome.event.call.parent_id != NO_PARENT


def test_deliver_callback() -> None:
    r = router()
    executor = Executor(result=b"done")
    event = r.deliver_callback(
        b"\x09" * 32, Callback(A, SENDER, HANDLER), encode_words([1]), executor
    )
    assert event == CallBackResult(A, b"\x09" * 32, True, b"done")
    assert executor.calls[-1].target == ExternalContract(SENDER, HANDLER, encode_words([1]))
    with pytest.raises(ValueError):
        r.deliver_callback(b"\x09" * 32, Callback(B, SENDER, HANDLER), b"", executor)

#!/usr/bin/env python3
"""
Contract kinds that can be deployed from a genesis config. Each kind is a
table of registered functions over word storage; slot 0 holds the single
value every example contract keeps.
"""

from typing import Callable, Dict, List

from .chain import CallContext, ContractAccount, ContractFunction
from .encoding import (
    Address,
    ChainId,
    Selector,
    Unpacker,
    decode_bool,
    decode_words,
    encode_bool,
    encode_words,
    pack,
)
from .errors import Revert
from .router import ROUTER_ADDRESS, Callback, ExternalContract

SLOT0 = 0

GET_VALUE = "getValue()"
SET_VALUE = "setValue(uint256)"
REQUEST_VALUE = "requestValue(bytes32,address)"
HANDLE_RESULT = "handleResult(uint256)"
UPDATE_REMOTE_VALUE = "updateRemoteValue(bytes32,address,uint256)"
HANDLE_WRITE_RESULT = "handleWriteResult(bool)"
INITIATE = "initiateCrossChainCall(bytes32,(address,bytes4,bytes),(bytes32,address,bytes4))"
CHAIN_ID = "chainId()"


def _words(params: bytes, count: int) -> List[int]:
    words = decode_words(params)
    if len(words) != count:
        raise Revert(f"expected {count} parameters, got {len(words)}")
    return words


def get_value(ctx: CallContext, params: bytes) -> bytes:
    _words(params, 0)
    return encode_words([ctx.sload(SLOT0)])


def set_value(ctx: CallContext, params: bytes) -> bytes:
    (value,) = _words(params, 1)
    ctx.sstore(SLOT0, value)
    return encode_bool(True)


def handle_result(ctx: CallContext, params: bytes) -> bytes:
    (value,) = _words(params, 1)
    ctx.sstore(SLOT0, value)
    return encode_words([])


def handle_write_result(ctx: CallContext, params: bytes) -> bytes:
    ctx.sstore(SLOT0, 1 if decode_bool(params) else 0)
    return encode_words([])


def encode_initiate(
    target_chain: ChainId, target: ExternalContract, callback: Callback
) -> bytes:
    return pack(
        target_chain.as_word(),
        target.contract_address.as_word(),
        target.function_selector.as_word(),
        target.params,
        callback.chain.as_word() if callback.chain else 0,
        callback.callback_address.as_word(),
        callback.callback_selector.as_word(),
    )


def _call_router(
    ctx: CallContext, target_chain: int, target: ExternalContract, handler: str
) -> bytes:
    callback = Callback(ctx.chain_id, ctx.address, Selector.of(handler))
    payload = encode_initiate(ChainId(target_chain.to_bytes(32, "big")), target, callback)
    return ctx.call(ROUTER_ADDRESS, Selector.of(INITIATE), payload)


def request_value(ctx: CallContext, params: bytes) -> bytes:
    chain, address = _words(params, 2)
    target = ExternalContract(
        Address.from_word(address), Selector.of(GET_VALUE), encode_words([])
    )
    return _call_router(ctx, chain, target, HANDLE_RESULT)


def update_remote_value(ctx: CallContext, params: bytes) -> bytes:
    chain, address, value = _words(params, 3)
    target = ExternalContract(
        Address.from_word(address), Selector.of(SET_VALUE), encode_words([value])
    )
    return _call_router(ctx, chain, target, HANDLE_WRITE_RESULT)


def router_initiate(ctx: CallContext, params: bytes) -> bytes:
    u = Unpacker(params)
    target_chain = ChainId(u.read_int().to_bytes(32, "big"))
    target = ExternalContract(
        Address.from_word(u.read_int()), Selector.from_word(u.read_int()), u.read_bytes()
    )
    chain_word = u.read_int()
    callback = Callback(
        ChainId(chain_word.to_bytes(32, "big")) if chain_word else None,
        Address.from_word(u.read_int()),
        Selector.from_word(u.read_int()),
    )
    u.done()
    request_id = ctx.require_host().initiate_cross_chain_call(
        ctx, target_chain, target, callback
    )
    return encode_words([int.from_bytes(request_id, "big")])


def router_chain_id(ctx: CallContext, params: bytes) -> bytes:
    _words(params, 0)
    return encode_words([ctx.chain_id.as_word()])


def _table(*functions: ContractFunction) -> Dict[Selector, ContractFunction]:
    return {f.selector: f for f in functions}


def stored_value(address: Address, value: int = 0, writable: bool = True) -> ContractAccount:
    functions = [ContractFunction(GET_VALUE, get_value)]
    if writable:
        functions.append(ContractFunction(SET_VALUE, set_value, writes=1))
    return ContractAccount(address, {SLOT0: value}, _table(*functions), "stored_value")


def remote_reader(address: Address) -> ContractAccount:
    return ContractAccount(
        address,
        {},
        _table(
            ContractFunction(REQUEST_VALUE, request_value),
            ContractFunction(HANDLE_RESULT, handle_result, writes=1),
        ),
        "remote_reader",
    )


def remote_writer(address: Address) -> ContractAccount:
    return ContractAccount(
        address,
        {},
        _table(
            ContractFunction(UPDATE_REMOTE_VALUE, update_remote_value),
            ContractFunction(HANDLE_WRITE_RESULT, handle_write_result, writes=1),
        ),
        "remote_writer",
    )


def router_contract(address: Address = ROUTER_ADDRESS) -> ContractAccount:
    return ContractAccount(
        address,
        {},
        _table(
            ContractFunction(INITIATE, router_initiate),
            ContractFunction(CHAIN_ID, router_chain_id),
        ),
        "router",
    )


KINDS: Dict[str, Callable[..., ContractAccount]] = {
    "stored_value": stored_value,
    "remote_reader": remote_reader,
    "remote_writer": remote_writer,
}

# declared write counts by selector, the registered shape a source chain uses
# to estimate the cost of a call it cannot see the code of
SHAPES: Dict[Selector, int] = {
    Selector.of(sig): writes
    for sig, writes in [
        (GET_VALUE, 0),
        (SET_VALUE, 1),
        (HANDLE_RESULT, 1),
        (HANDLE_WRITE_RESULT, 1),
        (REQUEST_VALUE, 0),
        (UPDATE_REMOTE_VALUE, 0),
    ]
}


def declared_writes(selector: Selector) -> int:
    return SHAPES.get(selector, 0)

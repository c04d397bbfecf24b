from typing import FrozenSet, Tuple

import pytest
from hypothesis import given
from hypothesis import strategies as st

from xcsim.auth import FeeSchedule
from xcsim.chain import ChainState, register_contract
from xcsim.compact import (
    CompactChain,
    ExposureEntry,
    ExposurePolicy,
    Mode,
    Origin,
)
from xcsim.contracts import GET_VALUE, SET_VALUE, stored_value
from xcsim.encoding import Address, ChainId, Selector, decode_words, encode_words
from xcsim.errors import UnauthorizedTarget, UnknownContract, WriteToReadOnly
from xcsim.router import Callback, CrossChainCall, ExternalContract

CONTRACT = Address.from_int(0xA2)
HIDDEN = Address.from_int(0xA3)
ROUTER = Address.from_int(0x100)
SCHEDULE = FeeSchedule(10, 1, 2)


def policy(mode: Mode = Mode.READ_WRITE, keys: FrozenSet[int] = frozenset({0})) -> ExposurePolicy:
    return ExposurePolicy(
        (
            ExposureEntry(CONTRACT, Selector.of(GET_VALUE), frozenset({0}), Mode.READ_ONLY),
            ExposureEntry(CONTRACT, Selector.of(SET_VALUE), keys, mode),
        )
    )


def compact_chain(p: ExposurePolicy) -> Tuple[ChainState, CompactChain]:
    state = ChainState(ChainId.from_name("A"), SCHEDULE)
    register_contract(state, stored_value(CONTRACT, 5))
    register_contract(state, stored_value(HIDDEN, 8))
    compact = CompactChain(state.chain_id, p, SCHEDULE)
    compact.authorize(state)
    return state, compact


def call(contract: Address, signature: str, *params: int) -> CrossChainCall:
    return CrossChainCall(
        b"\x01" * 32,
        Address.from_int(0xB2),
        ExternalContract(contract, Selector.of(signature), encode_words(list(params))),
        Callback.empty(),
    )


def test_authorize_seeds_exposed_keys_only() -> None:
    _, compact = compact_chain(policy())
    assert compact.state.s_compact == {(CONTRACT, 0): 5}


def test_authorize_unknown_contract() -> None:
    state = ChainState(ChainId.from_name("A"), SCHEDULE)
    compact = CompactChain(state.chain_id, policy(), SCHEDULE)
    with pytest.raises(UnknownContract):
        compact.authorize(state)


def test_read_write_call_stays_on_compact_chain() -> None:
    state, compact = compact_chain(policy())
    execution = compact.apply_cross_chain_tx(call(CONTRACT, SET_VALUE, 99), ROUTER)
    assert execution.status and execution.committed
    assert execution.block is not None
    assert execution.block.origin == Origin.CROSS_CHAIN_EXEC
    assert [(w.key, w.value) for w in execution.writes] == [(0, 99)]
    assert compact.state.s_compact[(CONTRACT, 0)] == 99
    assert compact.state.height == 1
    # the main chain only learns about it through a mirror
    assert state.load(CONTRACT, 0) == 5


def test_read_call() -> None:
    _, compact = compact_chain(policy())
    execution = compact.apply_cross_chain_tx(call(CONTRACT, GET_VALUE), ROUTER)
    assert decode_words(execution.return_data) == [5]
    assert execution.writes == ()
    assert execution.accessed == frozenset({(CONTRACT, 0)})


def test_write_to_read_only() -> None:
    _, compact = compact_chain(policy(Mode.READ_ONLY))
    before = compact.state.digest()
    with pytest.raises(WriteToReadOnly):
        compact.apply_cross_chain_tx(call(CONTRACT, SET_VALUE, 99), ROUTER)
    assert compact.state.digest() == before
    assert compact.blocks == []


def test_write_outside_exposed_keys() -> None:
    _, compact = compact_chain(policy(keys=frozenset({1})))
    with pytest.raises(UnauthorizedTarget):
        compact.apply_cross_chain_tx(call(CONTRACT, SET_VALUE, 99), ROUTER)


def test_unexposed_contract() -> None:
    _, compact = compact_chain(policy())
    with pytest.raises(UnauthorizedTarget):
        compact.apply_cross_chain_tx(call(HIDDEN, GET_VALUE), ROUTER)


def test_execution_failure_commits_nothing() -> None:
    _, compact = compact_chain(policy())
    execution = compact.apply_cross_chain_tx(call(CONTRACT, SET_VALUE, 1, 2), ROUTER)
    assert not execution.status
    assert not execution.committed
    assert execution.error == "Revert"
    assert compact.state.s_compact[(CONTRACT, 0)] == 5


@given(
    st.sampled_from([CONTRACT, HIDDEN, Address.from_int(0xDEAD)]),
    st.sampled_from([GET_VALUE, SET_VALUE, "hidden()"]),
    st.sampled_from(list(Mode)),
    st.integers(min_value=0, max_value=1 << 16),
)
def test_only_exposed_keys_change(
    contract: Address, signature: str, mode: Mode, value: int
) -> None:
    p = policy(mode)
    _, compact = compact_chain(p)
    before = dict(compact.state.s_compact)
    params = (value,) if signature == SET_VALUE else ()
    entry = p.lookup(contract, Selector.of(signature))
    try:
        execution = compact.apply_cross_chain_tx(call(contract, signature, *params), ROUTER)
    except (UnauthorizedTarget, WriteToReadOnly):
        assert entry is None or entry.mode == Mode.READ_ONLY
        assert compact.state.s_compact == before
        return
    assert entry is not None
    assert set(compact.state.s_compact) == set(before)
    assert {(w.address, w.key) for w in execution.writes} <= p.writable()

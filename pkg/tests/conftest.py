#!/usr/bin/env python3

import copy
import json
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Type

import pytest
from root import CONFIG_ROOT, PROJECT_ROOT, TEST_ROOT

sys.path.append(str(PROJECT_ROOT.joinpath("src")))

from xcsim.auth import CollateralLedger
from xcsim.compact import Mode
from xcsim.config import GenesisConfig, parse_config
from xcsim.netsim import TransportConfig
from xcsim.simulation import Simulation

with open(CONFIG_ROOT.joinpath("two_chain.json")) as f:
    _DEFAULT_DOC: Dict[str, Any] = json.load(f)


def n_star(capital: int, f_base: int, costs: Sequence[int]) -> int:
    """
    Number of invocations accepted before the attacker's capital runs out:
    the largest n with sum(f_base + c_i for i <= n) <= capital.
    """
    total = 0
    for n, cost in enumerate(costs):
        total += f_base + cost
        if total > capital:
            return n
    return len(costs)


class Helpers:
    @staticmethod
    def root() -> str:
        return str(TEST_ROOT)

    @staticmethod
    def config_doc() -> Dict[str, Any]:
        """
        A fresh copy of the two-chain default config document
        """
        return copy.deepcopy(_DEFAULT_DOC)

    @staticmethod
    def config(**transport: Any) -> GenesisConfig:
        config = parse_config(Helpers.config_doc())
        if transport:
            config = replace(config, transport=TransportConfig(**transport))
        return config

    @staticmethod
    def with_mode(function: str, mode: Mode) -> GenesisConfig:
        doc = Helpers.config_doc()
        for e in doc["exposure"]:
            if e["function"] == function:
                e["mode"] = mode.value
        return parse_config(doc)

    @staticmethod
    def three_chain_config() -> GenesisConfig:
        doc = Helpers.config_doc()
        doc["chains"].append({"name": "C", "endpoint": "enode://chain-c@10.0.0.3:30303"})
        doc["contracts"].append(
            {"chain": "C", "address": "0xc1", "kind": "stored_value", "value": 3}
        )
        for function, mode in [("getValue()", "ReadOnly"), ("setValue(uint256)", "ReadWrite")]:
            doc["exposure"].append(
                {"chain": "C", "contract": "0xc1", "function": function, "keys": [0], "mode": mode}
            )
        return parse_config(doc)

    @staticmethod
    def simulation(config: Optional[GenesisConfig] = None) -> Simulation:
        return Simulation(config or Helpers.config())

    @staticmethod
    def n_star(capital: int, f_base: int, costs: Sequence[int]) -> int:
        return n_star(capital, f_base, costs)

    @staticmethod
    def finalized(included: int, current: int, validated: bool = False) -> bool:
        """
        Depth oracle: an entry is final once six blocks sit on top of its
        inclusion block, or at once after compact-chain validation.
        """
        return validated or current - included >= 6

    @staticmethod
    def fee_units(ledger: CollateralLedger) -> int:
        """
        Every fee unit the ledger holds, counted place by place.
        """
        units = sum(ledger.balances.values()) + sum(ledger.treasuries.values())
        for account in ledger.accounts.values():
            units += account.balance + sum(account.locked.values())
        return units + ledger.sink

    @staticmethod
    def arithmetic(first: int, step: int, count: int) -> List[int]:
        return [first + i * step for i in range(count)]


@pytest.fixture
def helpers() -> Type[Helpers]:
    return Helpers

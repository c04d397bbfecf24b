#!/usr/bin/env python3
"""
Genesis configuration: one JSON document describing chains, contracts,
exposure policies, fees, funded accounts, collateral, transport and scenario
parameters. Validated against `SCHEMA` before it is turned into dataclasses.
"""

import json
from dataclasses import dataclass, field, replace
from importlib.resources import files
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from jsonschema import Draft202012Validator

from .auth import FeeSchedule
from .compact import Mode
from .encoding import Address, ChainId
from .errors import ConfigError
from .netsim import TransportConfig

# packaged under xcsim/configs
DEFAULT_CONFIG = "two_chain.json"

_hex_or_int = {
    "oneOf": [
        {"type": "integer", "minimum": 0},
        {"type": "string", "pattern": "^0x[0-9a-fA-F]+$"},
    ]
}
_count = {"type": "integer", "minimum": 0}
_positive = {"type": "integer", "minimum": 1}

SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["chains", "contracts", "exposure", "fees"],
    "additionalProperties": False,
    "properties": {
        "chains": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "id": {"type": "string", "pattern": "^0x[0-9a-fA-F]{64}$"},
                    "endpoint": {"type": "string"},
                    "public": {"type": "boolean"},
                    "block_interval": _positive,
                    "compact_bypass": {"type": "boolean"},
                },
            },
        },
        "contracts": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["chain", "address", "kind"],
                "additionalProperties": False,
                "properties": {
                    "chain": {"type": "string"},
                    "address": _hex_or_int,
                    "kind": {"enum": ["stored_value", "remote_reader", "remote_writer"]},
                    "value": _count,
                    "writable": {"type": "boolean"},
                },
            },
        },
        "exposure": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["chain", "contract", "function", "keys", "mode"],
                "additionalProperties": False,
                "properties": {
                    "chain": {"type": "string"},
                    "contract": _hex_or_int,
                    "function": {"type": "string", "minLength": 3},
                    "keys": {"type": "array", "items": _count},
                    "mode": {"enum": [m.value for m in Mode]},
                },
            },
        },
        "fees": {
            "type": "object",
            "required": ["f_base"],
            "additionalProperties": False,
            "properties": {
                "f_base": _positive,
                "per_call": _count,
                "per_write": _count,
                "multiplier": _positive,
            },
        },
        "accounts": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["chain", "address", "balance"],
                "additionalProperties": False,
                "properties": {
                    "chain": {"type": "string"},
                    "address": _hex_or_int,
                    "balance": _count,
                },
            },
        },
        "collateral": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["owner", "host", "amount"],
                "additionalProperties": False,
                "properties": {
                    "owner": {"type": "string"},
                    "host": {"type": "string"},
                    "amount": _count,
                },
            },
        },
        "transport": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "latency_min": _count,
                "latency_max": _count,
                "drop_probability": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": _count,
                "read": {"$ref": "#/$defs/pattern"},
                "write": {"$ref": "#/$defs/pattern"},
                "dos": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "chain": {"type": "string"},
                        "target_chain": {"type": "string"},
                        "attacker": _hex_or_int,
                        "capital": _count,
                        "f_base": _positive,
                        "schedule": {"enum": ["constant", "arithmetic", "cycle"]},
                        "costs": {"type": "array", "minItems": 1, "items": _count},
                        "step": _count,
                        "rate": _positive,
                        "comp_max": _positive,
                        "window": _positive,
                        "max_attempts": _positive,
                    },
                },
                "fuzz": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "iterations": _count,
                        "workers": _positive,
                        "batch": _positive,
                        "unauthorized_ratio": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
                "soak": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"requests": _count},
                },
            },
        },
    },
    "$defs": {
        "pattern": {
            "type": "object",
            "required": ["chain", "contract", "caller", "target_chain", "target"],
            "additionalProperties": False,
            "properties": {
                "chain": {"type": "string"},
                "contract": _hex_or_int,
                "caller": _hex_or_int,
                "target_chain": {"type": "string"},
                "target": _hex_or_int,
                "value": _count,
            },
        }
    },
}


@dataclass(frozen=True)
class ChainConfig:
    name: str
    chain_id: ChainId
    endpoint: str
    public: bool = True
    block_interval: int = 1
    compact_bypass: bool = True


@dataclass(frozen=True)
class ContractConfig:
    chain: str
    address: Address
    kind: str
    value: int = 0
    writable: bool = True


@dataclass(frozen=True)
class ExposureConfig:
    chain: str
    contract: Address
    function: str
    keys: Tuple[int, ...]
    mode: Mode


@dataclass(frozen=True)
class AccountConfig:
    chain: str
    address: Address
    balance: int


@dataclass(frozen=True)
class CollateralConfig:
    owner: str
    host: str
    amount: int


@dataclass(frozen=True)
class PatternConfig:
    chain: str
    contract: Address
    caller: Address
    target_chain: str
    target: Address
    value: int = 0


@dataclass(frozen=True)
class DoSConfig:
    chain: str = ""
    target_chain: str = ""
    attacker: Address = Address.from_int(0xA77AC)
    capital: int = 1000
    # overrides fees.f_base when set
    f_base: Optional[int] = None
    schedule: str = "constant"
    costs: Tuple[int, ...] = (5,)
    step: int = 5
    rate: int = 1
    comp_max: Optional[int] = None
    window: int = 10
    max_attempts: int = 100_000

    def __post_init__(self) -> None:
        if self.schedule not in ("constant", "arithmetic", "cycle"):
            raise ConfigError(f"unknown cost schedule: {self.schedule}")
        if not self.costs:
            raise ConfigError("dos cost schedule is empty")

    def cost(self, n: int) -> int:
        """
        c_n of the n-th invocation, counting from 1
        """
        assert n >= 1
        if self.schedule == "constant":
            return self.costs[0]
        if self.schedule == "arithmetic":
            return self.costs[0] + (n - 1) * self.step
        return self.costs[(n - 1) % len(self.costs)]


@dataclass(frozen=True)
class FuzzConfig:
    iterations: int = 10_000
    workers: int = 4
    # calls per isolated simulation instance
    batch: int = 250
    unauthorized_ratio: float = 0.3


@dataclass(frozen=True)
class SoakConfig:
    requests: int = 200


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    read: Optional[PatternConfig] = None
    write: Optional[PatternConfig] = None
    dos: DoSConfig = DoSConfig()
    fuzz: FuzzConfig = FuzzConfig()
    soak: SoakConfig = SoakConfig()


@dataclass(frozen=True)
class GenesisConfig:
    chains: Tuple[ChainConfig, ...]
    contracts: Tuple[ContractConfig, ...]
    exposure: Tuple[ExposureConfig, ...]
    fees: FeeSchedule
    accounts: Tuple[AccountConfig, ...] = ()
    collateral: Tuple[CollateralConfig, ...] = ()
    transport: TransportConfig = TransportConfig()
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def chain(self, name: str) -> ChainConfig:
        for c in self.chains:
            if c.name == name:
                return c
        raise ConfigError(f"unknown chain: {name}")

    def with_seed(self, seed: int) -> "GenesisConfig":
        return replace(
            self,
            transport=replace(self.transport, seed=seed),
            scenario=replace(self.scenario, seed=seed),
        )


def _address(value: Union[int, str]) -> Address:
    if isinstance(value, int):
        return Address.from_int(value)
    return Address.from_hex(value)


def _pattern(raw: Optional[Dict[str, Any]]) -> Optional[PatternConfig]:
    if raw is None:
        return None
    return PatternConfig(
        raw["chain"],
        _address(raw["contract"]),
        _address(raw["caller"]),
        raw["target_chain"],
        _address(raw["target"]),
        raw.get("value", 0),
    )


def _scenario(raw: Dict[str, Any]) -> ScenarioConfig:
    dos = dict(raw.get("dos", {}))
    if "attacker" in dos:
        dos["attacker"] = _address(dos["attacker"])
    if "costs" in dos:
        dos["costs"] = tuple(dos["costs"])
    return ScenarioConfig(
        raw.get("seed", 0),
        _pattern(raw.get("read")),
        _pattern(raw.get("write")),
        DoSConfig(**dos),
        FuzzConfig(**raw.get("fuzz", {})),
        SoakConfig(**raw.get("soak", {})),
    )


def validate(doc: Any) -> None:
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(doc), key=str)
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {e.message}")


def parse_config(doc: Dict[str, Any]) -> GenesisConfig:
    validate(doc)
    chains = tuple(
        ChainConfig(
            c["name"],
            ChainId.from_hex(c["id"]) if "id" in c else ChainId.from_name(c["name"]),
            c.get("endpoint", f"enode://{c['name']}"),
            c.get("public", True),
            c.get("block_interval", 1),
            c.get("compact_bypass", True),
        )
        for c in doc["chains"]
    )
    names = [c.name for c in chains]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate chain names: {names}")
    if len({c.chain_id for c in chains}) != len(chains):
        raise ConfigError("duplicate chain ids")

    try:
        config = GenesisConfig(
            chains,
            tuple(
                ContractConfig(
                    c["chain"],
                    _address(c["address"]),
                    c["kind"],
                    c.get("value", 0),
                    c.get("writable", True),
                )
                for c in doc["contracts"]
            ),
            tuple(
                ExposureConfig(
                    e["chain"],
                    _address(e["contract"]),
                    e["function"],
                    tuple(e["keys"]),
                    Mode(e["mode"]),
                )
                for e in doc["exposure"]
            ),
            FeeSchedule(
                doc["fees"]["f_base"],
                doc["fees"].get("per_call", 0),
                doc["fees"].get("per_write", 0),
                doc["fees"].get("multiplier", 1),
            ),
            tuple(
                AccountConfig(a["chain"], _address(a["address"]), a["balance"])
                for a in doc.get("accounts", [])
            ),
            tuple(
                CollateralConfig(c["owner"], c["host"], c["amount"])
                for c in doc.get("collateral", [])
            ),
            TransportConfig(**doc.get("transport", {})),
            _scenario(doc.get("scenario", {})),
        )
    except ValueError as e:
        raise ConfigError(str(e))
    _check_references(config)
    return config


def _check_references(config: GenesisConfig) -> None:
    known = {c.name for c in config.chains}
    deployed = {(c.chain, c.address) for c in config.contracts}
    if len(deployed) != len(config.contracts):
        raise ConfigError("two contracts share one address on the same chain")
    refs: List[str] = [c.chain for c in config.contracts]
    refs += [e.chain for e in config.exposure]
    refs += [a.chain for a in config.accounts]
    refs += [n for c in config.collateral for n in (c.owner, c.host)]
    for p in (config.scenario.read, config.scenario.write):
        if p is not None:
            refs += [p.chain, p.target_chain]
            for chain, address in ((p.chain, p.contract), (p.target_chain, p.target)):
                if (chain, address) not in deployed:
                    raise ConfigError(f"scenario contract {address} not deployed on {chain}")
    for name in refs:
        if name not in known:
            raise ConfigError(f"unknown chain: {name}")
    for e in config.exposure:
        if (e.chain, e.contract) not in deployed:
            raise ConfigError(f"exposed contract {e.contract} not deployed on {e.chain}")


def default_config_text() -> str:
    return files("xcsim").joinpath("configs").joinpath(DEFAULT_CONFIG).read_text()


def load_config(path: Optional[Path] = None) -> GenesisConfig:
    """
    Load and validate a genesis document, the packaged two-chain genesis when
    `path` is None.
    """
    source = str(path) if path is not None else f"xcsim:configs/{DEFAULT_CONFIG}"
    try:
        text = path.read_text() if path is not None else default_config_text()
        doc = json.loads(text)
    except OSError as e:
        raise ConfigError(f"cannot read {source}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: invalid JSON: {e}")
    return parse_config(doc)

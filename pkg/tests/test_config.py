import json
from pathlib import Path

import pytest

import conftest
from xcsim.compact import Mode
from xcsim.config import DoSConfig, default_config_text, load_config, parse_config
from xcsim.encoding import Address, ChainId
from xcsim.errors import ConfigError


def test_default_config(helpers: conftest.Helpers) -> None:
    config = load_config()
    assert json.loads(default_config_text()) == helpers.config_doc()
    assert [c.name for c in config.chains] == ["A", "B"]
    assert config.chain("A").chain_id == ChainId.from_name("A")
    assert config.fees.fee_fn(5) == 15
    assert config.scenario.read is not None
    assert config.scenario.read.target == Address.from_int(0xA1)
    assert config.scenario.dos.capital == 1000
    assert config == helpers.config()


def test_explicit_chain_id(helpers: conftest.Helpers) -> None:
    doc = helpers.config_doc()
    doc["chains"][0]["id"] = "0x" + "11" * 32
    config = parse_config(doc)
    assert config.chain("A").chain_id == ChainId(b"\x11" * 32)


def test_integer_addresses(helpers: conftest.Helpers) -> None:
    doc = helpers.config_doc()
    doc["contracts"][0]["address"] = 0xA1
    assert parse_config(doc).contracts[0].address == Address.from_int(0xA1)


@pytest.mark.parametrize(
    "path,value",
    [
        (("fees", "f_base"), 0),
        (("exposure", 0, "mode"), "WriteOnly"),
        (("chains", 0, "color"), "red"),
        (("transport", "drop_probability"), 2),
        (("scenario", "dos", "schedule"), "random"),
    ],
)
def test_schema_errors(helpers: conftest.Helpers, path: tuple, value: object) -> None:
    doc = helpers.config_doc()
    node = doc
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_duplicate_chain(helpers: conftest.Helpers) -> None:
    doc = helpers.config_doc()
    doc["chains"][1]["name"] = "A"
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(doc)


def test_unknown_chain_reference(helpers: conftest.Helpers) -> None:
    doc = helpers.config_doc()
    doc["collateral"][0]["host"] = "C"
    with pytest.raises(ConfigError, match="unknown chain"):
        parse_config(doc)


def test_exposure_of_missing_contract(helpers: conftest.Helpers) -> None:
    doc = helpers.config_doc()
    doc["exposure"][0]["contract"] = "0xdead"
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_exposed_function_must_exist(helpers: conftest.Helpers) -> None:
    doc = helpers.config_doc()
    doc["exposure"][0]["function"] = "setValue(uint256)"
    # the read-only stored value on 0xa1 has no setter
    with pytest.raises(ConfigError, match="missing"):
        helpers.simulation(parse_config(doc))


def test_load_errors(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path.joinpath("missing.json"))
    broken = tmp_path.joinpath("broken.json")
    broken.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(broken)


def test_load_from_file(helpers: conftest.Helpers, tmp_path: Path) -> None:
    doc = helpers.config_doc()
    doc["fees"]["f_base"] = 3
    path = tmp_path.joinpath("genesis.json")
    path.write_text(json.dumps(doc))
    assert load_config(path).fees.f_base == 3


def test_with_mode(helpers: conftest.Helpers) -> None:
    config = helpers.with_mode("setValue(uint256)", Mode.READ_ONLY)
    (entry,) = [e for e in config.exposure if e.function == "setValue(uint256)"]
    assert entry.mode == Mode.READ_ONLY


def test_with_seed(helpers: conftest.Helpers) -> None:
    config = helpers.config().with_seed(77)
    assert config.transport.seed == 77
    assert config.scenario.seed == 77


def test_cost_schedules() -> None:
    assert [DoSConfig(costs=(5,)).cost(n) for n in (1, 2, 50)] == [5, 5, 5]
    arithmetic = DoSConfig(schedule="arithmetic", costs=(2,), step=3)
    assert [arithmetic.cost(n) for n in (1, 2, 3)] == [2, 5, 8]
    cycle = DoSConfig(schedule="cycle", costs=(1, 9))
    assert [cycle.cost(n) for n in (1, 2, 3, 4)] == [1, 9, 1, 9]
    with pytest.raises(ConfigError):
        DoSConfig(schedule="random")

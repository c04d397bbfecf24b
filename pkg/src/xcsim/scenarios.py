#!/usr/bin/env python3
"""
Named scenarios. Each one builds fresh simulations from a genesis config,
drives them to quiescence and raises ScenarioFailure when an end-state
assertion does not hold.
"""

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Callable, Dict, List, Optional, Sequence, Tuple

from .auth import AdmissionRecord, CapacityTracker, Settlement
from .chain import TxKind
from .compact import Mode
from .config import DoSConfig, GenesisConfig, PatternConfig
from .contracts import (
    GET_VALUE,
    HANDLE_RESULT,
    HANDLE_WRITE_RESULT,
    INITIATE,
    REQUEST_VALUE,
    SET_VALUE,
    SLOT0,
    UPDATE_REMOTE_VALUE,
    encode_initiate,
)
from .encoding import (
    ZERO_ADDRESS,
    Address,
    ChainId,
    Selector,
    encode_bool,
    encode_words,
    pack,
)
from .errors import ConfigError, ScenarioFailure
from .metrics import MetricsRecord, collect
from .netsim import EventKind, SimEvent, sub_seed
from .router import NO_PARENT, ROUTER_ADDRESS, Callback, ExternalContract
from .simulation import LocalAction, Outcome, RequestRecord, Simulation
from .sync import ConflictRecord

log = logging.getLogger(__name__)

# funds for the synthetic senders of fuzz and soak workloads
WORKLOAD_SENDER = Address.from_int(0xF0225)
WORKLOAD_FUNDS = 10**15

SCENARIOS = ("read", "write", "dos", "fuzz", "soak")


def check_end_state(sim: Simulation) -> None:
    """
    Invariants every scenario run must end in.
    """
    pointer = len(sim.trace)
    if not sim.quiescent:
        raise ScenarioFailure("simulation did not drain", pointer)
    pending = sim.unterminated()
    if pending:
        raise ScenarioFailure(
            f"{len(pending)} requests without a terminal outcome, first "
            f"0x{pending[0].request_id.hex()}",
            pointer,
        )
    for name, report in sim.consistency().items():
        if not report.consistent:
            address, key, main, compact = report.mismatches[0]
            raise ScenarioFailure(
                f"chain {name}: {len(report.mismatches)} mismatches, first "
                f"{address}:{key} main={main} compact={compact}",
                pointer,
            )
    if sim.ledger.locks:
        raise ScenarioFailure(f"{len(sim.ledger.locks)} fee locks never released", pointer)
    if not sim.conserved:
        raise ScenarioFailure(
            f"fee units not conserved: {sim.ledger.total()} != {sim.ledger.funded}",
            pointer,
        )
    if sim.violations:
        raise ScenarioFailure(sim.violations[0], pointer)


def _pattern(config: GenesisConfig, name: str) -> PatternConfig:
    pattern = config.scenario.read if name == "read" else config.scenario.write
    if pattern is None:
        raise ConfigError(f"config has no scenario.{name} section")
    return pattern


def with_stored_value(
    config: GenesisConfig, chain: str, address: Address, value: int
) -> GenesisConfig:
    contracts = tuple(
        replace(c, value=value) if (c.chain, c.address) == (chain, address) else c
        for c in config.contracts
    )
    return replace(config, contracts=contracts)


def run_read_scenario(
    config: GenesisConfig,
    trace_out: Optional[IO[str]] = None,
    value: Optional[int] = None,
) -> Tuple[MetricsRecord, Simulation]:
    """
    A contract on `chain` asks for the value a contract on `target_chain`
    stores and keeps it once the callback arrives.
    """
    p = _pattern(config, "read")
    if value is not None:
        config = with_stored_value(config, p.target_chain, p.target, value)
    sim = Simulation(config, trace_out)
    target_chain = sim.node(p.target_chain).chain_id
    sim.submit(
        p.chain,
        LocalAction(
            p.caller,
            p.contract,
            Selector.of(REQUEST_VALUE),
            encode_words([target_chain.as_word(), p.target.as_word()]),
        ),
    )
    sim.run()
    check_end_state(sim)

    stored = sim.node(p.target_chain).state.load(p.target, SLOT0)
    retrieved = sim.node(p.chain).state.load(p.contract, SLOT0)
    if retrieved != stored:
        raise ScenarioFailure(
            f"retrievedValue {retrieved} != storedValue {stored}", len(sim.trace)
        )
    metrics = collect(sim, "read")
    metrics.values.update(storedValue=stored, retrievedValue=retrieved)
    return metrics, sim


def run_write_scenario(
    config: GenesisConfig,
    trace_out: Optional[IO[str]] = None,
    value: Optional[int] = None,
) -> Tuple[MetricsRecord, Simulation]:
    """
    A contract on `chain` updates the value stored on `target_chain` and
    records whether the update was confirmed. When the destination only
    exposes setValue read-only the update must be refused instead.
    """
    p = _pattern(config, "write")
    value = p.value if value is None else value
    sim = Simulation(config, trace_out)
    target = sim.node(p.target_chain)
    sim.submit(
        p.chain,
        LocalAction(
            p.caller,
            p.contract,
            Selector.of(UPDATE_REMOTE_VALUE),
            encode_words([target.chain_id.as_word(), p.target.as_word(), value]),
        ),
    )
    sim.run()
    check_end_state(sim)

    pointer = len(sim.trace)
    main_value = target.state.load(p.target, SLOT0)
    compact_value = target.compact.state.s_compact.get((p.target, SLOT0), 0)
    success = sim.node(p.chain).state.load(p.contract, SLOT0) == 1
    roots = [r for r in sim.requests.values() if r.parent_id == NO_PARENT]
    entry = target.policy.lookup(p.target, Selector.of(SET_VALUE))
    writable = entry is not None and entry.mode == Mode.READ_WRITE
    if writable:
        if (main_value, compact_value) != (value, value):
            raise ScenarioFailure(
                f"storedValue main={main_value} compact={compact_value}, expected {value}",
                pointer,
            )
        if not success:
            raise ScenarioFailure("writeSuccessful is false", pointer)
    else:
        if success:
            raise ScenarioFailure("write to a read-only exposure was confirmed", pointer)
        for r in roots:
            if r.outcome != Outcome.FAILED:
                raise ScenarioFailure(
                    f"request 0x{r.request_id.hex()} ended {r.outcome_text}", pointer
                )

    metrics = collect(sim, "write")
    metrics.values.update(
        requestedValue=value,
        storedValue=main_value,
        compactValue=compact_value,
        writeSuccessful=success,
    )
    if roots:
        metrics.values["outcome"] = roots[0].outcome_text
    return metrics, sim


@dataclass
class DoSReport:
    capital: int
    f_base: int
    accepted: int
    refused: int
    records: List[AdmissionRecord]
    max_window_load: int
    comp_max: Optional[int]
    conserved: bool

    @property
    def n_star(self) -> int:
        return self.accepted

    @property
    def total_cost_curve(self) -> List[int]:
        return [r.total_cost for r in self.records if r.accepted]

    @property
    def capacity_exceeded(self) -> bool:
        return self.comp_max is not None and self.max_window_load > self.comp_max

    def summary(self) -> List[str]:
        lines = [
            f"capital A: {self.capital}, f_base: {self.f_base}",
            f"accepted n*: {self.accepted}, refused: {self.refused}",
            f"T(n*): {self.total_cost_curve[-1] if self.total_cost_curve else 0}",
            f"max window load: {self.max_window_load}",
        ]
        if self.comp_max is not None:
            lines.append(f"Comp_max: {self.comp_max}, exceeded: {self.capacity_exceeded}")
        lines.append(f"conserved: {self.conserved}")
        return lines


def run_dos_experiment(
    config: GenesisConfig,
    dos: Optional[DoSConfig] = None,
    trace_out: Optional[IO[str]] = None,
) -> DoSReport:
    """
    Flood the admission check of one chain with invocations toward another
    until the attacker's capital runs out. Every accepted invocation keeps its
    fee locked until the flood ends, then executes at its scheduled cost.
    """
    dos = dos or config.scenario.dos
    if dos.f_base is not None:
        config = replace(config, fees=replace(config.fees, f_base=dos.f_base))
    if len(config.chains) < 2:
        raise ConfigError("the DoS experiment needs two chains")
    source_name = dos.chain or config.chains[0].name
    target_name = dos.target_chain or next(
        c.name for c in config.chains if c.name != source_name
    )
    sim = Simulation(config, trace_out)
    source = sim.node(source_name)
    target = sim.node(target_name)
    attacker = (source.chain_id, dos.attacker)
    sim.fund(source_name, dos.attacker, dos.capital)
    capital = sim.ledger.balance(attacker)
    sim.ensure_collateral(capital)
    target.capacity = CapacityTracker(dos.window, dos.comp_max)

    exposed = sorted(target.policy.contracts())
    flood = ExternalContract(
        exposed[0] if exposed else target.router.address,
        Selector.of(GET_VALUE),
        encode_words([]),
    )
    accepted: List[Tuple[bytes, int]] = []
    for n in range(1, dos.max_attempts + 1):
        tick = (n - 1) // dos.rate
        cost = dos.cost(n)
        request_id = source.router.next_request_id(dos.attacker, tick)
        decision = source.admission.admission_check(
            attacker, request_id, cost, target.chain_id, target.capacity.load(tick)
        )
        sim.trace.record(
            SimEvent(tick, n, EventKind.ACTION, source.chain_id, request_id, pack(n, cost))
        )
        if not decision.accepted:
            break
        _, event = source.router.initiate_cross_chain_call(
            target.chain_id, flood, Callback.empty(), dos.attacker, tick
        )
        sim.trace.record(SimEvent.committed(tick, event))
        target.capacity.record(tick, cost)
        accepted.append((request_id, cost))

    for request_id, cost in accepted:
        sim.ledger.settle_or_refund(request_id, Settlement.executed(cost))

    records = source.admission.history[attacker]
    report = DoSReport(
        capital,
        config.fees.f_base,
        source.admission.accepted,
        source.admission.refused,
        list(records),
        target.capacity.max_load(),
        dos.comp_max,
        sim.conserved,
    )
    _check_dos(report, dos)
    return report


def _check_dos(report: DoSReport, dos: DoSConfig) -> None:
    total = report.total_cost_curve[-1] if report.total_cost_curve else 0
    if total > report.capital:
        raise ScenarioFailure(f"T(n*)={total} exceeds capital {report.capital}")
    refused = [r for r in report.records if not r.accepted]
    if refused and total + refused[0].fee <= report.capital:
        raise ScenarioFailure(
            f"invocation {refused[0].n} refused although T(n+1)="
            f"{total + refused[0].fee} fits capital {report.capital}"
        )
    if not refused and report.accepted == dos.max_attempts:
        log.warning(f"attempt limit {dos.max_attempts} reached before capital ran out")
    if not report.conserved:
        raise ScenarioFailure("fee units not conserved")


def _no_params(rng: random.Random) -> bytes:
    return encode_words([])


PARAMS: Dict[Selector, Callable[[random.Random], bytes]] = {
    Selector.of(GET_VALUE): _no_params,
    Selector.of(SET_VALUE): lambda rng: encode_words([rng.randrange(1 << 16)]),
    Selector.of(HANDLE_RESULT): lambda rng: encode_words([rng.randrange(1 << 16)]),
    Selector.of(HANDLE_WRITE_RESULT): lambda rng: encode_bool(rng.random() < 0.5),
}

# callback handler paired with a target function
CALLBACKS = {
    Selector.of(GET_VALUE): Selector.of(HANDLE_RESULT),
    Selector.of(SET_VALUE): Selector.of(HANDLE_WRITE_RESULT),
}


@dataclass(frozen=True)
class GeneratedCall:
    index: int
    chain: str
    target_chain: str
    target: ExternalContract
    callback: Callback
    authorized: bool

    def action(self, target_chain: ChainId) -> LocalAction:
        return LocalAction(
            WORKLOAD_SENDER,
            ROUTER_ADDRESS,
            Selector.of(INITIATE),
            encode_initiate(target_chain, self.target, self.callback),
        )


class CallGenerator:
    """
    Random cross-chain calls sent by an externally owned account straight to
    the router of its chain. A share of them targets functions or keys the
    destination does not expose.
    """

    def __init__(self, sim: Simulation, rng: random.Random, unauthorized_ratio: float) -> None:
        self.sim = sim
        self.rng = rng
        self.ratio = unauthorized_ratio
        self.names = sorted(sim.by_name)

    def _authorized(self, target_chain: str) -> Optional[ExternalContract]:
        entries = self.sim.node(target_chain).policy.entries
        if not entries:
            return None
        entry = self.rng.choice(entries)
        params = PARAMS.get(entry.selector, _no_params)(self.rng)
        return ExternalContract(entry.contract, entry.selector, params)

    def _unauthorized(self, target_chain: str) -> ExternalContract:
        node = self.sim.node(target_chain)
        kind = self.rng.randrange(4)
        if kind == 0:
            return ExternalContract(ZERO_ADDRESS, Selector.of(GET_VALUE))
        if kind == 1:
            address = Address.from_int(self.rng.randrange(1 << 32, 1 << 40))
            return ExternalContract(address, Selector.of(GET_VALUE), encode_words([]))
        exposed = node.policy.contracts()
        if kind == 2 and exposed:
            # exposed contract, function it does not expose
            contract = self.rng.choice(sorted(exposed))
            missing = sorted(
                s
                for s in node.state.s_main[contract].functions
                if node.policy.lookup(contract, s) is None
            )
            selector = self.rng.choice(missing) if missing else Selector.of("hidden()")
            params = PARAMS.get(selector, _no_params)(self.rng)
            return ExternalContract(contract, selector, params)
        hidden = sorted(
            a for a in node.state.s_main if a not in exposed and a != node.router.address
        )
        if not hidden:
            hidden = [Address.from_int(self.rng.randrange(1 << 32, 1 << 40))]
        # deployed but not exposed at all
        return ExternalContract(
            self.rng.choice(hidden), Selector.of(SET_VALUE), encode_words([7])
        )

    def _callback(self, chain: str, target: ExternalContract) -> Callback:
        handler = CALLBACKS.get(target.function_selector)
        if handler is None or self.rng.random() < 0.3:
            return Callback.empty()
        node = self.sim.node(chain)
        for e in node.policy.entries:
            if e.selector == handler and e.mode == Mode.READ_WRITE:
                return Callback(node.chain_id, e.contract, handler)
        return Callback.empty()

    def generate(self, index: int) -> GeneratedCall:
        chain = self.rng.choice(self.names)
        target_chain = self.rng.choice([n for n in self.names if n != chain])
        authorized = self.rng.random() >= self.ratio
        target = self._authorized(target_chain) if authorized else None
        if target is None:
            authorized = False
            target = self._unauthorized(target_chain)
        return GeneratedCall(
            index, chain, target_chain, target, self._callback(chain, target), authorized
        )


@dataclass
class WorkloadResult:
    calls: List[GeneratedCall]
    sim: Simulation
    violations: List[str] = field(default_factory=list)
    unauthorized: int = 0
    unauthorized_accepted: int = 0


def prepare_workload(sim: Simulation) -> None:
    for name in sim.by_name:
        sim.fund(name, WORKLOAD_SENDER, WORKLOAD_FUNDS)
    sim.ensure_collateral(WORKLOAD_FUNDS)


def _submit(sim: Simulation, calls: Sequence[GeneratedCall], per_tick: int = 4) -> None:
    for i, call in enumerate(calls):
        target_chain = sim.node(call.target_chain).chain_id
        sim.submit(call.chain, call.action(target_chain), tick=i // per_tick)


def run_isolated(
    sim: Simulation, calls: Sequence[GeneratedCall], observe: bool = True
) -> WorkloadResult:
    """
    Run `calls` to quiescence. With `observe`, S_main of every chain is
    digested around each event: only a block of that chain may change it,
    and inside the block only SyncMirror transactions may write.
    """
    result = WorkloadResult(list(calls), sim)
    _submit(sim, calls)
    nodes = list(sim.nodes.values())
    authorized_keys = {n.chain_id: n.policy.authorized_keys() for n in nodes}
    while True:
        before = {n.chain_id: n.main_digest() for n in nodes} if observe else {}
        event = sim.step()
        if event is None:
            break
        if not observe:
            continue
        for n in nodes:
            changed = n.main_digest() != before[n.chain_id]
            if changed and (event.kind != EventKind.MINE or event.chain != n.chain_id):
                result.violations.append(
                    f"tick {event.tick}: S_main of {n.name} changed at "
                    f"{event.kind.value} on {sim.nodes[event.chain].name}"
                )
            if not set(n.compact.state.s_compact) <= authorized_keys[n.chain_id]:
                result.violations.append(
                    f"tick {event.tick}: S_compact of {n.name} holds unexposed keys"
                )
        if event.kind == EventKind.MINE:
            node = sim.nodes[event.chain]
            block = node.state.head
            mirrored = False
            for r in block.receipts:
                if r.kind == TxKind.CROSS_CHAIN_INBOUND:
                    result.violations.append(
                        f"tick {event.tick}: inbound call executed on main chain"
                    )
                elif r.kind == TxKind.SYNC_MIRROR:
                    mirrored = mirrored or bool(r.writes)
                elif r.writes:
                    # workload transactions only reach the router, which stores nothing
                    result.violations.append(
                        f"tick {event.tick}: S_main of {node.name} written by "
                        f"transaction 0x{r.tx_digest.hex()[:8]}"
                    )
            if node.main_digest() != before[node.chain_id] and not mirrored:
                result.violations.append(
                    f"tick {event.tick}: S_main of {node.name} changed without a mirror"
                )

    for record in sim.requests.values():
        if record.call is None or record.parent_id != NO_PARENT:
            continue
        node = sim.nodes[record.target]
        target = record.call.target
        exposed = (
            not target.contract_address.is_zero()
            and node.policy.lookup(target.contract_address, target.function_selector)
            is not None
        )
        if not exposed:
            result.unauthorized += 1
            if record.outcome != Outcome.FAILED:
                result.unauthorized_accepted += 1
                result.violations.append(
                    f"unauthorized request 0x{record.request_id.hex()} ended "
                    f"{record.outcome_text}"
                )
    return result


def generate_calls(
    sim: Simulation, seed: int, count: int, unauthorized_ratio: float
) -> List[GeneratedCall]:
    gen = CallGenerator(sim, random.Random(seed), unauthorized_ratio)
    return [gen.generate(i) for i in range(count)]


def run_workload(
    config: GenesisConfig,
    seed: int,
    count: int,
    unauthorized_ratio: float = 0.0,
    trace_out: Optional[IO[str]] = None,
    observe: bool = True,
) -> WorkloadResult:
    sim = Simulation(config, trace_out)
    prepare_workload(sim)
    calls = generate_calls(sim, seed, count, unauthorized_ratio)
    result = run_isolated(sim, calls, observe)
    check_end_state(sim)
    return result


@dataclass
class FuzzReport:
    iterations: int = 0
    # iterations run with inbound results held for six blocks
    six_block_iterations: int = 0
    s_main_violations: int = 0
    unauthorized: int = 0
    unauthorized_accepted: int = 0
    violations: List[str] = field(default_factory=list)
    outcomes: Dict[str, int] = field(default_factory=dict)
    repro: Optional[str] = None

    def merge(self, result: WorkloadResult, held: bool = False) -> None:
        self.iterations += len(result.calls)
        if held:
            self.six_block_iterations += len(result.calls)
        self.s_main_violations += sum(1 for v in result.violations if "S_main" in v)
        self.unauthorized += result.unauthorized
        self.unauthorized_accepted += result.unauthorized_accepted
        self.violations.extend(result.violations)
        for r in result.sim.requests.values():
            key = r.outcome.value if r.outcome else "Pending"
            self.outcomes[key] = self.outcomes.get(key, 0) + 1

    def summary(self) -> List[str]:
        lines = [
            f"iterations: {self.iterations} (six-block rule: {self.six_block_iterations})",
            f"s_main_violations: {self.s_main_violations}",
            f"unauthorized calls: {self.unauthorized} "
            f"(accepted {self.unauthorized_accepted})",
        ]
        lines += [f"  {k}: {v}" for k, v in sorted(self.outcomes.items())]
        return lines


def _bypass(config: GenesisConfig, enabled: bool) -> GenesisConfig:
    chains = tuple(replace(c, compact_bypass=enabled) for c in config.chains)
    return replace(config, chains=chains)


def _chunk_config(config: GenesisConfig, chunk: int) -> Tuple[GenesisConfig, int]:
    """
    Odd chunks hold inbound results for six blocks instead of releasing them
    after compact-chain validation.
    """
    base = sub_seed("fuzz", config.scenario.seed)
    seed = (base + chunk) & ((1 << 64) - 1)
    transport = replace(config.transport, seed=seed)
    config = _bypass(config, chunk % 2 == 0)
    return replace(config, transport=transport), seed


def _fuzz_chunk(config: GenesisConfig, chunk: int, count: int, ratio: float) -> WorkloadResult:
    chunk_config, seed = _chunk_config(config, chunk)
    sim = Simulation(chunk_config)
    prepare_workload(sim)
    calls = generate_calls(sim, seed, count, ratio)
    result = run_isolated(sim, calls)
    try:
        check_end_state(sim)
    except ScenarioFailure as e:
        result.violations.append(str(e))
    return result


def minimize(
    config: GenesisConfig, chunk: int, calls: Sequence[GeneratedCall]
) -> Optional[str]:
    """
    The trace of the first single call that still violates isolation on
    its own, or None when only the combination does.
    """
    chunk_config, _ = _chunk_config(config, chunk)
    for call in calls:
        sim = Simulation(chunk_config)
        prepare_workload(sim)
        result = run_isolated(sim, [call])
        if result.violations:
            return f"call {call.index}: {call}\n" + sim.trace.text()
    return None


def run_isolation_fuzz(
    config: GenesisConfig,
    iterations: Optional[int] = None,
    workers: Optional[int] = None,
) -> FuzzReport:
    fuzz = config.scenario.fuzz
    iterations = fuzz.iterations if iterations is None else iterations
    workers = workers or fuzz.workers
    chunks = []
    left = iterations
    while left > 0:
        chunks.append(min(fuzz.batch, left))
        left -= chunks[-1]

    report = FuzzReport()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_fuzz_chunk, config, i, count, fuzz.unauthorized_ratio)
            for i, count in enumerate(chunks)
        ]
        results = [f.result() for f in futures]

    for i, result in enumerate(results):
        report.merge(result, held=i % 2 == 1)
        if result.violations and report.repro is None:
            report.repro = minimize(config, i, result.calls) or (
                f"chunk {i}: " + result.violations[0]
            )
    if report.violations:
        raise ScenarioFailure(
            f"{len(report.violations)} isolation violations, first: "
            f"{report.violations[0]}\nrepro:\n{report.repro}"
        )
    return report


@dataclass
class SoakReport:
    bypass: MetricsRecord
    no_bypass: MetricsRecord
    bypass_requests: List[RequestRecord] = field(default_factory=list)
    bypass_conflicts: List[ConflictRecord] = field(default_factory=list)

    def summary(self) -> List[str]:
        lines = []
        for label, m in (("compact bypass", self.bypass), ("six-block rule", self.no_bypass)):
            latency = f"{m.mean_latency:.2f}" if m.mean_latency is not None else "-"
            lines.append(
                f"{label}: {len(m.latencies)} legs in {m.ticks} ticks, "
                f"throughput {m.throughput:.3f}/tick, mean latency {latency}"
            )
        return lines


def run_soak(
    config: GenesisConfig,
    requests: Optional[int] = None,
    trace_out: Optional[IO[str]] = None,
) -> SoakReport:
    """
    The same random round trips, once with compact-chain validation
    finalizing inbound results at once and once held for six blocks.
    """
    count = config.scenario.soak.requests if requests is None else requests
    seed = sub_seed("scenario", config.scenario.seed)
    metrics = []
    requests_seen: List[RequestRecord] = []
    conflicts: List[ConflictRecord] = []
    for enabled in (True, False):
        result = run_workload(
            _bypass(config, enabled),
            seed,
            count,
            trace_out=trace_out if enabled else None,
            observe=False,
        )
        metrics.append(collect(result.sim, "soak"))
        if enabled:
            requests_seen = list(result.sim.requests.values())
            conflicts = result.sim.conflicts()
    return SoakReport(metrics[0], metrics[1], requests_seen, conflicts)

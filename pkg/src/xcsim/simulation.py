#!/usr/bin/env python3
"""
One simulation instance: a node per configured chain (main chain, compact
chain, synchronizer, router, mempool) sharing a collateral ledger, a
transport and a single event queue.

Inbound deliveries run in the order admission -> mempool -> compact chain ->
router -> synchronizer. Every executed event is appended to the trace,
followed by the router events it committed.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import IO, Dict, List, Optional, Sequence, Tuple

from .auth import (
    AdmissionController,
    AdmissionDecision,
    CapacityTracker,
    CollateralLedger,
    FeeSchedule,
    Settlement,
    SettlementRecord,
    XChainMempool,
)
from .chain import (
    CallContext,
    ChainState,
    ExecutionHost,
    Transaction,
    mine_block,
    register_contract,
)
from .compact import CompactChain, CompactExecution, ExposureEntry, ExposurePolicy
from .config import ChainConfig, GenesisConfig
from .contracts import KINDS, declared_writes, router_contract
from .encoding import Address, ChainId, Selector, pack
from .errors import (
    AdmissionRefused,
    ConfigError,
    InsufficientFunds,
    InvalidContractAddress,
    Revert,
    ScenarioFailure,
    UnauthorizedTarget,
    UnknownTargetChain,
    WriteToReadOnly,
)
from .netsim import (
    EnodeRecord,
    EnodeRegistry,
    Envelope,
    EventKind,
    EventQueue,
    SimEvent,
    Trace,
    Transport,
    Unroutable,
    Watcher,
)
from .router import (
    NO_PARENT,
    Action,
    Callback,
    CallBackResult,
    CrossChainCall,
    CrossChainRequest,
    ExternalContract,
    IncomingOutcome,
    Router,
)
from .sync import ConflictRecord, Synchronizer, SyncReport, verify_consistency

log = logging.getLogger(__name__)

ACTION_GAS_LIMIT = 1 << 20


class Outcome(Enum):
    CALLBACK_DELIVERED = "CallbackDelivered"
    COMPLETED = "Completed"
    FORWARDED = "Forwarded"
    FAILED = "Failed"


@dataclass
class RequestRecord:
    request_id: bytes
    parent_id: bytes
    source: ChainId
    target: ChainId
    initiated_tick: int
    fee_locked: int = 0
    fee_consumed: int = 0
    fee_refunded: int = 0
    terminal_tick: Optional[int] = None
    outcome: Optional[Outcome] = None
    reason: str = ""
    cost: int = 0
    call: Optional[CrossChainCall] = None

    @property
    def funding_id(self) -> bytes:
        return self.request_id if self.parent_id == NO_PARENT else self.parent_id

    @property
    def latency(self) -> Optional[int]:
        if self.terminal_tick is None:
            return None
        return self.terminal_tick - self.initiated_tick

    @property
    def outcome_text(self) -> str:
        if self.outcome is None:
            return "Pending"
        if self.outcome == Outcome.FAILED:
            return f"Failed({self.reason})"
        return self.outcome.value


@dataclass
class Funding:
    """
    One root fee lock and the legs it pays for.
    """

    request_id: bytes
    legs: int = 1
    cost: int = 0
    failed: bool = False
    settlement: Optional[SettlementRecord] = None


@dataclass(frozen=True)
class LocalAction:
    sender: Address
    target: Address
    selector: Selector
    params: bytes = b""
    gas_limit: int = ACTION_GAS_LIMIT


@dataclass(frozen=True)
class TopUp:
    owner: ChainId
    host: ChainId
    amount: int


def build_policy(config: GenesisConfig, chain: str) -> ExposurePolicy:
    return ExposurePolicy(
        tuple(
            ExposureEntry(e.contract, Selector.of(e.function), frozenset(e.keys), e.mode)
            for e in config.exposure
            if e.chain == chain
        )
    )


class ChainNode(ExecutionHost):
    def __init__(
        self,
        sim: "Simulation",
        config: ChainConfig,
        schedule: FeeSchedule,
        policy: ExposurePolicy,
        window: int,
    ) -> None:
        self.sim = sim
        self.config = config
        self.chain_id = config.chain_id
        self.name = config.name
        self.state = ChainState(self.chain_id, schedule)
        self.state.host = self
        self.router = Router(self.chain_id)
        self.compact = CompactChain(self.chain_id, policy, schedule)
        self.sync = Synchronizer(self.state, self.compact)
        self.admission = AdmissionController(sim.ledger, schedule)
        self.mempool = XChainMempool()
        self.capacity = CapacityTracker(window)
        self.local: List[Transaction] = []
        self.mirrors: List[Transaction] = []
        self.nonces: Dict[Address, int] = {}
        # fee locks taken while the current block executes: id -> (target, fee)
        self.block_locks: Dict[bytes, Tuple[ChainId, int]] = {}
        # results waiting for their mempool entry to finalize
        self.held: Dict[bytes, IncomingOutcome] = {}
        self.mine_scheduled = False
        register_contract(self.state, router_contract(self.router.address))

    @property
    def policy(self) -> ExposurePolicy:
        return self.compact.policy

    def deploy(self, kind: str, address: Address, value: int, writable: bool) -> None:
        factory = KINDS[kind]
        if kind == "stored_value":
            account = factory(address, value, writable)
        else:
            account = factory(address)
        register_contract(self.state, account)

    def authorize(self) -> None:
        for e in self.policy.entries:
            account = self.state.s_main.get(e.contract)
            if account is None or e.selector not in account.functions:
                raise ConfigError(
                    f"chain {self.name}: exposed function {e.selector} "
                    f"missing on {e.contract}"
                )
        self.compact.authorize(self.state)
        self.state.seal_genesis()

    def next_nonce(self, sender: Address) -> int:
        nonce = self.nonces.get(sender, 0)
        self.nonces[sender] = nonce + 1
        return nonce

    def has_work(self) -> bool:
        return bool(self.local or self.mirrors or self.held or self.mempool.pending())

    def estimate_cd(self, target: ExternalContract, callback: Callback) -> int:
        schedule = self.state.schedule
        cd = schedule.estimate_cd(declared_writes(target.function_selector))
        if not callback.is_empty:
            cd += schedule.estimate_cd(declared_writes(callback.callback_selector))
        return cd

    def initiate_cross_chain_call(
        self,
        ctx: CallContext,
        target_chain: ChainId,
        target: ExternalContract,
        callback: Callback,
    ) -> bytes:
        if target_chain not in self.router.known_chains:
            raise UnknownTargetChain(f"chain {target_chain.short()} is not connected")
        tick = self.sim.tick
        request_id = self.router.next_request_id(ctx.caller, tick)
        decision = self.admission.admission_check(
            (self.chain_id, ctx.origin),
            request_id,
            self.estimate_cd(target, callback),
            target_chain,
        )
        if not decision.accepted:
            raise Revert(f"admission refused: {decision.reason}")
        _, event = self.router.initiate_cross_chain_call(
            target_chain, target, callback, ctx.caller, tick
        )
        self.block_locks[request_id] = (target_chain, decision.fee)
        ctx.events.append(event)
        return request_id

    def execute_inbound(self, call: CrossChainCall) -> CompactExecution:
        return self.compact.apply_cross_chain_tx(call, self.router.address)

    def main_digest(self) -> bytes:
        return self.state.state_digest()


class Simulation:
    def __init__(self, config: GenesisConfig, trace_out: Optional[IO[str]] = None) -> None:
        self.config = config
        self.tick = 0
        self.ledger = CollateralLedger()
        self.queue = EventQueue()
        self.trace = Trace(trace_out)
        self.registry = EnodeRegistry()
        self.transport = Transport(config.transport)
        self.watcher = Watcher(self.registry, self.transport)
        self.requests: Dict[bytes, RequestRecord] = {}
        self.funding: Dict[bytes, Funding] = {}
        self.violations: List[str] = []
        # router events committed by the event being executed
        self.committed: List[SimEvent] = []

        self.nodes: Dict[ChainId, ChainNode] = {}
        self.by_name: Dict[str, ChainNode] = {}
        for c in config.chains:
            node = ChainNode(
                self,
                c,
                config.fees,
                build_policy(config, c.name),
                config.scenario.dos.window,
            )
            self.nodes[c.chain_id] = node
            self.by_name[c.name] = node
            self.registry.register_enode(EnodeRecord(c.chain_id, c.endpoint, c.public))
        for node in self.nodes.values():
            for other in self.nodes:
                if other != node.chain_id:
                    node.router.register_chain(other)
        for contract in config.contracts:
            self.by_name[contract.chain].deploy(
                contract.kind, contract.address, contract.value, contract.writable
            )
        for node in self.nodes.values():
            node.authorize()

        for a in config.accounts:
            self.ledger.deposit((self.node(a.chain).chain_id, a.address), a.balance)
        for col in config.collateral:
            self.ledger.open_account(
                self.node(col.owner).chain_id, self.node(col.host).chain_id, col.amount
            )

    def node(self, name: str) -> ChainNode:
        try:
            return self.by_name[name]
        except KeyError:
            raise ConfigError(f"unknown chain: {name}")

    def fund(self, chain: str, address: Address, amount: int) -> None:
        self.ledger.deposit((self.node(chain).chain_id, address), amount)

    def ensure_collateral(self, amount: int) -> None:
        """
        Give every ordered chain pair at least `amount` of uncommitted
        collateral, opening accounts or topping them up from fresh treasury
        funds.
        """
        for owner in self.nodes:
            for host in self.nodes:
                if owner == host:
                    continue
                account = self.ledger.accounts.get((owner, host))
                if account is None:
                    self.ledger.open_account(owner, host, amount)
                    continue
                free = account.balance - account.total_locked
                if free < amount:
                    self.ledger.fund_treasury(owner, amount - free)
                    self.ledger.top_up(owner, host, amount - free)

    # scenario actions

    def submit(
        self, chain: str, action: LocalAction, tick: Optional[int] = None
    ) -> SimEvent:
        node = self.node(chain)
        return self.queue.push(
            self.tick if tick is None else tick,
            EventKind.ACTION,
            node.chain_id,
            data=action,
        )

    def top_up(self, owner: str, host: str, amount: int, tick: Optional[int] = None) -> SimEvent:
        top = TopUp(self.node(owner).chain_id, self.node(host).chain_id, amount)
        return self.queue.push(
            self.tick if tick is None else tick,
            EventKind.TOP_UP,
            top.owner,
            payload=pack(top.host.as_word(), amount),
            data=top,
        )

    # event loop

    def step(self) -> Optional[SimEvent]:
        event = self.queue.step()
        if event is None:
            return None
        assert event.tick >= self.tick, "event queue went back in time"
        self.tick = event.tick
        node = self.nodes[event.chain]
        if event.kind == EventKind.ACTION:
            self._action(node, event)
        elif event.kind == EventKind.MINE:
            self._mine(node, event)
        elif event.kind == EventKind.DELIVER:
            self._deliver(node, event)
        elif event.kind == EventKind.TOP_UP:
            self._top_up(event)
        self.trace.record(event)
        for committed in self.committed:
            self.trace.record(committed)
        self.committed = []
        return event

    def run(self, max_events: int = 1_000_000) -> int:
        """
        Execute events until the queue is empty.
        """
        count = 0
        while self.step() is not None:
            count += 1
            if count >= max_events:
                raise ScenarioFailure(
                    f"no quiescence after {count} events", len(self.trace)
                )
        return count

    @property
    def quiescent(self) -> bool:
        return not self.queue and all(
            not n.has_work() and n.sync.quiescent for n in self.nodes.values()
        )

    def consistency(self) -> Dict[str, SyncReport]:
        return {
            n.name: verify_consistency(n.state, n.compact.state, n.policy)
            for n in self.nodes.values()
        }

    @property
    def conserved(self) -> bool:
        return self.ledger.total() == self.ledger.funded

    def _schedule_mine(self, node: ChainNode, tick: int) -> None:
        if not node.mine_scheduled:
            node.mine_scheduled = True
            self.queue.push(tick + node.config.block_interval, EventKind.MINE, node.chain_id)

    def _action(self, node: ChainNode, event: SimEvent) -> None:
        action: LocalAction = event.data
        tx = Transaction(
            action.sender,
            action.target,
            action.selector,
            action.params,
            node.next_nonce(action.sender),
            action.gas_limit,
        )
        event.payload = tx.encode()
        node.local.append(tx)
        self._schedule_mine(node, event.tick)

    def _top_up(self, event: SimEvent) -> None:
        top: TopUp = event.data
        try:
            self.ledger.top_up(top.owner, top.host, top.amount)
        except InsufficientFunds as e:
            log.warning(f"top-up skipped: {e}")

    def _mine(self, node: ChainNode, event: SimEvent) -> None:
        tick = event.tick
        node.mine_scheduled = False
        # mirrors go last so that they win over local writes of the same block
        txs = node.local + node.mirrors
        node.local, node.mirrors = [], []
        node.block_locks = {}
        block = mine_block(node.state, txs, timestamp=tick)
        event.payload = block.digest

        emitted = {
            e.request_id: e for e in block.events if isinstance(e, CrossChainRequest)
        }
        for request_id, (target, fee) in node.block_locks.items():
            if request_id in emitted:
                record = self._open_request(
                    request_id, NO_PARENT, node.chain_id, target, tick, fee
                )
                record.call = emitted[request_id].call
                self.committed.append(SimEvent.committed(tick, emitted[request_id]))
            else:
                self.ledger.settle_or_refund(request_id, Settlement.cancelled())
        node.block_locks = {}

        failures = len(node.sync.failures)
        node.sync.on_main_block(block, tick)
        for f in node.sync.failures[failures:]:
            self.violations.append(
                f"chain {node.name}: mirror 0x{f.tx_digest.hex()} rejected "
                f"at height {f.height}: {f.error}"
            )

        self._dispatch(*self.watcher.watch_and_forward(block, tick), tick)
        for entry in node.mempool.finalize_ready(node.state.height):
            outcome = node.held.pop(entry.tx_digest, None)
            if outcome is not None:
                self._release(node, outcome, tick)
        if node.has_work():
            self._schedule_mine(node, tick)

    def _dispatch(
        self, envelopes: Sequence[Envelope], unroutable: Sequence[Unroutable], tick: int
    ) -> None:
        for env in envelopes:
            if env.dropped:
                self._leg_done(env.request_id, Outcome.FAILED, tick, "dropped")
            else:
                self.queue.push(
                    env.deliver_tick,
                    EventKind.DELIVER,
                    env.to_chain,
                    env.request_id,
                    env.payload,
                    env,
                )
        for u in unroutable:
            log.info(f"request 0x{u.request.request_id.hex()[:8]}: {u.reason}")
            self._leg_done(u.request.request_id, Outcome.FAILED, tick, "UnknownChain")

    def _deliver(self, node: ChainNode, event: SimEvent) -> None:
        tick = event.tick
        call = CrossChainCall.decode(event.payload)
        live = self.ledger.is_live(call.funding_id)
        admission = AdmissionDecision(live, reason="" if live else "no live fee lock")
        try:
            node.mempool.submit(
                call.digest, node.state.height, admission, request_id=call.request_id
            )
        except AdmissionRefused as e:
            self._leg_done(call.request_id, Outcome.FAILED, tick, f"AdmissionRefused: {e}")
            return

        try:
            outcome = node.router.handle_incoming(
                call, node.execute_inbound, tick, release=False
            )
        except (UnauthorizedTarget, WriteToReadOnly, InvalidContractAddress) as e:
            log.info(f"chain {node.name}: inbound 0x{call.request_id.hex()[:8]} refused: {e}")
            node.mempool.reject(call.digest)
            self._leg_done(call.request_id, Outcome.FAILED, tick, type(e).__name__)
            return

        execution = outcome.execution
        assert execution is not None
        node.capacity.record(tick, execution.cost)
        if outcome.action == Action.FAILED:
            node.mempool.reject(call.digest)
            reason = execution.error or "execution failed"
            self._leg_done(call.request_id, Outcome.FAILED, tick, reason, execution.cost)
            return

        self._mirror(node, execution)
        if node.config.compact_bypass:
            node.mempool.mark_validated(call.digest)
            node.mempool.finalize_ready(node.state.height)
            self._release(node, outcome, tick)
        else:
            node.held[call.digest] = outcome
        if node.has_work():
            self._schedule_mine(node, tick)

    def _mirror(self, node: ChainNode, execution: CompactExecution) -> None:
        tx = node.sync.on_compact_exec(execution)
        if tx is not None:
            node.mirrors.append(tx)

    def _release(self, node: ChainNode, outcome: IncomingOutcome, tick: int) -> None:
        call = outcome.call
        try:
            node.router.release(outcome, node.execute_inbound, tick)
        except UnknownTargetChain as e:
            self._leg_done(call.request_id, Outcome.FAILED, tick, type(e).__name__, outcome.cost)
            return
        if outcome.callback_execution is not None:
            node.capacity.record(tick, outcome.callback_execution.cost)
            self._mirror(node, outcome.callback_execution)

        if outcome.action == Action.STOP:
            self._leg_done(call.request_id, Outcome.COMPLETED, tick, cost=outcome.cost)
        elif outcome.action == Action.LOCAL_CALLBACK:
            result = outcome.event
            assert isinstance(result, CallBackResult)
            self.committed.append(SimEvent.committed(tick, result))
            if result.status:
                self._leg_done(
                    call.request_id, Outcome.CALLBACK_DELIVERED, tick, cost=outcome.cost
                )
            else:
                self._leg_done(
                    call.request_id, Outcome.FAILED, tick, "callback failed", outcome.cost
                )
        elif outcome.action == Action.REINITIATE:
            child = outcome.event
            assert isinstance(child, CrossChainRequest)
            record = self._open_request(
                child.request_id, call.funding_id, node.chain_id, child.target_chain, tick
            )
            record.call = child.call
            self.committed.append(SimEvent.committed(tick, child))
            self._leg_done(call.request_id, Outcome.FORWARDED, tick, cost=outcome.cost)
            self._dispatch(*self.watcher.forward([child], tick), tick)
        if node.has_work():
            self._schedule_mine(node, tick)

    # request bookkeeping

    def _open_request(
        self,
        request_id: bytes,
        parent_id: bytes,
        source: ChainId,
        target: ChainId,
        tick: int,
        fee: int = 0,
    ) -> RequestRecord:
        assert request_id not in self.requests, "request id reused"
        record = RequestRecord(request_id, parent_id, source, target, tick, fee_locked=fee)
        self.requests[request_id] = record
        if parent_id == NO_PARENT:
            self.funding[request_id] = Funding(request_id)
        else:
            self.funding[parent_id].legs += 1
        return record

    def _leg_done(
        self,
        request_id: bytes,
        outcome: Outcome,
        tick: int,
        reason: str = "",
        cost: int = 0,
    ) -> None:
        record = self.requests[request_id]
        assert record.outcome is None, f"request 0x{request_id.hex()} terminated twice"
        record.outcome = outcome
        record.terminal_tick = tick
        record.reason = reason
        record.cost = cost

        funding = self.funding[record.funding_id]
        funding.legs -= 1
        funding.cost += cost
        funding.failed = funding.failed or outcome == Outcome.FAILED
        if funding.legs:
            return
        settlement = Settlement.failed() if funding.failed else Settlement.executed(funding.cost)
        funding.settlement = self.ledger.settle_or_refund(funding.request_id, settlement)
        root = self.requests[funding.request_id]
        root.fee_consumed = funding.settlement.consumed
        root.fee_refunded = funding.settlement.refunded
        log.debug(
            f"request 0x{funding.request_id.hex()[:8]} settled "
            f"{funding.settlement.kind.value} at tick {tick}"
        )

    # summaries

    def conflicts(self) -> List[ConflictRecord]:
        return sorted(
            (c for n in self.nodes.values() for c in n.sync.conflicts), key=lambda c: c.tick
        )

    def accepted(self) -> int:
        return sum(n.admission.accepted for n in self.nodes.values())

    def refused(self) -> int:
        return sum(n.admission.refused for n in self.nodes.values())

    def unterminated(self) -> List[RequestRecord]:
        return [r for r in self.requests.values() if r.outcome is None]

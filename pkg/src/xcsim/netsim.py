#!/usr/bin/env python3
"""
Network side of the simulation: the enode locator, a seeded message transport
between chains, the watcher that turns committed router events into envelopes,
and the event queue together with its trace.
"""

import heapq
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Dict, List, Optional, Sequence, Tuple

from .chain import Block
from .encoding import ChainId, digest, pack
from .errors import UnknownChain
from .router import CallBackResult, CrossChainRequest, RouterEvent

log = logging.getLogger(__name__)


def sub_seed(domain: str, seed: int) -> int:
    """
    Independent 64-bit seed for one consumer of randomness.
    """
    return int.from_bytes(digest(domain.encode() + seed.to_bytes(8, "big"))[:8], "big")


@dataclass(frozen=True)
class EnodeRecord:
    chain: ChainId
    endpoint: str
    public: bool = True


class EnodeRegistry:
    def __init__(self) -> None:
        self.records: Dict[ChainId, EnodeRecord] = {}

    def register_enode(self, record: EnodeRecord) -> "EnodeRegistry":
        old = self.records.get(record.chain)
        if old is not None and old != record:
            log.info(
                f"enode for {record.chain.short()} replaced: "
                f"{old.endpoint} -> {record.endpoint}"
            )
        self.records[record.chain] = record
        return self

    def resolve(self, chain: ChainId) -> str:
        record = self.records.get(chain)
        if record is None or not record.public:
            raise UnknownChain(f"no public enode for chain {chain.short()}")
        return record.endpoint


@dataclass(frozen=True)
class TransportConfig:
    latency_min: int = 1
    latency_max: int = 1
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.latency_min < 0 or self.latency_max < self.latency_min:
            raise ValueError(
                f"bad latency range [{self.latency_min}, {self.latency_max}]"
            )
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError(f"drop_probability out of range: {self.drop_probability}")


@dataclass(frozen=True)
class Envelope:
    from_chain: ChainId
    to_chain: ChainId
    endpoint: str
    payload: bytes
    request_id: bytes
    enqueue_tick: int
    deliver_tick: int
    dropped: bool = False


class Transport:
    """
    Samples latency and loss from a generator reserved for transport, so
    fuzzing or scenario randomness never shifts delivery times.
    """

    def __init__(self, config: TransportConfig) -> None:
        self.config = config
        self.rng = random.Random(sub_seed("transport", config.seed))
        # last delivery tick per (from, to) channel
        self.channels: Dict[Tuple[ChainId, ChainId], int] = {}
        self.sent = 0
        self.dropped = 0

    def send(
        self,
        from_chain: ChainId,
        to_chain: ChainId,
        endpoint: str,
        payload: bytes,
        request_id: bytes,
        tick: int,
    ) -> Envelope:
        latency = max(1, self.rng.randint(self.config.latency_min, self.config.latency_max))
        dropped = self.rng.random() < self.config.drop_probability
        # never overtake an earlier envelope on the same channel
        deliver = max(tick + latency, self.channels.get((from_chain, to_chain), 0))
        self.sent += 1
        if dropped:
            self.dropped += 1
            log.info(f"transport: dropped request 0x{request_id.hex()[:8]} at tick {tick}")
        else:
            self.channels[(from_chain, to_chain)] = deliver
        return Envelope(
            from_chain, to_chain, endpoint, payload, request_id, tick, deliver, dropped
        )


@dataclass(frozen=True)
class Unroutable:
    request: CrossChainRequest
    reason: str


class Watcher:
    """
    Forwards the CrossChainRequest events of committed blocks to the chain
    they address, resolving it through the enode registry.
    """

    def __init__(self, registry: EnodeRegistry, transport: Transport) -> None:
        self.registry = registry
        self.transport = transport

    def watch_and_forward(
        self, block: Block, tick: int
    ) -> Tuple[List[Envelope], List[Unroutable]]:
        return self.forward(block.events, tick)

    def forward(
        self, events: Sequence[Any], tick: int
    ) -> Tuple[List[Envelope], List[Unroutable]]:
        envelopes = []
        unroutable = []
        for event in events:
            if not isinstance(event, CrossChainRequest):
                continue
            try:
                endpoint = self.registry.resolve(event.target_chain)
            except UnknownChain as e:
                unroutable.append(Unroutable(event, str(e)))
                continue
            envelopes.append(
                self.transport.send(
                    event.chain,
                    event.target_chain,
                    endpoint,
                    event.call.encode(),
                    event.request_id,
                    tick,
                )
            )
        return envelopes, unroutable


class EventKind(Enum):
    ACTION = "action"
    MINE = "mine"
    DELIVER = "deliver"
    TOP_UP = "top-up"
    # router events, traced once committed
    REQUEST = "request"
    CALLBACK_RESULT = "callback-result"


@dataclass(order=True)
class SimEvent:
    tick: int
    seq: int
    kind: EventKind = field(compare=False)
    chain: ChainId = field(compare=False)
    request_id: Optional[bytes] = field(default=None, compare=False)
    payload: bytes = field(default=b"", compare=False)
    data: Any = field(default=None, compare=False)

    def trace_line(self) -> str:
        request = "0x" + self.request_id.hex() if self.request_id else "-"
        payload = "0x" + digest(self.payload).hex() if self.payload else "-"
        return f"{self.tick} {self.kind.value} {self.chain} {request} {payload}"

    @classmethod
    def committed(cls, tick: int, event: RouterEvent) -> "SimEvent":
        if isinstance(event, CrossChainRequest):
            return cls(
                tick, -1, EventKind.REQUEST, event.chain, event.request_id, event.call.encode()
            )
        assert isinstance(event, CallBackResult)
        return cls(
            tick,
            -1,
            EventKind.CALLBACK_RESULT,
            event.chain,
            event.request_id,
            pack(int(event.status), event.result),
        )


class EventQueue:
    def __init__(self) -> None:
        self.heap: List[SimEvent] = []
        self.seq = 0

    def __len__(self) -> int:
        return len(self.heap)

    def push(
        self,
        tick: int,
        kind: EventKind,
        chain: ChainId,
        request_id: Optional[bytes] = None,
        payload: bytes = b"",
        data: Any = None,
    ) -> SimEvent:
        event = SimEvent(tick, self.seq, kind, chain, request_id, payload, data)
        self.seq += 1
        heapq.heappush(self.heap, event)
        return event

    def step(self) -> Optional[SimEvent]:
        """
        Pop the least (tick, seq) event; None once the queue is quiescent.
        """
        if not self.heap:
            return None
        return heapq.heappop(self.heap)


class Trace:
    """
    Executed events, one line each. Kept in memory and optionally streamed
    to a file.
    """

    def __init__(self, out: Optional[IO[str]] = None) -> None:
        self.lines: List[str] = []
        self.out = out

    def record(self, event: SimEvent) -> None:
        line = event.trace_line()
        self.lines.append(line)
        if self.out is not None:
            self.out.write(line + "\n")

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def digest(self) -> bytes:
        return digest(self.text().encode())

    def __len__(self) -> int:
        return len(self.lines)

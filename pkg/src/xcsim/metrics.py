#!/usr/bin/env python3
"""
Run metrics and their CSV renderings. Header rows are fixed.
"""

import csv
from dataclasses import dataclass, field
from typing import IO, Any, Dict, Iterable, List, Optional

from .auth import AdmissionRecord
from .router import NO_PARENT
from .simulation import RequestRecord, Simulation
from .sync import ConflictRecord

REQUEST_HEADER = [
    "request_id",
    "parent_id",
    "source",
    "target",
    "initiated_tick",
    "terminal_tick",
    "latency",
    "outcome",
    "fee_locked",
    "fee_consumed",
    "fee_refunded",
]
DOS_HEADER = ["n", "c_i", "fee", "total_cost", "accepted", "balance_after"]
CONFLICT_HEADER = ["tick", "chain", "address", "key", "winner"]


@dataclass
class MetricsRecord:
    scenario: str
    requests: int = 0
    attempted: int = 0
    accepted: int = 0
    refused: int = 0
    outcomes: Dict[str, int] = field(default_factory=dict)
    latencies: List[int] = field(default_factory=list)
    fee_locked: int = 0
    fee_consumed: int = 0
    fee_refunded: int = 0
    fee_burned: int = 0
    main_digests: Dict[str, str] = field(default_factory=dict)
    compact_digests: Dict[str, str] = field(default_factory=dict)
    consistent: bool = True
    conserved: bool = True
    ticks: int = 0
    trace_digest: str = ""
    values: Dict[str, Any] = field(default_factory=dict)

    @property
    def mean_latency(self) -> Optional[float]:
        if not self.latencies:
            return None
        return sum(self.latencies) / len(self.latencies)

    @property
    def throughput(self) -> float:
        """
        Terminated requests per tick
        """
        return len(self.latencies) / self.ticks if self.ticks else 0.0

    def summary(self) -> List[str]:
        lines = [
            f"scenario: {self.scenario}",
            f"requests: {self.requests} (attempted {self.attempted}, "
            f"accepted {self.accepted}, refused {self.refused})",
        ]
        for outcome, n in sorted(self.outcomes.items()):
            lines.append(f"  {outcome}: {n}")
        if self.mean_latency is not None:
            lines.append(
                f"latency: mean {self.mean_latency:.2f} ticks, "
                f"max {max(self.latencies)} ticks"
            )
        lines.append(
            f"fees: locked {self.fee_locked}, consumed {self.fee_consumed}, "
            f"refunded {self.fee_refunded}, burned {self.fee_burned}"
        )
        lines.append(f"consistent: {self.consistent}, conserved: {self.conserved}")
        for key, value in self.values.items():
            lines.append(f"{key}: {value}")
        if self.trace_digest:
            lines.append(f"trace digest: {self.trace_digest}")
        return lines


def collect(sim: Simulation, scenario: str) -> MetricsRecord:
    record = MetricsRecord(scenario)
    record.requests = len(sim.requests)
    record.accepted = sim.accepted()
    record.refused = sim.refused()
    record.attempted = record.accepted + record.refused
    for r in sim.requests.values():
        key = r.outcome.value if r.outcome else "Pending"
        record.outcomes[key] = record.outcomes.get(key, 0) + 1
        if r.latency is not None:
            record.latencies.append(r.latency)
    for s in sim.ledger.settled.values():
        record.fee_locked += s.locked
        record.fee_consumed += s.consumed
        record.fee_refunded += s.refunded
        record.fee_burned += s.burned
    for node in sim.nodes.values():
        record.main_digests[node.name] = "0x" + node.main_digest().hex()
        record.compact_digests[node.name] = "0x" + node.compact.state.digest().hex()
    record.consistent = all(r.consistent for r in sim.consistency().values())
    record.conserved = sim.conserved
    record.ticks = sim.tick
    record.trace_digest = "0x" + sim.trace.digest().hex()
    return record


def _hex(data: bytes) -> str:
    return "0x" + data.hex()


def request_row(r: RequestRecord) -> List[Any]:
    return [
        _hex(r.request_id),
        _hex(r.parent_id) if r.parent_id != NO_PARENT else "",
        str(r.source),
        str(r.target),
        r.initiated_tick,
        "" if r.terminal_tick is None else r.terminal_tick,
        "" if r.latency is None else r.latency,
        r.outcome_text,
        r.fee_locked,
        r.fee_consumed,
        r.fee_refunded,
    ]


def write_requests(records: Iterable[RequestRecord], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REQUEST_HEADER)
    for r in sorted(records, key=lambda r: (r.initiated_tick, r.request_id)):
        writer.writerow(request_row(r))


def write_dos(records: Iterable[AdmissionRecord], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(DOS_HEADER)
    for r in records:
        writer.writerow(
            [r.n, r.c_i, r.fee, r.total_cost, int(r.accepted), r.balance_after]
        )


def write_conflicts(records: Iterable[ConflictRecord], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CONFLICT_HEADER)
    for r in records:
        writer.writerow(r.csv_row())

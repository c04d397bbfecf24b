#!/usr/bin/env python3

import argparse
import logging
import sys
from contextlib import ExitStack
from dataclasses import replace
from pathlib import Path
from typing import IO, Callable, Dict, Iterable, List, Optional

from .config import GenesisConfig, load_config
from .errors import ConfigError, ScenarioFailure
from .log import setup_logging
from .metrics import write_conflicts, write_dos, write_requests
from .scenarios import (
    run_dos_experiment,
    run_isolation_fuzz,
    run_read_scenario,
    run_soak,
    run_workload,
    run_write_scenario,
)
from .simulation import RequestRecord
from .sync import ConflictRecord

log = logging.getLogger(__name__)


def _open(stack: ExitStack, path: Optional[Path]) -> Optional[IO[str]]:
    if path is None:
        return None
    return stack.enter_context(open(path, "w"))


def _emit(args: argparse.Namespace, lines: List[str]) -> None:
    if not args.quiet:
        for line in lines:
            print(line)


def _write_csv(
    stack: ExitStack,
    args: argparse.Namespace,
    requests: Iterable[RequestRecord],
    conflicts: Iterable[ConflictRecord],
) -> None:
    metrics_out = _open(stack, args.metrics)
    if metrics_out:
        write_requests(requests, metrics_out)
    conflicts_out = _open(stack, args.conflicts)
    if conflicts_out:
        write_conflicts(conflicts, conflicts_out)


def read_command(args: argparse.Namespace, config: GenesisConfig) -> None:
    with ExitStack() as stack:
        metrics, sim = run_read_scenario(config, _open(stack, args.trace), args.value)
        _write_csv(stack, args, sim.requests.values(), sim.conflicts())
    _emit(args, metrics.summary())


def write_command(args: argparse.Namespace, config: GenesisConfig) -> None:
    with ExitStack() as stack:
        metrics, sim = run_write_scenario(config, _open(stack, args.trace), args.value)
        _write_csv(stack, args, sim.requests.values(), sim.conflicts())
    _emit(args, metrics.summary())


def dos_command(args: argparse.Namespace, config: GenesisConfig) -> None:
    dos = config.scenario.dos
    overrides: Dict[str, object] = {}
    if args.capital is not None:
        overrides["capital"] = args.capital
    if args.f_base is not None:
        overrides["f_base"] = args.f_base
    if args.schedule is not None:
        overrides["schedule"] = args.schedule
    if args.cost is not None:
        try:
            overrides["costs"] = tuple(int(c) for c in args.cost.split(","))
        except ValueError:
            raise ConfigError(f"bad --cost value: {args.cost}")
    if args.step is not None:
        overrides["step"] = args.step
    if args.comp_max is not None:
        overrides["comp_max"] = args.comp_max
    if args.window is not None:
        overrides["window"] = args.window
    dos = replace(dos, **overrides)
    with ExitStack() as stack:
        report = run_dos_experiment(config, dos, _open(stack, args.trace))
        metrics_out = _open(stack, args.metrics)
        if metrics_out:
            write_dos(report.records, metrics_out)
    _emit(args, report.summary())


def fuzz_command(args: argparse.Namespace, config: GenesisConfig) -> None:
    try:
        report = run_isolation_fuzz(config, args.iterations, args.workers)
    except ScenarioFailure as e:
        if args.trace:
            args.trace.write_text(str(e) + "\n")
        raise
    _emit(args, report.summary())


def soak_command(args: argparse.Namespace, config: GenesisConfig) -> None:
    with ExitStack() as stack:
        report = run_soak(config, args.requests, _open(stack, args.trace))
        # both files describe the compact-bypass run
        _write_csv(stack, args, report.bypass_requests, report.bypass_conflicts)
    _emit(args, report.summary())


def check_command(args: argparse.Namespace, config: GenesisConfig) -> None:
    """
    Run every scenario once plus a determinism check and print a verdict
    per check. Fails if any check fails.
    """
    checks: Dict[str, Callable[[], object]] = {
        "read": lambda: run_read_scenario(config),
        "write": lambda: run_write_scenario(config),
        "dos": lambda: run_dos_experiment(config),
        "fuzz": lambda: run_isolation_fuzz(config),
        "soak": lambda: run_soak(config),
        "determinism": lambda: _determinism(config),
    }
    failed = []
    for name, check in checks.items():
        try:
            check()
            verdict = "ok"
        except ScenarioFailure as e:
            failed.append(name)
            verdict = f"FAILED: {e}"
        _emit(args, [f"{name}: {verdict}"])
    if failed:
        raise ScenarioFailure(f"{len(failed)} checks failed: {', '.join(failed)}")


def _determinism(config: GenesisConfig) -> None:
    noisy = replace(
        config,
        transport=replace(config.transport, latency_min=1, latency_max=10),
    )
    seed = config.scenario.seed
    runs = [
        run_workload(noisy.with_seed(s), s, 20, observe=False).sim.trace.digest()
        for s in (seed, seed, (seed + 1) % (1 << 64))
    ]
    if runs[0] != runs[1]:
        raise ScenarioFailure("identical seeds produced different traces")
    if runs[0] == runs[2]:
        raise ScenarioFailure("different seeds produced identical traces")


COMMANDS = {
    "read": read_command,
    "write": write_command,
    "dos": dos_command,
    "fuzz": fuzz_command,
    "soak": soak_command,
    "check": check_command,
}


def _u64(value: str) -> int:
    n = int(value, 0)
    if not 0 <= n < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits: {value}")
    return n


def parse_args(argv: List[str]) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="genesis config (JSON)")
    common.add_argument("--seed", type=_u64, help="seed for all randomness")
    common.add_argument("--trace", type=Path, help="write the event trace here")
    common.add_argument("--metrics", type=Path, help="write CSV metrics here")
    common.add_argument("--quiet", action="store_true", help="only print warnings")

    parser = argparse.ArgumentParser(
        prog="xcsim", description="Deterministic multi-chain cross-chain call simulator"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    read = subparsers.add_parser("read", parents=[common], help="data-retrieval pattern")
    read.add_argument("--value", type=int, help="value stored on the target chain")
    write = subparsers.add_parser("write", parents=[common], help="state-update pattern")
    write.add_argument("--value", type=int, help="value to write remotely")
    for sub in (read, write):
        sub.add_argument("--conflicts", type=Path, help="write the sync conflict CSV here")

    dos = subparsers.add_parser("dos", parents=[common], help="invocation flood experiment")
    dos.add_argument("--capital", type=int, help="attacker capital A")
    dos.add_argument("--f-base", type=int, help="base fee")
    dos.add_argument("--cost", help="per-invocation cost, or comma separated costs")
    dos.add_argument("--schedule", choices=["constant", "arithmetic", "cycle"])
    dos.add_argument("--step", type=int, help="increment of an arithmetic schedule")
    dos.add_argument("--comp-max", type=int, help="destination capacity per window")
    dos.add_argument("--window", type=int, help="capacity window in ticks")

    fuzz = subparsers.add_parser("fuzz", parents=[common], help="isolation fuzzing")
    fuzz.add_argument("--iterations", type=int)
    fuzz.add_argument("--workers", type=int)

    soak = subparsers.add_parser("soak", parents=[common], help="throughput and latency")
    soak.add_argument("--requests", type=int)
    soak.add_argument("--conflicts", type=Path, help="write the sync conflict CSV here")

    subparsers.add_parser("check", parents=[common], help="run all acceptance checks")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    setup_logging(quiet=args.quiet)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        COMMANDS[args.command](args, config)
    except (ScenarioFailure, ConfigError) as e:
        print(f"xcsim {args.command}: {e}", file=sys.stderr)
        return 1
    return 0

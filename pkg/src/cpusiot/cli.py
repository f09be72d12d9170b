"""Command-line driver: ``cpusiot <command> ...``.

Exit codes: 0 success, 1 validation/binding/run failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .binder import BindError, BindingMode, bind, load_psm
from .platform_sim import PlatformError, load_scenario
from .process import BranchDecisions, ProcessError, enumerate_sequences, export_dot, generate_pim, load_pim
from .product import ModelWarning, ProductModelError, parse_product_model, validate
from .registry import Registry, RegistryError
from .runtime import CHOREOGRAPHY, ORCHESTRATION, FailurePlan, RuntimeFailure, rtt_report, run
from .services import ServiceModelError, parse_query
from .turtle import TurtleSyntaxError
from .wire import RegistryServer, RemoteRegistry, parse_address

ENV_REGISTRY = "CPUS_REGISTRY_ADDR"


@dataclass
class CommandOutcome:
    exit_code: int
    text: str = ""
    artifacts: list[str] = field(default_factory=list)


class UsageError(Exception):
    def __init__(self, usage: str, message: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(self.format_usage(), message)


def _write(path: Optional[str], text: str, outcome: CommandOutcome) -> None:
    if path in (None, "-"):
        outcome.text += text
    else:
        Path(path).write_text(text)
        outcome.artifacts.append(path)


def _open_registry(address: Optional[str], seed: int = 0):
    """Resolve a registry address.

    ``host:port`` talks to a running server; ``scenario:<file>`` loads a
    scenario into an in-process registry; ``mem:`` is an empty one.
    Returns ``(registry, platform_or_None)``.
    """
    address = address or os.environ.get(ENV_REGISTRY)
    if not address:
        raise UsageError("", f"no registry given (use --registry or set {ENV_REGISTRY})")
    if address == "mem:":
        return Registry(clock=lambda: 0.0), None
    if address.startswith("scenario:"):
        platform = load_scenario(address[len("scenario:"):], seed=seed)
        return platform.registry, platform
    parse_address(address)
    return RemoteRegistry(address), None


# ---------------------------------------------------------------- commands


def cmd_validate(args, out: CommandOutcome) -> None:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ModelWarning)
        model = parse_product_model(Path(args.psm).read_text())
    violations = validate(model)
    for w in caught:
        out.text += f"warning: {w.message}\n"
    if violations:
        for v in violations:
            out.text += f"{v.code}: {v.element}: {v.message}\n"
        out.exit_code = 1
        return
    out.text += "OK\n"


def _decisions(path: Optional[str]) -> Optional[BranchDecisions]:
    if not path:
        return None
    data = yaml.safe_load(Path(path).read_text()) or {}
    return BranchDecisions(dict(data.get("inline") or {}), tuple(tuple(a) for a in data.get("arcs") or []))


def cmd_gen_pim(args, out: CommandOutcome) -> None:
    model = parse_product_model(Path(args.psm).read_text())
    pim = generate_pim(model, _decisions(args.decisions))
    _write(args.output, pim.to_json(), out)


def cmd_graph(args, out: CommandOutcome) -> None:
    pim = load_pim(Path(args.pim).read_text())
    _write(args.dot, export_dot(pim.graph), out)


def cmd_sequences(args, out: CommandOutcome) -> None:
    pim = load_pim(Path(args.pim).read_text())
    seqs = enumerate_sequences(pim.graph, args.cap)
    out.text += "".join(" ".join(s) + "\n" for s in seqs)
    out.text += f"# {len(seqs)} sequence(s){' (capped)' if len(seqs) == args.cap else ''}\n"


def cmd_registry_serve(args, out: CommandOutcome) -> None:
    registry = Registry()
    server = RegistryServer((args.host, args.port), registry)
    print(f"registry listening on {server.address}", flush=True)
    _serve(server, args.duration)


def _serve(server, duration: Optional[float]) -> None:
    server.start()
    try:
        if duration is None:
            while True:
                time.sleep(3600)
        time.sleep(duration)
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()


def cmd_platform_run(args, out: CommandOutcome) -> None:
    registry, _ = _open_registry(args.registry, args.seed)
    platform = load_scenario(args.scenario, registry=registry, seed=args.seed)

    def execute(ep: str, path: str, body: dict) -> dict:
        return platform.execute_now(ep, path, body).to_dict()

    server = RegistryServer((args.host, args.port), Registry(), execute)
    names = ", ".join(sorted(platform.workers))
    print(f"platform ({names}) serving EXECUTE on {server.address}", flush=True)
    _serve(server, args.duration)


def cmd_bind(args, out: CommandOutcome) -> None:
    pim = load_pim(Path(args.pim).read_text())
    registry, platform = _open_registry(args.registry, args.seed)
    if args.scenario:
        platform = load_scenario(args.scenario, register=False, seed=args.seed)
    topology = platform.topology() if platform is not None else None
    psm = bind(pim, registry, BindingMode(args.mode), topology)
    _write(args.output, psm.to_json(), out)


def cmd_run(args, out: CommandOutcome) -> None:
    psm = load_psm(Path(args.psm).read_text())
    platform = load_scenario(args.scenario, seed=args.seed)
    failure = FailurePlan.parse(args.fail) if args.fail else None
    report = run(psm, platform, args.style, failure)
    if args.metrics:
        _write(args.metrics, report.metrics_csv(), out)
    if args.report:
        _write(args.report, report.to_json(), out)
    if args.trace:
        _write(args.trace, report.timeline(), out)
    out.text += f"{report.outcome}: {len(report.trace)} trace entries, {len(report.rtt_samples)} RTT samples\n"
    for key, stats in rtt_report(report).items():
        out.text += (
            f"  {key}: n={stats['count']} min={stats['min']:.0f} p50={stats['p50']:.0f} "
            f"p95={stats['p95']:.0f} max={stats['max']:.0f} us\n"
        )
    if not report.completed:
        out.text += f"failed at {report.failed_step}: {report.cause}\n"
        out.exit_code = 1


def cmd_query(args, out: CommandOutcome) -> None:
    registry, _ = _open_registry(args.registry, args.seed)
    query = parse_query(Path(args.query_file).read_text())
    for hit in registry.lookup(None, query):
        out.text += f"{hit.endpoint}{hit.path}\t{hit.description.label if hit.description else ''}\n"


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    p = _Parser(prog="cpusiot", description="Assembly process generation, binding and simulation.")
    p.add_argument("--seed", type=int, default=0, help="seed for simulated network jitter")
    # also accepted after the subcommand; SUPPRESS keeps the global value otherwise
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, **kw) -> _Parser:
        return sub.add_parser(name, parents=[common], **kw)

    s = add("validate", help="check a product structural model")
    s.add_argument("psm")
    s.set_defaults(func=cmd_validate)

    s = add("gen-pim", help="generate the platform-independent process")
    s.add_argument("psm")
    s.add_argument("-o", "--output")
    s.add_argument("--decisions", help="YAML with 'inline' and 'arcs' branch decisions")
    s.set_defaults(func=cmd_gen_pim)

    s = add("graph", help="export the precedence graph as DOT")
    s.add_argument("pim")
    s.add_argument("--dot", default="-")
    s.set_defaults(func=cmd_graph)

    s = add("sequences", help="enumerate valid task sequences")
    s.add_argument("pim")
    s.add_argument("--cap", type=int, default=1000)
    s.set_defaults(func=cmd_sequences)

    s = add("registry", help="resource directory")
    rsub = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = rsub.add_parser("serve", parents=[common])
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, default=5683)
    r.add_argument("--duration", type=float, help="stop after this many seconds")
    r.set_defaults(func=cmd_registry_serve)

    s = add("platform", help="simulated assembly platform")
    psub = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = psub.add_parser("run", parents=[common])
    r.add_argument("--scenario", required=True)
    r.add_argument("--registry")
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, default=0)
    r.add_argument("--duration", type=float)
    r.set_defaults(func=cmd_platform_run)

    s = add("bind", help="bind a PIM to registered services")
    s.add_argument("pim")
    s.add_argument("--registry")
    s.add_argument("--mode", choices=[m.value for m in BindingMode], default="static")
    s.add_argument("--scenario", help="scenario whose layout drives reach filtering and rotations")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_bind)

    s = add("run", help="execute a bound process on the simulated platform")
    s.add_argument("psm")
    s.add_argument("--scenario", required=True)
    s.add_argument("--style", choices=[ORCHESTRATION, CHOREOGRAPHY], default=ORCHESTRATION)
    s.add_argument("--metrics")
    s.add_argument("--report")
    s.add_argument("--trace")
    s.add_argument("--fail", metavar="WORKER@TASK", help="inject a worker failure, e.g. R2@AT1 or R2@20000us")
    s.set_defaults(func=cmd_run)

    s = add("query", help="run a discovery query against a registry")
    s.add_argument("registry")
    s.add_argument("query_file")
    s.set_defaults(func=cmd_query)
    return p


_FAILURES = (
    ProductModelError,
    ProcessError,
    ServiceModelError,
    TurtleSyntaxError,
    RegistryError,
    BindError,
    PlatformError,
    RuntimeFailure,
    OSError,
    ValueError,
    KeyError,
)


def dispatch(argv: Optional[Sequence[str]] = None) -> CommandOutcome:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return CommandOutcome(2, f"{exc.usage}cpusiot: error: {exc}\n")
    out = CommandOutcome(0)
    try:
        args.func(args, out)
    except UsageError as exc:
        return CommandOutcome(2, f"{parser.format_usage()}cpusiot: error: {exc}\n")
    except _FAILURES as exc:
        out.exit_code = 1
        out.text += f"error: {type(exc).__name__}: {exc}\n"
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    outcome = dispatch(argv)
    stream = sys.stdout if outcome.exit_code == 0 else sys.stderr
    stream.write(outcome.text)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())

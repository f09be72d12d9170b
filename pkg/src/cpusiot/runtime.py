"""Execute a bound process on the simulated platform.

Two styles are offered. In orchestration a coordinator dispatches every
step once its predecessors have finished. In choreography each executor
(worker, workbench or the platform itself) subscribes to the completion
events of its steps' predecessors and starts them on its own.
"""

from __future__ import annotations

import csv
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import simpy

from .binder import (
    ACTIVITY,
    ROTATE,
    TRANSFER,
    BindError,
    BindingMode,
    ProcessPSM,
    ReservationBook,
    UnsatisfiedActivity,
    rebind,
    resolve_step,
)
from .bus import Event, EventBus
from .platform_sim import SUCCESS, WORKER_FAILED, Platform, PlatformError
from .process import NOOP, natural_key
from .registry import SERVICE_RT

ORCHESTRATION = "orchestration"
CHOREOGRAPHY = "choreography"
METRICS_HEADER = ("step_id", "task_id", "service", "endpoint", "rtt_us", "outcome")
_POLL_US = 100


class RuntimeFailure(Exception):
    pass


class RunFailed(RuntimeFailure):
    def __init__(self, step: str, cause: str):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


class DeadlockDetected(RuntimeFailure):
    pass


@dataclass(frozen=True)
class FailurePlan:
    """Take a worker down after a task completes or at a simulated time."""

    worker: str
    after_task: Optional[str] = None
    at_us: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "FailurePlan":
        """``R2@AT1`` (after task AT1) or ``R2@15000us`` / ``R2@15000``."""
        worker, sep, when = text.partition("@")
        if not worker or not sep or not when:
            raise ValueError(f"expected WORKER@TASK or WORKER@TIMEus, got {text!r}")
        m = re.fullmatch(r"(\d+)(?:us)?", when)
        if m:
            return cls(worker, at_us=int(m.group(1)))
        return cls(worker, after_task=when)


@dataclass(frozen=True)
class TraceEntry:
    step: str
    start: int
    end: int
    outcome: str
    task: Optional[str] = None
    worker: Optional[str] = None


@dataclass(frozen=True)
class RttSample:
    step_id: str
    task_id: str
    service: str
    endpoint: str
    rtt_us: int
    outcome: str


@dataclass
class RunReport:
    outcome: str
    trace: list[TraceEntry] = field(default_factory=list)
    rtt_samples: list[RttSample] = field(default_factory=list)
    liaisons_realized: list[str] = field(default_factory=list)
    failed_step: Optional[str] = None
    cause: Optional[str] = None
    rebinds: list[tuple[str, str, str]] = field(default_factory=list)
    psm: Optional[ProcessPSM] = None

    @property
    def completed(self) -> bool:
        return self.outcome == "Completed"

    def raise_for_outcome(self) -> None:
        if not self.completed:
            raise RunFailed(self.failed_step or "?", self.cause or "unknown")

    def liaison_multiset(self) -> Counter:
        return Counter(self.liaisons_realized)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "failedStep": self.failed_step,
            "cause": self.cause,
            "trace": [
                {"step": t.step, "task": t.task, "worker": t.worker, "start": t.start, "end": t.end, "outcome": t.outcome}
                for t in self.trace
            ],
            "rttSamples": [[s.step_id, s.rtt_us] for s in self.rtt_samples],
            "liaisonsRealized": list(self.liaisons_realized),
            "rebinds": [list(r) for r in self.rebinds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for s in self.rtt_samples:
            writer.writerow((s.step_id, s.task_id, s.service, s.endpoint, s.rtt_us, s.outcome))
        return buf.getvalue()

    def timeline(self) -> str:
        lines = []
        for t in self.trace:
            lines.append(f"{t.start:>10} {t.end:>10}  {t.step:<14} {t.worker or '-':<6} {t.outcome}")
        return "\n".join(lines) + ("\n" if lines else "")


class _StepFailed(Exception):
    def __init__(self, cause: str):
        super().__init__(cause)
        self.cause = cause


class _Runner:
    def __init__(
        self,
        psm: ProcessPSM,
        platform: Platform,
        style: str,
        failure: Optional[FailurePlan],
        book: Optional[ReservationBook],
        holder: str,
        bus: Optional[EventBus],
    ):
        if style not in (ORCHESTRATION, CHOREOGRAPHY):
            raise ValueError(f"unknown style {style!r}")
        self.psm = psm
        self.platform = platform
        self.env = platform.env
        self.style = style
        self.failure = failure
        self.injected = False
        self.holder = holder
        self.bus = bus or EventBus()
        self.book = book if book is not None else ReservationBook()
        if book is None and psm.mode is not BindingMode.LAZY:
            for w in psm.reservations:
                self.book.acquire(w, holder)
        self.locks: dict[str, simpy.Resource] = {}
        self.ids = [s.id for s in psm.steps]
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate step ids")
        self.preds = {sid: set(psm.predecessors(sid)) for sid in self.ids}
        self.waiting = {sid: set(p) for sid, p in self.preds.items()}
        self.started: set[str] = set()
        self.done: set[str] = set()
        self.running = 0
        self.rebound: set[str] = set()
        self.task_left = Counter(s.task_id for s in psm.steps if s.kind == ACTIVITY)
        self.report = RunReport("Completed")
        self.finished = self.env.event()

    # -- helpers

    def lock(self, worker: str) -> simpy.Resource:
        if worker not in self.locks:
            self.locks[worker] = simpy.Resource(self.env, capacity=1)
        return self.locks[worker]

    def root_object(self, obj: Optional[str]) -> Optional[str]:
        while obj is not None and self.platform.objects[obj].merged_into:
            obj = self.platform.objects[obj].merged_into
        return obj

    def benches_for(self, sid: str) -> list[Optional[str]]:
        step = self.psm.step(sid)
        out = []
        for o in (step.object, step.subject):
            o = self.root_object(o) if o in self.platform.objects else None
            bench = self.platform.bench_of(o) if o else None
            out.append(bench.name if bench else None)
        return out

    def set_endpoint(self, sid: str, endpoint: tuple[str, str]) -> None:
        steps = tuple(replace(s, endpoint=endpoint) if s.id == sid else s for s in self.psm.steps)
        self.psm = replace(self.psm, steps=steps)

    def do_rebind(self, failed_worker: str) -> None:
        before = {s.id: s.worker for s in self.psm.steps}
        benches = {sid: self.benches_for(sid) for sid in self.ids if sid not in self.done}
        self.psm = rebind(self.psm, failed_worker, self.platform.registry, self.done, self.platform.topology(), benches)
        if self.psm.mode is not BindingMode.LAZY:
            self.book.release(failed_worker, self.holder)
            for w in self.psm.reservations:
                self.book.acquire(w, self.holder)
        for s in self.psm.steps:
            if before[s.id] != s.worker:
                self.report.rebinds.append((s.id, before[s.id], s.worker))

    # -- scheduling

    def launch(self, sid: str) -> None:
        if sid in self.started or self.report.failed_step is not None:
            return
        self.started.add(sid)
        self.running += 1
        self.env.process(self.step_process(sid))

    def dispatch(self) -> None:
        """Coordinator: start every step whose predecessors are finished."""
        ready = [sid for sid in self.ids if sid not in self.started and not self.waiting[sid]]
        for sid in sorted(ready, key=natural_key):
            self.launch(sid)

    def setup_agents(self) -> None:
        agents: dict[str, list[str]] = {}
        for s in self.psm.steps:
            if s.kind == ROTATE:
                name = s.workbench or "platform"
            elif s.kind == ACTIVITY and s.worker:
                name = s.worker
            else:
                name = "platform"
            agents.setdefault(name, []).append(s.id)
        for name in sorted(agents):
            mine = sorted(agents[name], key=natural_key)
            waiting = {sid: set(self.preds[sid]) for sid in mine}

            def on_done(event: Event, waiting=waiting) -> None:
                finished = event.payload["step"]
                for sid in sorted(waiting, key=natural_key):
                    if finished in waiting[sid]:
                        waiting[sid].discard(finished)
                        if not waiting[sid]:
                            self.launch(sid)

            def on_start(event: Event, waiting=waiting) -> None:
                for sid in sorted(waiting, key=natural_key):
                    if not waiting[sid]:
                        self.launch(sid)

            self.bus.subscribe("process/start", on_start)
            for p in sorted({p for sid in mine for p in self.preds[sid]}, key=natural_key):
                self.bus.subscribe(f"process/step/{p}/done", on_done)

    def complete(self, sid: str) -> None:
        self.done.add(sid)
        self.running -= 1
        step = self.psm.step(sid)
        if step.kind == ACTIVITY:
            self.task_left[step.task_id] -= 1
            if self.task_left[step.task_id] == 0:
                self.report.liaisons_realized.extend(self.psm.tasks.get(step.task_id, ()))
                if self.failure and not self.injected and self.failure.after_task == step.task_id:
                    self.inject()
        for succ in self.psm.successors(sid):
            self.waiting[succ].discard(sid)
        self.bus.publish(f"process/step/{sid}/done", {"step": sid, "task": step.task_id}, self.env.now)
        if self.style == ORCHESTRATION:
            self.dispatch()
        self.check_finished()

    def fail(self, sid: str, cause: str) -> None:
        self.running -= 1
        if self.report.failed_step is None:
            self.report.outcome = "Failed"
            self.report.failed_step = sid
            self.report.cause = cause
        self.check_finished()

    def check_finished(self) -> None:
        if self.finished.triggered:
            return
        if len(self.done) == len(self.ids) or (self.report.failed_step is not None and self.running == 0):
            self.finished.succeed()

    def inject(self) -> None:
        self.injected = True
        self.platform.inject_failure(self.failure.worker)
        self.bus.publish(f"platform/worker/{self.failure.worker}/failed", None, self.env.now)

    def timed_failure(self):
        yield self.env.timeout(max(0, self.failure.at_us - self.env.now))
        if not self.injected:
            self.inject()

    # -- step execution

    def step_process(self, sid: str):
        step = self.psm.step(sid)
        start = int(self.env.now)
        try:
            if step.kind == ACTIVITY:
                yield from self.activity(sid)
            elif step.kind == ROTATE:
                yield from self.preposition(step.for_step)
            elif step.kind == TRANSFER:
                yield self.env.process(self.platform.transfer_process(self.root_object(step.object), step.workbench))
            step = self.psm.step(sid)
            self.report.trace.append(TraceEntry(sid, start, int(self.env.now), SUCCESS, step.task_id, step.worker))
        except (_StepFailed, BindError, PlatformError) as exc:
            step = self.psm.step(sid)
            self.report.trace.append(TraceEntry(sid, start, int(self.env.now), "failed", step.task_id, step.worker))
            self.fail(sid, getattr(exc, "cause", str(exc)))
            return
        self.complete(sid)

    def preposition(self, sid: str):
        """Rotate workbenches until the objects of ``sid`` are within reach of
        its current worker."""
        step = self.psm.step(sid)
        worker = self.platform.workers.get(step.worker) if step.worker else None
        if worker is None or not worker.reach:
            return 0
        turns = 0
        for obj in (step.object, step.subject):
            obj = self.root_object(obj) if obj in self.platform.objects else None
            bench = self.platform.bench_of(obj) if obj else None
            if bench is None or not worker.reach & set(bench.positions):
                continue
            for _ in range(len(bench.positions)):
                if self.platform.location(obj) in worker.reach:
                    break
                while bench.active:
                    yield self.env.timeout(_POLL_US)
                yield self.env.process(self.platform.rotate_process(bench.name))
                turns += 1
        return turns

    def activity(self, sid: str):
        step = self.psm.step(sid)
        if step.verb == NOOP or (step.query is None and step.endpoint is None):
            return
        lazy = self.psm.mode is BindingMode.LAZY
        if lazy:
            self.set_endpoint(sid, resolve_step(step, self.platform.registry, self.platform.topology(), self.benches_for(sid)))
        elif self.psm.mode is BindingMode.EAGER and step.query is not None:
            live = {(h.endpoint, h.path) for h in self.platform.registry.lookup(SERVICE_RT, step.query)}
            if step.endpoint not in live:
                self.rebound.add(sid)
                self.do_rebind(step.worker)
        remaining = self.psm.step(sid).repeat
        while remaining:
            step = self.psm.step(sid)
            worker, path = step.endpoint
            if lazy:
                self.book.acquire(worker, self.holder)
            request = self.lock(worker).request()
            yield request
            result = None
            try:
                t0 = int(self.env.now)
                turns = yield from self.preposition(sid)
                if turns:
                    self.report.trace.append(TraceEntry(f"{sid}~pre", t0, int(self.env.now), SUCCESS, step.task_id, None))
                while remaining:
                    args = {"object": self.root_object(step.object), "liaison": step.liaison}
                    if step.subject:
                        args["subject"] = self.root_object(step.subject)
                    if args["object"] is None:
                        del args["object"]
                    result = yield self.platform.execute(worker, path, args)
                    self.report.rtt_samples.append(
                        RttSample(sid, step.task_id, path, worker, result.rtt_us, result.outcome)
                    )
                    if not result.ok:
                        break
                    remaining -= 1
            finally:
                self.lock(worker).release(request)
                if lazy:
                    self.book.release(worker, self.holder)
            if result is not None and not result.ok:
                if result.outcome == WORKER_FAILED and sid not in self.rebound:
                    self.rebound.add(sid)
                    try:
                        self.do_rebind(worker)
                    except UnsatisfiedActivity as exc:
                        raise _StepFailed(f"{result.outcome}; rebind failed: {exc}") from None
                    continue
                raise _StepFailed(f"{result.outcome}: {result.detail}")

    def run(self) -> RunReport:
        if self.style == CHOREOGRAPHY:
            self.setup_agents()
        if self.failure is not None and self.failure.at_us is not None:
            self.env.process(self.timed_failure())
        if not self.ids:
            self.finished.succeed()
        elif self.style == ORCHESTRATION:
            self.dispatch()
        self.bus.publish("process/start", None, self.env.now)
        try:
            self.env.run(until=self.finished)
        except RuntimeError as exc:
            if "until" not in str(exc) and "No scheduled events" not in str(exc):
                raise
            pending = sorted(set(self.ids) - self.done, key=natural_key)
            raise DeadlockDetected(f"no runnable step; unfinished: {', '.join(pending)}") from None
        self.book.release_all(self.holder)
        self.report.trace.sort(key=lambda t: (t.start, t.end, natural_key(t.step)))
        self.report.psm = self.psm
        return self.report


def run(
    psm: ProcessPSM,
    platform: Platform,
    style: str = ORCHESTRATION,
    failure: Optional[FailurePlan] = None,
    book: Optional[ReservationBook] = None,
    holder: str = "psm",
    bus: Optional[EventBus] = None,
) -> RunReport:
    """Execute ``psm`` on ``platform`` and report what happened.

    A step whose worker fails is rebound once; a second failure, or any other
    non-success outcome, fails the run. Raises :class:`DeadlockDetected` when
    the simulation drains with steps still waiting.
    """
    return _Runner(psm, platform, style, failure, book, holder, bus).run()


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile (``q`` in [0, 100])."""
    return float(np.percentile(np.asarray(values, dtype=float), q, method="inverted_cdf"))


def rtt_report(samples: Union[RunReport, Iterable[RttSample]]) -> dict[str, dict[str, float]]:
    """Order statistics of successful EXECUTE round trips per worker/service."""
    if isinstance(samples, RunReport):
        samples = samples.rtt_samples
    groups: dict[str, list[int]] = {}
    for s in samples:
        if s.outcome == SUCCESS:
            groups.setdefault(f"{s.endpoint}{s.service}", []).append(s.rtt_us)
    out = {}
    for key in sorted(groups):
        vals = groups[key]
        out[key] = {
            "count": len(vals),
            "min": float(min(vals)),
            "p50": percentile(vals, 50),
            "p95": percentile(vals, 95),
            "max": float(max(vals)),
        }
    return out

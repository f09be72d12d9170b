"""Bind a platform-independent process to concrete platform services.

Each activity becomes a discovery query (label = verb, filter = QoS). The
query is resolved against the registry, and the resulting process gains the
platform moves (fixture rotations, transfers between workbenches) that
the chosen workers need.
"""

from __future__ import annotations

import heapq
import json
import math
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .platform_sim import LATENCY_KEY, Topology
from .process import NOOP, ActivitySpec, ProcessPIM, natural_key, task_predecessors
from .registry import SERVICE_RT, LookupHit
from .services import Binding, Comparison, ServiceQuery, parse_query, serialize_query

ACTIVITY, TRANSFER, ROTATE = "Activity", "Transfer", "Rotate"


class BindingMode(str, Enum):
    STATIC = "static"
    EAGER = "eager"
    LAZY = "lazy"


class BindError(Exception):
    pass


class UnsatisfiedActivity(BindError):
    def __init__(self, task_id: str, verb: str, filter: Sequence[Comparison] = ()):
        cond = " && ".join(f"{c.var}{c.op}{c.value}" for c in filter) or "no QoS filter"
        super().__init__(f"{task_id}: no registered {verb} service satisfies {cond}")
        self.task_id = task_id
        self.verb = verb
        self.filter = tuple(filter)


class ReservationConflict(BindError):
    pass


class ReservationBook:
    """One exclusive token per worker."""

    def __init__(self):
        self._lock = threading.Lock()
        self._held: dict[str, str] = {}

    def acquire(self, worker: str, holder: str) -> None:
        with self._lock:
            current = self._held.get(worker)
            if current is not None and current != holder:
                raise ReservationConflict(f"{worker} is reserved by {current}")
            self._held[worker] = holder

    def release(self, worker: str, holder: str) -> None:
        with self._lock:
            if self._held.get(worker) == holder:
                del self._held[worker]

    def release_all(self, holder: str) -> None:
        with self._lock:
            for w in [w for w, h in self._held.items() if h == holder]:
                del self._held[w]

    def held(self, holder: Optional[str] = None) -> list[str]:
        with self._lock:
            return sorted(w for w, h in self._held.items() if holder is None or h == holder)


@dataclass(frozen=True)
class BoundStep:
    id: str
    kind: str
    task_id: str
    liaison: Optional[str] = None
    verb: Optional[str] = None
    endpoint: Optional[tuple[str, str]] = None
    object: Optional[str] = None
    subject: Optional[str] = None
    query: Optional[ServiceQuery] = None
    repeat: int = 1
    for_step: Optional[str] = None
    workbench: Optional[str] = None

    @property
    def worker(self) -> Optional[str]:
        return self.endpoint[0] if self.endpoint else None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "task": self.task_id,
            "liaison": self.liaison,
            "verb": self.verb,
            "endpoint": list(self.endpoint) if self.endpoint else None,
            "object": self.object,
            "subject": self.subject,
            "query": serialize_query(self.query) if self.query else None,
            "repeat": self.repeat,
            "forStep": self.for_step,
            "workbench": self.workbench,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BoundStep":
        return cls(
            d["id"],
            d["kind"],
            d["task"],
            d.get("liaison"),
            d.get("verb"),
            tuple(d["endpoint"]) if d.get("endpoint") else None,
            d.get("object"),
            d.get("subject"),
            parse_query(d["query"]) if d.get("query") else None,
            d.get("repeat", 1),
            d.get("forStep"),
            d.get("workbench"),
        )


@dataclass(frozen=True)
class ProcessPSM:
    steps: tuple[BoundStep, ...]
    arcs: tuple[tuple[str, str], ...]
    mode: BindingMode
    reservations: tuple[str, ...] = ()
    tasks: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def step(self, step_id: str) -> BoundStep:
        for s in self.steps:
            if s.id == step_id:
                return s
        raise KeyError(step_id)

    def predecessors(self, step_id: str) -> list[str]:
        return [a for a, b in self.arcs if b == step_id]

    def successors(self, step_id: str) -> list[str]:
        return [b for a, b in self.arcs if a == step_id]

    def activity_steps(self, task_id: Optional[str] = None) -> list[BoundStep]:
        return [s for s in self.steps if s.kind == ACTIVITY and (task_id is None or s.task_id == task_id)]

    def bound_workers(self) -> list[str]:
        return sorted({s.worker for s in self.steps if s.kind == ACTIVITY and s.worker})

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "graph": {"nodes": [s.id for s in self.steps], "arcs": [list(a) for a in self.arcs]},
            "mode": self.mode.value,
            "reservations": list(self.reservations),
            "tasks": {t: list(ls) for t, ls in self.tasks.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def psm_from_dict(data: Mapping) -> ProcessPSM:
    return ProcessPSM(
        tuple(BoundStep.from_dict(s) for s in data["steps"]),
        tuple(tuple(a) for a in data["graph"]["arcs"]),
        BindingMode(data["mode"]),
        tuple(data.get("reservations", [])),
        {t: tuple(ls) for t, ls in data.get("tasks", {}).items()},
    )


def load_psm(text: str) -> ProcessPSM:
    return psm_from_dict(json.loads(text))


# ---------------------------------------------------------------- matchmaking


def query_for(activity: ActivitySpec) -> ServiceQuery:
    """Discovery query for an activity: its verb as label, its QoS as filter."""
    bindings = []
    comparisons = []
    for q in activity.qos:
        var = q.key.lower()
        if all(b.key != q.key for b in bindings):
            bindings.append(Binding(q.key, var))
        comparisons.append(Comparison(var, q.op, float(q.threshold)))
    return ServiceQuery(activity.verb, tuple(bindings), tuple(comparisons))


def latency_of(hit: LookupHit) -> float:
    desc = hit.description
    p = desc.param(LATENCY_KEY) if desc is not None else None
    return float(p.value) if p is not None and not isinstance(p.value, str) else math.inf


def rank(hits: Iterable[LookupHit]) -> list[LookupHit]:
    """Lowest declared latency first, then worker name, then path."""
    return sorted(hits, key=lambda h: (latency_of(h), h.endpoint, h.path))


def reachable(topology: Optional[Topology], worker: str, benches: Iterable[Optional[str]]) -> bool:
    if topology is None:
        return True
    reach = topology.reach.get(worker, frozenset())
    for bench in benches:
        if bench is not None and not reach & set(topology.benches[bench]):
            return False
    return True


def candidates(
    registry,
    query: ServiceQuery,
    topology: Optional[Topology] = None,
    benches: Sequence[Optional[str]] = (),
    exclude: Iterable[str] = (),
) -> tuple[list[LookupHit], list[LookupHit]]:
    """Ranked matches as (reachable from ``benches``, all)."""
    excluded = set(exclude)
    hits = rank(h for h in registry.lookup(SERVICE_RT, query) if h.endpoint not in excluded)
    return [h for h in hits if reachable(topology, h.endpoint, benches)], hits


# ---------------------------------------------------------------- binding


class _Tracker:
    """Predicted object placement while walking the process in order."""

    def __init__(self, topology: Optional[Topology]):
        self.topology = topology
        self.occupancy = {b: dict(o) for b, o in topology.occupancy.items()} if topology else {}
        self.fixture = {oid: fx for oid, (fx, _) in topology.objects.items()} if topology else {}
        self.alias: dict[str, str] = {}

    def resolve(self, obj: Optional[str]) -> Optional[str]:
        while obj in self.alias:
            obj = self.alias[obj]
        return obj

    def bench(self, obj: Optional[str]) -> Optional[str]:
        if obj is None or self.topology is None or self.fixture.get(obj) is None:
            return None
        for b, occ in self.occupancy.items():
            if self.fixture[obj] in occ.values():
                return b
        return None

    def position(self, obj: str) -> Optional[str]:
        bench = self.bench(obj)
        if bench is None:
            return None
        return next(p for p, fx in self.occupancy[bench].items() if fx == self.fixture[obj])

    def rotate_into(self, bench: str, reach: frozenset[str], obj: str) -> bool:
        positions = self.topology.benches[bench]
        for _ in range(len(positions)):
            if self.position(obj) in reach:
                return True
            occ = self.occupancy[bench]
            self.occupancy[bench] = {positions[(i + 1) % len(positions)]: occ[p] for i, p in enumerate(positions)}
        return self.position(obj) in reach

    def transfer_target(self, reach: frozenset[str]) -> Optional[tuple[str, str]]:
        used = set(self.fixture.values())
        for bench in sorted(self.topology.benches):
            if not reach & set(self.topology.benches[bench]):
                continue
            for pos in self.topology.benches[bench]:
                fx = self.occupancy[bench][pos]
                if fx not in used:
                    return bench, fx
        return None


def _task_order(pim: ProcessPIM) -> list[str]:
    task_ids = [t.id for t in pim.tasks]
    preds = {t: task_predecessors(pim.graph, t) for t in task_ids}
    succs: dict[str, list[str]] = {t: [] for t in task_ids}
    for t, ps in preds.items():
        for p in ps:
            succs[p].append(t)
    indeg = {t: len(ps) for t, ps in preds.items()}
    heap = [(natural_key(t), t) for t in task_ids if indeg[t] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        _, t = heapq.heappop(heap)
        out.append(t)
        for s in succs[t]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(heap, (natural_key(s), s))
    return out


def _part_objects(pim: ProcessPIM, topology: Optional[Topology]) -> dict[str, str]:
    """Map each part inside a master/branch sub-assembly to its physical object."""
    if topology is None:
        return {}
    out = {}
    for init in pim.graph.initials:
        oid = topology.object_for(init.subassembly)
        if oid is not None:
            out.update((part, oid) for part in init.members)
    return out


def bind(
    pim: ProcessPIM,
    registry,
    mode: BindingMode = BindingMode.STATIC,
    topology: Optional[Topology] = None,
    book: Optional[ReservationBook] = None,
    holder: str = "psm",
) -> ProcessPSM:
    """Resolve every activity of ``pim`` and produce a platform-specific process.

    :param topology: platform layout; enables reach filtering and the
        insertion of rotation/transfer steps
    :param book: when given, static and eager bindings reserve their workers
    """
    mode = BindingMode(mode)
    tasks = {t.id: t for t in pim.tasks}
    part_obj = _part_objects(pim, topology)
    tracker = _Tracker(topology)
    steps: list[BoundStep] = []
    arcs: set[tuple[str, str]] = set()
    last_of_task: dict[str, str] = {}
    last_of_object: dict[str, str] = {}

    for task_id in _task_order(pim):
        task = tasks[task_id]
        prev: Optional[str] = None
        entry_preds = [last_of_task[p] for p in sorted(task_predecessors(pim.graph, task_id), key=natural_key)]
        for n, act in enumerate(task.activities, 1):
            step_id = f"{task_id}.{n}"
            obj = tracker.resolve(part_obj.get(act.target.part)) if act.target else None
            subj = tracker.resolve(part_obj.get(act.subject.part)) if act.subject else None
            if obj is None:
                obj, subj = subj, None
            if subj == obj:
                subj = None
            query = None if act.verb == NOOP else query_for(act)
            new: list[BoundStep] = []
            endpoint = None
            if query is not None and mode is not BindingMode.LAZY:
                near, anywhere = candidates(registry, query, topology, [tracker.bench(obj), tracker.bench(subj)])
                if not anywhere:
                    raise UnsatisfiedActivity(task_id, act.verb, query.filter)
                choice = near[0] if near else anywhere[0]
                endpoint = (choice.endpoint, choice.path)
                if topology is not None and obj is not None and tracker.bench(obj) is not None:
                    reach = topology.reach.get(choice.endpoint, frozenset())
                    if not near:
                        target = tracker.transfer_target(reach)
                        if target is None:
                            raise UnsatisfiedActivity(task_id, act.verb, query.filter)
                        new.append(BoundStep(f"{step_id}~xfer", TRANSFER, task_id, object=obj, for_step=step_id, workbench=target[0]))
                        tracker.fixture[obj] = target[1]
                    bench = tracker.bench(obj)
                    if reach and tracker.position(obj) not in reach:
                        tracker.rotate_into(bench, reach, obj)
                        new.append(BoundStep(f"{step_id}~rot", ROTATE, task_id, object=obj, for_step=step_id, workbench=bench))
            new.append(
                BoundStep(step_id, ACTIVITY, task_id, act.liaison, act.verb, endpoint, obj, subj, query, act.repeat)
            )
            first = new[0].id
            if prev is not None:
                arcs.add((prev, first))
            elif entry_preds:
                arcs.update((p, first) for p in entry_preds)
            for o in (obj, subj):
                if o is not None and o in last_of_object and last_of_object[o] != prev:
                    arcs.add((last_of_object[o], first))
            for a, b in zip(new, new[1:]):
                arcs.add((a.id, b.id))
            steps.extend(new)
            prev = step_id
            for o in (obj, subj):
                if o is not None:
                    last_of_object[o] = step_id
            if subj is not None and obj is not None:
                tracker.alias[subj] = obj
                tracker.fixture[subj] = tracker.fixture.get(obj)
        if prev is not None:
            last_of_task[task_id] = prev

    reservations: tuple[str, ...] = ()
    psm = ProcessPSM(
        tuple(steps),
        tuple(sorted(arcs, key=lambda a: (natural_key(a[0]), natural_key(a[1])))),
        mode,
        (),
        {t.id: t.liaisons for t in pim.tasks},
    )
    if mode is not BindingMode.LAZY:
        reservations = tuple(psm.bound_workers())
        if book is not None:
            for w in reservations:
                book.acquire(w, holder)
    return replace(psm, reservations=reservations)


def resolve_step(
    step: BoundStep,
    registry,
    topology: Optional[Topology] = None,
    benches: Sequence[Optional[str]] = (),
    exclude: Iterable[str] = (),
) -> tuple[str, str]:
    """Pick an endpoint for one activity step against the current registry."""
    if step.query is None:
        raise UnsatisfiedActivity(step.task_id, step.verb or NOOP)
    near, _ = candidates(registry, step.query, topology, benches, exclude)
    if not near:
        raise UnsatisfiedActivity(step.task_id, step.verb, step.query.filter)
    return near[0].endpoint, near[0].path


def rebind(
    psm: ProcessPSM,
    failed_worker: str,
    registry,
    executed: Iterable[str] = (),
    topology: Optional[Topology] = None,
    benches: Optional[Mapping[str, Sequence[Optional[str]]]] = None,
) -> ProcessPSM:
    """Re-resolve the unexecuted steps bound to ``failed_worker``.

    :param benches: per step id, the workbenches its objects currently sit
        on; used for reach filtering
    """
    done = set(executed)
    changed = False
    steps = []
    for s in psm.steps:
        if s.kind == ACTIVITY and s.worker == failed_worker and s.id not in done:
            endpoint = resolve_step(s, registry, topology, (benches or {}).get(s.id, ()), exclude=[failed_worker])
            s = replace(s, endpoint=endpoint)
            changed = True
        steps.append(s)
    if not changed:
        return psm
    out = replace(psm, steps=tuple(steps))
    if psm.mode is not BindingMode.LAZY:
        out = replace(out, reservations=tuple(out.bound_workers()))
    return out

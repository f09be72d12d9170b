"""Discrete-event simulation of an assembly platform.

Workers expose services (each a description plus a declared behaviour),
workbenches carry fixtures that rotate through positions, and physical
objects sit on fixtures. Time is simulated in microseconds with simpy; the
resource directory sees the same clock in seconds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import simpy
import yaml

from .registry import DEFAULT_LIFETIME, Registry, ResourceLink, SERVICE_RT
from .services import ParamEntry, ServiceDescription, parse_n3_description

ANY = "*"
LATENCY_KEY = "LATENCY_US"

SUCCESS = "success"
WORKER_BUSY = "WorkerBusy"
WORKER_FAILED = "WorkerFailed"
NO_SUCH_SERVICE = "NoSuchService"
PRECONDITION_FAILED = "PreconditionFailed"


class PlatformError(Exception):
    pass


class ConfigError(PlatformError):
    pass


class BenchBusy(PlatformError):
    pass


class WorkerBusy(PlatformError):
    pass


class WorkerFailed(PlatformError):
    pass


class NoSuchService(PlatformError):
    pass


class PreconditionFailed(PlatformError):
    def __init__(self, expected: Any, actual: Any):
        super().__init__(f"expected {expected}, found {actual}")
        self.expected = expected
        self.actual = actual


class Status(str, Enum):
    IDLE = "Idle"
    BUSY = "Busy"
    FAILED = "Failed"


@dataclass(frozen=True)
class OperationSpace:
    """Where and in which state an object must be for a service to act on it.

    ``locations`` of ``None`` admits any location; state ``"*"`` any state.
    """

    locations: Optional[frozenset[str]] = None
    state: str = ANY

    def admits(self, location: Optional[str], state: str) -> bool:
        if self.locations is not None and location not in self.locations:
            return False
        return self.state == ANY or self.state == state


@dataclass(frozen=True)
class Behavior:
    latency_us: int
    space: OperationSpace = OperationSpace()
    effect_state: Optional[str] = None


@dataclass(frozen=True)
class WorkerService:
    path: str
    description: ServiceDescription
    behavior: Behavior


@dataclass
class WorkerSim:
    name: str
    services: dict[str, WorkerService]
    reach: frozenset[str] = frozenset()
    status: Status = Status.IDLE
    failed_event: Optional[simpy.Event] = field(default=None, repr=False)


@dataclass
class WorkbenchSim:
    name: str
    positions: list[str]
    fixtures: list[str]
    occupancy: dict[str, str] = field(default_factory=dict)
    rotate_us: int = 2000
    active: int = 0

    def __post_init__(self):
        if not self.occupancy:
            self.occupancy = dict(zip(self.positions, self.fixtures))

    def position_of(self, fixture: str) -> str:
        for pos, fx in self.occupancy.items():
            if fx == fixture:
                return pos
        raise KeyError(fixture)

    def rotate(self) -> dict[str, str]:
        """Advance every fixture one position (last wraps to first)."""
        if self.active:
            raise BenchBusy(f"{self.name}: a worker is operating on it")
        n = len(self.positions)
        self.occupancy = {self.positions[(i + 1) % n]: self.occupancy[p] for i, p in enumerate(self.positions)}
        return dict(self.occupancy)


@dataclass
class PhysicalObject:
    id: str
    fixture: Optional[str]
    state: str = "initial"
    subassembly: Optional[str] = None
    held_by: Optional[str] = None
    merged_into: Optional[str] = None


@dataclass(frozen=True)
class ExecResult:
    outcome: str
    rtt_us: int = 0
    detail: str = ""
    expected: Any = None
    actual: Any = None

    @property
    def ok(self) -> bool:
        return self.outcome == SUCCESS

    def raise_for_outcome(self) -> None:
        if self.outcome == SUCCESS:
            return
        if self.outcome == PRECONDITION_FAILED:
            raise PreconditionFailed(self.expected, self.actual)
        raise {WORKER_BUSY: WorkerBusy, WORKER_FAILED: WorkerFailed, NO_SUCH_SERVICE: NoSuchService}[self.outcome](
            self.detail
        )

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "rtt_us": self.rtt_us, "detail": self.detail}


@dataclass(frozen=True)
class Topology:
    """Static view of the platform used when binding a process."""

    benches: dict[str, tuple[str, ...]]
    occupancy: dict[str, dict[str, str]]
    objects: dict[str, tuple[Optional[str], Optional[str]]]
    reach: dict[str, frozenset[str]]

    def bench_of_fixture(self, fixture: str) -> Optional[str]:
        for bench, occ in self.occupancy.items():
            if fixture in occ.values():
                return bench
        return None

    def object_for(self, subassembly: str) -> Optional[str]:
        for oid, (_, sub) in sorted(self.objects.items()):
            if sub == subassembly:
                return oid
        return None


class Platform:
    """Simulated assembly platform.

    :param env: simpy environment; its clock is in microseconds
    :param registry: resource directory the workers register with
    :param link_delay_us: one-way network delay added to every request
    :param jitter_us: upper bound of the seeded random delay per request
    """

    def __init__(
        self,
        env: simpy.Environment,
        registry,
        workers: Mapping[str, WorkerSim] = (),
        workbenches: Mapping[str, WorkbenchSim] = (),
        objects: Mapping[str, PhysicalObject] = (),
        link_delay_us: int = 250,
        jitter_us: int = 0,
        transfer_us: int = 4000,
        lifetime: float = DEFAULT_LIFETIME,
        seed: int = 0,
    ):
        self.env = env
        self.registry = registry
        self.workers = dict(workers)
        self.workbenches = dict(workbenches)
        self.objects = dict(objects)
        self.link_delay_us = link_delay_us
        self.jitter_us = jitter_us
        self.transfer_us = transfer_us
        self.lifetime = lifetime
        self.rng = random.Random(seed)

    # -- queries

    def bench_of(self, object_id: str) -> Optional[WorkbenchSim]:
        fixture = self.objects[object_id].fixture
        for bench in self.workbenches.values():
            if fixture in bench.fixtures:
                return bench
        return None

    def location(self, object_id: str) -> Optional[str]:
        obj = self.objects[object_id]
        if obj.held_by:
            return f"held:{obj.held_by}"
        bench = self.bench_of(object_id)
        return bench.position_of(obj.fixture) if bench else None

    def topology(self) -> Topology:
        return Topology(
            benches={b.name: tuple(b.positions) for b in self.workbenches.values()},
            occupancy={b.name: dict(b.occupancy) for b in self.workbenches.values()},
            objects={o.id: (o.fixture, o.subassembly) for o in self.objects.values()},
            reach={w.name: w.reach for w in self.workers.values()},
        )

    # -- registration

    def links_of(self, worker: WorkerSim) -> list[ResourceLink]:
        return [ResourceLink(s.path, SERVICE_RT, s.description) for s in worker.services.values()]

    def register(self, name: str) -> str:
        worker = self.workers[name]
        return self.registry.register(name, self.lifetime, self.links_of(worker))

    def register_all(self) -> None:
        for name in sorted(self.workers):
            if self.workers[name].services:
                self.register(name)

    def inject_failure(self, name: str) -> None:
        worker = self.workers[name]
        worker.status = Status.FAILED
        self.registry.unregister(name)
        if worker.failed_event is not None and not worker.failed_event.triggered:
            worker.failed_event.succeed()

    def recover(self, name: str) -> None:
        worker = self.workers[name]
        worker.status = Status.IDLE
        worker.failed_event = self.env.event()
        if worker.services:
            self.register(name)

    # -- actions

    def rotate(self, bench_name: str) -> dict[str, str]:
        return self.workbenches[bench_name].rotate()

    def rotate_process(self, bench_name: str):
        """Simpy process: occupy the bench for its rotation time, then shift."""
        bench = self.workbenches[bench_name]
        if bench.active:
            raise BenchBusy(f"{bench_name}: a worker is operating on it")
        yield self.env.timeout(bench.rotate_us)
        return bench.rotate()

    def transfer_process(self, object_id: str, bench_name: str):
        bench = self.workbenches[bench_name]
        used = {o.fixture for o in self.objects.values()}
        free = [fx for fx in bench.fixtures if fx not in used]
        if not free:
            raise PlatformError(f"no free fixture on {bench_name}")
        yield self.env.timeout(self.transfer_us)
        obj = self.objects[object_id]
        for other in self.objects.values():
            if other.merged_into == object_id:
                other.fixture = free[0]
        obj.fixture = free[0]
        return free[0]

    def execute(self, worker_name: str, path: str, args: Optional[Mapping[str, Any]] = None) -> simpy.Process:
        """Start an EXECUTE request; the process value is an :class:`ExecResult`."""
        return self.env.process(self._execute(worker_name, path, dict(args or {})))

    def _delay(self) -> int:
        jitter = self.rng.randint(0, self.jitter_us) if self.jitter_us else 0
        return self.link_delay_us + jitter

    def _execute(self, worker_name: str, path: str, args: dict):
        start = self.env.now
        yield self.env.timeout(self._delay())

        def reply(outcome, detail="", expected=None, actual=None):
            return ExecResult(outcome, int(self.env.now - start) + self.link_delay_us, detail, expected, actual)

        worker = self.workers.get(worker_name)
        if worker is None or worker.status is Status.FAILED:
            yield self.env.timeout(self.link_delay_us)
            return replace(reply(WORKER_FAILED, f"{worker_name} unavailable"), rtt_us=int(self.env.now - start))
        service = worker.services.get(path)
        if service is None:
            yield self.env.timeout(self.link_delay_us)
            return replace(reply(NO_SUCH_SERVICE, f"{worker_name} has no {path}"), rtt_us=int(self.env.now - start))
        if worker.status is Status.BUSY:
            yield self.env.timeout(self.link_delay_us)
            return replace(reply(WORKER_BUSY, f"{worker_name} busy"), rtt_us=int(self.env.now - start))

        obj_id = args.get("object")
        subject_id = args.get("subject")
        if obj_id is not None:
            if obj_id not in self.objects:
                raise PlatformError(f"unknown object {obj_id}")
            obj = self.objects[obj_id]
            here = self.location(obj_id)
            if not service.behavior.space.admits(here, obj.state):
                expected = (sorted(service.behavior.space.locations or []), service.behavior.space.state)
                yield self.env.timeout(self.link_delay_us)
                res = reply(PRECONDITION_FAILED, f"{obj_id} at {here}", expected, (here, obj.state))
                return replace(res, rtt_us=int(self.env.now - start))
        if subject_id is not None:
            there = self.location(subject_id)
            if worker.reach and there not in worker.reach:
                yield self.env.timeout(self.link_delay_us)
                res = reply(PRECONDITION_FAILED, f"{subject_id} at {there}", sorted(worker.reach), there)
                return replace(res, rtt_us=int(self.env.now - start))

        benches = {b.name: b for b in (self.bench_of(o) for o in (obj_id, subject_id) if o) if b is not None}
        worker.status = Status.BUSY
        if worker.failed_event is None:
            worker.failed_event = self.env.event()
        for b in benches.values():
            b.active += 1
        try:
            yield self.env.timeout(service.behavior.latency_us) | worker.failed_event
        finally:
            for b in benches.values():
                b.active -= 1
        if worker.status is Status.FAILED:
            yield self.env.timeout(self.link_delay_us)
            return replace(reply(WORKER_FAILED, f"{worker_name} failed during {path}"), rtt_us=int(self.env.now - start))
        worker.status = Status.IDLE
        if obj_id is not None:
            obj = self.objects[obj_id]
            if service.behavior.effect_state:
                obj.state = service.behavior.effect_state
            if subject_id is not None and subject_id != obj_id:
                subject = self.objects[subject_id]
                subject.fixture = obj.fixture
                subject.merged_into = obj_id
        yield self.env.timeout(self.link_delay_us)
        return ExecResult(SUCCESS, int(self.env.now - start), f"{worker_name}{path}")

    def execute_now(self, worker_name: str, path: str, args: Optional[Mapping[str, Any]] = None) -> ExecResult:
        """Run the simulation until one EXECUTE completes."""
        proc = self.execute(worker_name, path, args)
        self.env.run(until=proc)
        return proc.value


# ---------------------------------------------------------------- scenarios


def _description(worker: str, spec: Mapping[str, Any], path: str, latency: int) -> ServiceDescription:
    if "n3" in spec:
        found = parse_n3_description(spec["n3"])
        if len(found) != 1:
            raise ConfigError(f"{worker}{path}: n3 must describe exactly one service")
        desc = found[0]
    else:
        if "label" not in spec:
            raise ConfigError(f"{worker}{path}: service needs a label or n3 text")
        params = []
        for key, value in (spec.get("params") or {}).items():
            if isinstance(value, bool):
                raise ConfigError(f"{worker}{path}: boolean parameter {key}")
            kind = "FLOAT" if isinstance(value, float) else "INT" if isinstance(value, int) else "STRING"
            params.append(ParamEntry(str(key), value, kind))
        desc = ServiceDescription(f"urn:cpusiot:{worker}{path}", spec["label"], "en", tuple(params))
    if desc.param(LATENCY_KEY) is None:
        desc = replace(desc, params=desc.params + (ParamEntry(LATENCY_KEY, latency, "INT"),))
    return desc


def _load_config(config: Union[str, Path, Mapping]) -> Mapping:
    if isinstance(config, Mapping):
        return config
    text = Path(config).read_text() if Path(str(config)).exists() else str(config)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario is not valid YAML: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("scenario must be a mapping")
    return data


def load_scenario(
    config: Union[str, Path, Mapping],
    registry=None,
    env: Optional[simpy.Environment] = None,
    seed: int = 0,
    register: bool = True,
) -> Platform:
    """Build a platform from a scenario document and register its workers.

    Without an explicit ``registry`` an in-process one is created whose clock
    follows the simulation.
    """
    data = _load_config(config)
    env = env or simpy.Environment()
    if registry is None:
        registry = Registry(clock=lambda: env.now / 1e6)

    benches = {}
    for b in data.get("workbenches") or []:
        try:
            name, positions, fixtures = b["name"], list(b["positions"]), list(b["fixtures"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"workbench entry {b!r} missing {exc}") from None
        if name in benches:
            raise ConfigError(f"duplicate workbench {name}")
        if len(positions) != len(fixtures) or len(set(positions)) != len(positions) or len(set(fixtures)) != len(fixtures):
            raise ConfigError(f"{name}: positions and fixtures must pair up one to one")
        benches[name] = WorkbenchSim(name, positions, fixtures, rotate_us=int(b.get("rotate_us", 2000)))
    all_positions = {p for b in benches.values() for p in b.positions}
    all_fixtures = {f for b in benches.values() for f in b.fixtures}
    if len(all_positions) != sum(len(b.positions) for b in benches.values()):
        raise ConfigError("position ids must be unique across workbenches")

    objects = {}
    for o in data.get("objects") or []:
        oid = o.get("id")
        if oid is None or oid in objects:
            raise ConfigError(f"object id missing or duplicated: {oid!r}")
        fixture = o.get("fixture")
        if fixture is not None and fixture not in all_fixtures:
            raise ConfigError(f"object {oid}: unknown fixture {fixture}")
        objects[oid] = PhysicalObject(oid, fixture, str(o.get("state", "initial")), o.get("subassembly"))

    workers = {}
    for w in data.get("workers") or []:
        name = w.get("name")
        if not name:
            raise ConfigError("worker without a name")
        if name in workers:
            raise ConfigError(f"duplicate worker {name}")
        reach = frozenset(w.get("reach") or [])
        unknown = reach - all_positions
        if unknown:
            raise ConfigError(f"{name}: reach names unknown positions {sorted(unknown)}")
        services = {}
        for s in w.get("services") or []:
            path = s.get("path")
            if not path:
                raise ConfigError(f"{name}: service without a path")
            path = path if path.startswith("/") else "/" + path
            if path in services:
                raise ConfigError(f"{name}: duplicate service {path}")
            latency = int(s.get("latency_us", 1000))
            if latency <= 0:
                raise ConfigError(f"{name}{path}: latency must be positive")
            space = s.get("operation_space") or {}
            locations = space.get("locations", sorted(reach) if reach else None)
            behavior = Behavior(
                latency,
                OperationSpace(frozenset(locations) if locations is not None else None, str(space.get("state", ANY))),
                (s.get("effect") or {}).get("state"),
            )
            services[path] = WorkerService(path, _description(name, s, path, latency), behavior)
        workers[name] = WorkerSim(name, services, reach)

    platform = Platform(
        env,
        registry,
        workers,
        benches,
        objects,
        link_delay_us=int(data.get("link_delay_us", 250)),
        jitter_us=int(data.get("jitter_us", 0)),
        transfer_us=int(data.get("transfer_us", 4000)),
        lifetime=float(data.get("registration_lifetime", DEFAULT_LIFETIME)),
        seed=seed,
    )
    for w in workers.values():
        w.failed_event = env.event()
    if register:
        platform.register_all()
    return platform

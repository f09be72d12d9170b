import graphlib

import pytest

from cpusiot.binder import (
    ACTIVITY,
    ROTATE,
    BindingMode,
    ReservationBook,
    ReservationConflict,
    UnsatisfiedActivity,
    bind,
    load_psm,
    query_for,
    rank,
    rebind,
)
from cpusiot.registry import Registry, ResourceLink
from cpusiot.services import ParamEntry, ServiceDescription

STATIC_WORKERS = {
    "AT1.1": "R1", "AT1.2": "R1", "AT2.1": "R1", "AT3.1": "R1", "AT6.2": "R1",
    "AT4.1": "R2", "AT4.2": "R2", "AT5.1": "R2", "AT6.1": "R2",
}


def static(pim, platform, book=None):
    return bind(pim, platform.registry, BindingMode.STATIC, platform.topology(), book)


def test_static_bind_gregor(gregor_pim, platform):
    book = ReservationBook()
    psm = static(gregor_pim, platform, book)
    acts = {s.id: s.worker for s in psm.steps if s.kind == ACTIVITY}
    assert acts == STATIC_WORKERS
    rotations = [s for s in psm.steps if s.kind == ROTATE]
    assert {s.id for s in rotations} == {"AT6.1~rot", "AT6.2~rot"}
    assert all(s.workbench == "W1" for s in rotations)
    assert psm.reservations == ("R1", "R2")
    assert book.held("psm") == ["R1", "R2"]


def test_step_graph_is_acyclic_and_respects_tasks(gregor_pim, platform):
    psm = static(gregor_pim, platform)
    ts = graphlib.TopologicalSorter({s.id: set(psm.predecessors(s.id)) for s in psm.steps})
    order = list(ts.static_order())
    pos = {sid: i for i, sid in enumerate(order)}
    task_steps = {}
    for s in psm.steps:
        task_steps.setdefault(s.task_id, []).append(s.id)
    for a, b in gregor_pim.graph.arcs:
        if a in task_steps and b in task_steps:
            assert max(pos[x] for x in task_steps[a]) < min(pos[y] for y in task_steps[b])


def test_lazy_leaves_steps_unbound(gregor_pim, platform):
    book = ReservationBook()
    psm = bind(gregor_pim, platform.registry, BindingMode.LAZY, platform.topology(), book)
    assert all(s.endpoint is None for s in psm.activity_steps())
    assert psm.reservations == ()
    assert book.held() == []
    assert not [s for s in psm.steps if s.kind == ROTATE]


def test_eager_reserves_each_worker_once(gregor_pim, platform):
    book = ReservationBook()
    psm = bind(gregor_pim, platform.registry, BindingMode.EAGER, platform.topology(), book)
    assert sorted(psm.reservations) == sorted(set(psm.bound_workers()))
    assert book.held("psm") == sorted(set(psm.bound_workers()))


def test_unsatisfied_activity(gregor_pim):
    with pytest.raises(UnsatisfiedActivity) as err:
        bind(gregor_pim, Registry(lambda: 0.0), BindingMode.STATIC)
    assert err.value.task_id == "AT1"


def test_qos_filters_candidates(gregor_pim, platform):
    # R2 and R3 both offer pick-and-place with PAYLOAD > 7; drop R3's and
    # weaken R2's: the seat placement can no longer be bound
    reg = platform.registry
    reg.unregister("R3")
    r2 = platform.workers["R2"]
    desc = r2.services["/pickAndPlace"].description
    weak = ServiceDescription(desc.iri, desc.label, desc.lang, tuple(
        ParamEntry(p.key, 5.0, p.declared_type) if p.key == "PAYLOAD" else p for p in desc.params
    ))
    links = [ResourceLink(path, description=weak if path == "/pickAndPlace" else s.description) for path, s in r2.services.items()]
    reg.register("R2", 1e6, links)
    with pytest.raises(UnsatisfiedActivity) as err:
        static(gregor_pim, platform)
    assert err.value.task_id == "AT4"


def test_rank_prefers_lowest_latency(platform):
    hits = platform.registry.lookup()
    screw = [h for h in hits if h.path == "/screwPickAndFasten"]
    assert [h.endpoint for h in rank(screw)] == ["R1", "R2", "R3"]


def test_query_for_uses_activity_qos(gregor_pim):
    q = query_for(gregor_pim.task("AT4").activities[0])
    assert q.label == "PickAndPlace"
    assert {c.var for c in q.filter} == {"payload", "gripper_opening"}


def test_psm_json_round_trip(gregor_pim, platform):
    psm = static(gregor_pim, platform)
    again = load_psm(psm.to_json())
    assert again == psm
    assert again.to_json() == psm.to_json()


def test_rebind_moves_unexecuted_steps(gregor_pim, platform):
    psm = static(gregor_pim, platform)
    platform.inject_failure("R2")
    executed = ["AT4.1", "AT4.2", "AT5.1"]
    new = rebind(psm, "R2", platform.registry, executed, platform.topology())
    assert new.step("AT6.1").worker == "R3"
    assert [new.step(s).worker for s in executed] == ["R2", "R2", "R2"]
    assert {s.id for s in new.steps} == {s.id for s in psm.steps}


def test_reservation_conflict():
    book = ReservationBook()
    book.acquire("R1", "a")
    book.acquire("R1", "a")
    with pytest.raises(ReservationConflict):
        book.acquire("R1", "b")
    book.release_all("a")
    book.acquire("R1", "b")
    assert book.held("b") == ["R1"]


def test_competing_static_processes_conflict(gregor_pim, platform):
    book = ReservationBook()
    static(gregor_pim, platform, book)
    with pytest.raises(ReservationConflict):
        bind(gregor_pim, platform.registry, BindingMode.STATIC, platform.topology(), book, holder="other")

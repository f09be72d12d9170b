import pytest

from cpusiot import data_path
from cpusiot.platform_sim import (
    PRECONDITION_FAILED,
    SUCCESS,
    WORKER_BUSY,
    WORKER_FAILED,
    NO_SUCH_SERVICE,
    BenchBusy,
    ConfigError,
    load_scenario,
)

SCENARIO = data_path("gregor_scenario.yaml")

SMALL = {
    "link_delay_us": 100,
    "workbenches": [{"name": "W", "positions": ["p1", "p2", "p3"], "fixtures": ["F1", "F2", "F3"], "rotate_us": 500}],
    "objects": [{"id": "o", "fixture": "F1", "state": "empty"}, {"id": "s", "fixture": "F2"}],
    "workers": [
        {
            "name": "A",
            "reach": ["p1", "p2"],
            "services": [
                {"path": "place", "label": "PickAndPlace", "latency_us": 1000, "params": {"PAYLOAD": 3.0},
                 "operation_space": {"locations": ["p1"], "state": "empty"}, "effect": {"state": "placed"}},
            ],
        },
        {"name": "B", "reach": ["p3"], "services": [{"path": "hold", "label": "Hold", "latency_us": 700}]},
    ],
}


@pytest.fixture
def plat():
    return load_scenario(SMALL, seed=1)


def test_gregor_scenario_loads():
    p = load_scenario(SCENARIO, seed=0)
    assert sorted(p.workers) == ["R1", "R2", "R3"]
    assert p.location("base") == "pos1"
    hits = p.registry.lookup("as:Service")
    assert {(h.endpoint, h.path) for h in hits} >= {("R2", "/pickAndPlace"), ("R1", "/pickAndInsert")}
    # R2's pick-and-place carries the published description plus the latency
    desc = p.workers["R2"].services["/pickAndPlace"].description
    assert desc.values()["PAYLOAD"] == 10.0
    assert desc.values()["LATENCY_US"] == 5000


def test_rotation_has_period_n(plat):
    bench = plat.workbenches["W"]
    start = dict(bench.occupancy)
    assert plat.rotate("W") == {"p2": "F1", "p3": "F2", "p1": "F3"}
    plat.rotate("W")
    plat.rotate("W")
    assert bench.occupancy == start


def test_execute_success_and_rtt(plat):
    res = plat.execute_now("A", "/place", {"object": "o", "subject": "s"})
    assert res.outcome == SUCCESS
    assert res.rtt_us == 100 + 1000 + 100
    assert plat.objects["o"].state == "placed"
    assert plat.objects["s"].merged_into == "o"
    assert plat.location("s") == "p1"


def test_precondition_failed_reports_expected_and_actual(plat):
    plat.rotate("W")
    res = plat.execute_now("A", "/place", {"object": "o"})
    assert res.outcome == PRECONDITION_FAILED
    assert res.expected == (["p1"], "empty")
    assert res.actual == ("p2", "empty")
    assert plat.objects["o"].state == "empty"


def test_wrong_state_fails(plat):
    plat.objects["o"].state = "done"
    assert plat.execute_now("A", "/place", {"object": "o"}).outcome == PRECONDITION_FAILED


def test_unknown_service_and_worker(plat):
    assert plat.execute_now("A", "/nope").outcome == NO_SUCH_SERVICE
    assert plat.execute_now("Z", "/place").outcome == WORKER_FAILED


def test_busy_worker(plat):
    first = plat.execute("A", "/place", {"object": "o"})
    plat.env.run(until=500)
    second = plat.execute("A", "/place", {"object": "o"})
    plat.env.run(until=second)
    assert second.value.outcome == WORKER_BUSY
    plat.env.run(until=first)
    assert first.value.outcome == SUCCESS


def test_rotation_refused_while_worker_active(plat):
    proc = plat.execute("A", "/place", {"object": "o"})
    plat.env.run(until=500)
    with pytest.raises(BenchBusy):
        plat.rotate("W")
    plat.env.run(until=proc)
    plat.rotate("W")


def test_failure_during_execute(plat):
    proc = plat.execute("A", "/place", {"object": "o"})
    plat.env.run(until=400)
    plat.inject_failure("A")
    plat.env.run(until=proc)
    assert proc.value.outcome == WORKER_FAILED
    assert plat.objects["o"].state == "empty"
    assert all(h.endpoint != "A" for h in plat.registry.lookup())
    plat.recover("A")
    assert any(h.endpoint == "A" for h in plat.registry.lookup())
    assert plat.execute_now("A", "/place", {"object": "o"}).outcome == SUCCESS


def test_rotate_process_takes_time(plat):
    proc = plat.env.process(plat.rotate_process("W"))
    plat.env.run(until=proc)
    assert plat.env.now == 500
    assert plat.location("o") == "p2"


def test_jitter_is_seeded():
    def rtts(seed):
        p = load_scenario({**SMALL, "jitter_us": 300}, seed=seed)
        out = []
        for _ in range(5):
            p.objects["o"].state = "empty"
            out.append(p.execute_now("A", "/place", {"object": "o"}).rtt_us)
        return out

    assert rtts(7) == rtts(7)
    assert all(1200 <= r <= 1500 for r in rtts(7))


def test_registry_clock_follows_simulation():
    p = load_scenario({**SMALL, "registration_lifetime": 0.01}, seed=0)
    assert p.registry.lookup()
    p.env.run(until=10_000)
    assert p.registry.lookup() == []


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d["workers"].append(dict(d["workers"][0])),
        lambda d: d["workers"][0].update(reach=["nowhere"]),
        lambda d: d["objects"][0].update(fixture="F9"),
        lambda d: d["workbenches"][0].update(fixtures=["F1"]),
        lambda d: d["workers"][0]["services"][0].update(latency_us=0),
        lambda d: d["workers"][0]["services"].append({"path": "x"}),
    ],
)
def test_config_errors(mutate):
    import copy

    data = copy.deepcopy(SMALL)
    mutate(data)
    with pytest.raises(ConfigError):
        load_scenario(data)


def test_bad_yaml():
    with pytest.raises(ConfigError):
        load_scenario("workers: [unclosed")

from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from cpusiot import data_path
from cpusiot.services import (
    Binding,
    Comparison,
    MissingLabel,
    ParamEntry,
    ServiceDescription,
    ServiceQuery,
    TypeMismatch,
    UnboundFilterVariable,
    eval_query,
    parse_n3_description,
    parse_query,
    serialize_description,
    serialize_query,
)

from oracles import brute_match

REF_DESC = Path(data_path("r2_pickandplace.n3")).read_text()
REF_QUERY = Path(data_path("pickandplace_query.rq")).read_text()


@pytest.fixture(scope="module")
def r2():
    (desc,) = parse_n3_description(REF_DESC)
    return desc


def test_parse_description(r2):
    assert r2.label == "PickAndPlace"
    assert r2.values() == {
        "PAYLOAD": 10.0,
        "FORCE": 100.0,
        "FORCE_ACCURACY": 5.5,
        "GRIPPER_OPENING": 155.0,
        "RANGE": 1300.0,
    }
    assert all(p.declared_type == "FLOAT" for p in r2.params)


def test_parse_query():
    q = parse_query(REF_QUERY)
    assert q.label == "PickAndPlace"
    assert {(b.key, b.var) for b in q.bindings} == {("PAYLOAD", "payload"), ("GRIPPER_OPENING", "grOpening")}
    assert set(q.filter) == {Comparison("payload", ">", 7.0), Comparison("grOpening", ">", 100.0)}


def test_reference_pair_matches(r2):
    assert eval_query(parse_query(REF_QUERY), [r2]) == [r2]


def test_payload_boundary(r2):
    q = parse_query(REF_QUERY)
    at = parse_n3_description(REF_DESC.replace("10.0", "7.0"))
    above = parse_n3_description(REF_DESC.replace("10.0", "7.000001"))
    assert eval_query(q, at) == []
    assert len(eval_query(q, above)) == 1


def test_missing_key_never_matches(r2):
    q = parse_query(REF_QUERY)
    stripped = ServiceDescription(r2.iri, r2.label, r2.lang, tuple(p for p in r2.params if p.key != "GRIPPER_OPENING"))
    assert not q.matches(stripped)


def test_round_trips(r2):
    assert parse_n3_description(serialize_description(r2)) == [r2]
    q = parse_query(REF_QUERY)
    assert parse_query(serialize_query(q)) == q


def test_missing_label():
    text = REF_DESC.replace("rdfs:label", "rdfs:comment")
    with pytest.raises(MissingLabel):
        parse_n3_description(text)


def test_type_mismatch():
    with pytest.raises(TypeMismatch):
        ParamEntry("PAYLOAD", "heavy", "FLOAT")
    with pytest.raises(TypeMismatch):
        ParamEntry("N", 1.5, "INT")


def test_unbound_filter_variable():
    with pytest.raises(UnboundFilterVariable):
        ServiceQuery("X", (Binding("A", "a"),), (Comparison("b", ">", 1.0),))
    text = REF_QUERY.replace("?grOpening>100.0", "?nope>100.0")
    with pytest.raises(UnboundFilterVariable):
        parse_query(text)


def test_strings_only_compare_equal():
    assert Comparison("v", "=", "abc").holds("abc")
    assert not Comparison("v", ">", "abc").holds("abd")
    assert not Comparison("v", "=", 1.0).holds("1.0")


def test_int_param_compares_numerically():
    svc = ServiceDescription("urn:s", "Count", params=(ParamEntry("N", 3, "INT"),))
    q = ServiceQuery("Count", (Binding("N", "n"),), (Comparison("n", ">=", 3.0),))
    assert q.matches(svc)


# ---- randomized round trips

keys = st.sampled_from(["PAYLOAD", "FORCE", "RANGE", "SPEED", "MODE"])
finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6)


@st.composite
def descriptions(draw):
    ks = draw(st.lists(keys, unique=True, max_size=5))
    params = []
    for k in ks:
        kind = draw(st.sampled_from(["FLOAT", "INT", "STRING"]))
        value = {
            "FLOAT": finite,
            "INT": st.integers(-10**6, 10**6),
            "STRING": st.text(alphabet="abcXYZ _-'\"\\", max_size=8),
        }[kind]
        params.append(ParamEntry(k, draw(value), kind))
    label = draw(st.sampled_from(["PickAndPlace", "Hold", "Screw Fasten"]))
    return ServiceDescription(f"urn:svc:{draw(st.integers(0, 99))}", label, "en", tuple(params))


@settings(max_examples=150)
@given(descriptions())
def test_description_round_trip(desc):
    assert parse_n3_description(serialize_description(desc)) == [desc]


@settings(max_examples=100)
@given(st.data())
def test_query_round_trip(data):
    ks = data.draw(st.lists(keys, unique=True, min_size=1, max_size=4))
    bindings = tuple(Binding(k, k.lower()) for k in ks)
    comps = tuple(
        Comparison(k.lower(), data.draw(st.sampled_from([">", ">=", "<", "<=", "="])), data.draw(finite))
        for k in data.draw(st.lists(st.sampled_from(ks), unique=True))
    )
    q = ServiceQuery("PickAndPlace", bindings, comps)
    assert parse_query(serialize_query(q)) == q


@settings(max_examples=200)
@given(descriptions(), st.data())
def test_matches_agree_with_oracle(desc, data):
    ks = data.draw(st.lists(keys, unique=True, max_size=3))
    comps = [(k, data.draw(st.sampled_from([">", ">=", "<", "<=", "="])), data.draw(finite)) for k in ks]
    q = ServiceQuery(desc.label, tuple(Binding(k, k.lower()) for k in ks), tuple(Comparison(k.lower(), op, v) for k, op, v in comps))
    expected = brute_match({"label": desc.label, "params": desc.values()}, {"label": q.label, "keys": ks, "filter": comps})
    assert q.matches(desc) == expected

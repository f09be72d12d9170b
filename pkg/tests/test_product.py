import warnings
from pathlib import Path

import pytest
from hypothesis import given, settings

from cpusiot import data_path
from cpusiot.product import (
    DanglingReference,
    InvalidModel,
    LiaisonKind,
    ModelWarning,
    Role,
    decomposition_report,
    parse_product_model,
    serialize,
    validate,
)

from strategies import HEADER, product_models

GREGOR = Path(data_path("gregor.ttl")).read_text()


def parse(text):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelWarning)
        return parse_product_model(text)


@pytest.fixture(scope="module")
def gregor():
    return parse(GREGOR)


def test_gregor_structure(gregor):
    assert gregor.root == "GregorChair"
    assert gregor.master.composite_part == "Base"
    assert gregor.master.base_part == "LegsConnector"
    assert [b.composite_part for b in gregor.branches] == ["UpperSubAssembly"]
    assert gregor.liaisons["Lup"].kind is LiaisonKind.HI_DCL_REALISED
    assert validate(gregor) == []


def test_gregor_decomposition_report(gregor):
    rep = decomposition_report(gregor)
    assert (rep.N, rep.K, rep.P, rep.M) == (2, 0, 2, 2)


def test_lift_and_liaison_parts(gregor):
    assert gregor.lift("GregorChair", "GasLift") == "Base"
    assert gregor.liaison_parts("Lj1") == frozenset({"Base", "UpperSubAssembly"})
    assert gregor.liaison_parts("Lc") == frozenset({f"Caster{i}" for i in range(1, 6)} | {f"Leg{i}" for i in range(1, 6)})


def test_serialize_round_trip(gregor):
    again = parse(serialize(gregor))
    assert again == gregor


def _model(body, extra_root=""):
    return HEADER + (
        ":P a psmm:CompositePart ; psmm:hasPart :A, :B ; psmm:hasLiaison :L1"
        + extra_root
        + ' ; psmm:masterSubAssembly [ psmm:of :P ; psmm:basePart :A ] .\n'
        ":A a psmm:PrimitivePart .\n:B a psmm:PrimitivePart .\n" + body
    )


PAIR = 'psmm:pair [ psmm:endA [ psmm:part :A ; psmm:feature "x" ] ; psmm:endB [ psmm:part :B ; psmm:feature "y" ] ]'


def codes(text):
    try:
        return {v.code for v in validate(parse(text))}
    except InvalidModel as exc:
        return {v.code for v in exc.violations}


def test_minimal_model_valid():
    assert codes(_model(f":L1 a psmm:SelfDefinedLiaison ; psmm:order 1 ; {PAIR} .")) == set()


def test_self_defined_needs_pairs():
    assert "liaison.pairs" in codes(_model(":L1 a psmm:SelfDefinedLiaison ; psmm:order 1 ."))


def test_hidcl_at_root_is_flagged():
    assert "liaison.scope" in codes(_model(":L1 a psmm:HiDclRealisedLiaison ; psmm:order 1 ."))


def test_lodcl_must_not_carry_pairs():
    assert "liaison.pairs" in codes(_model(f":L1 a psmm:LoDclDefinedLiaison ; psmm:order 1 ; {PAIR} ."))


def test_base_part_must_be_constituent():
    text = _model(f":L1 a psmm:SelfDefinedLiaison ; psmm:order 1 ; {PAIR} .").replace("psmm:basePart :A", "psmm:basePart :P")
    assert "designation.base-part" in codes(text)


def test_bad_qos_operator():
    text = _model(
        f':L1 a psmm:SelfDefinedLiaison ; psmm:order 1 ; {PAIR} ; psmm:requires [ psmm:key "PAYLOAD" ; psmm:op "<" ; psmm:value 1.0 ] .'
    )
    assert "liaison.qos" in codes(text)


def test_missing_master_warns():
    text = HEADER + ":P a psmm:CompositePart ; psmm:hasPart :A .\n:A a psmm:PrimitivePart .\n"
    with pytest.warns(ModelWarning):
        model = parse_product_model(text)
    assert "master.count" in {v.code for v in validate(model)}


def test_dangling_reference():
    with pytest.raises(DanglingReference):
        parse(HEADER + ":P a psmm:CompositePart ; psmm:hasPart :Ghost ; psmm:masterSubAssembly [ psmm:of :P ; psmm:basePart :Ghost ] .\n")


def test_master_role():
    model = parse(_model(f":L1 a psmm:SelfDefinedLiaison ; psmm:order 1 ; {PAIR} ."))
    assert model.master.role is Role.MASTER


@settings(max_examples=60, deadline=None)
@given(product_models())
def test_random_models_valid_and_round_trip(text):
    model = parse(text)
    assert validate(model) == []
    assert parse(serialize(model)) == model

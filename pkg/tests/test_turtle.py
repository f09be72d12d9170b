import pytest
from hypothesis import given, strategies as st

from cpusiot import turtle
from cpusiot.turtle import IRI, BNode, Literal, TurtleSyntaxError, Var


def test_prefixes_and_blank_nodes():
    doc = turtle.parse(
        """
        @prefix ex: <http://example.org/> .
        ex:a ex:p [ ex:q "x" ; ex:r 3 ], ex:b ;
             ex:s 2.5 .
        """
    )
    assert doc.prefixes["ex"] == "http://example.org/"
    objs = doc.objects(IRI("http://example.org/a"), "http://example.org/p")
    assert isinstance(objs[0], BNode) and objs[1] == IRI("http://example.org/b")
    inner = {t.predicate.value: t.object for t in doc.triples if t.subject == objs[0]}
    assert inner["http://example.org/q"].to_python() == "x"
    assert inner["http://example.org/r"].to_python() == 3
    (s,) = doc.objects(IRI("http://example.org/a"), "http://example.org/s")
    assert s.to_python() == 2.5


def test_a_is_rdf_type():
    doc = turtle.parse("@prefix ex: <urn:x#> . ex:a a ex:T .")
    assert doc.triples[0].predicate == IRI(turtle.RDF + "type")


def test_typed_and_tagged_literals():
    doc = turtle.parse(
        '@prefix ex: <urn:x#> . @prefix xsd: <http://www.w3.org/2001/XMLSchema#> .\n'
        'ex:a ex:p "5"^^xsd:integer ; ex:q "hi"@en .'
    )
    p, q = (t.object for t in doc.triples)
    assert p.to_python() == 5
    assert q.lang == "en"


def test_error_carries_line():
    with pytest.raises(TurtleSyntaxError) as err:
        turtle.parse("@prefix ex: <urn:x#> .\nex:a ex:p ex:b\nex:c ex:d ex:e .")
    assert err.value.line == 3


def test_unknown_prefix_rejected():
    with pytest.raises(TurtleSyntaxError):
        turtle.parse("nope:a nope:b nope:c .")


def test_variables_only_when_allowed():
    text = "@prefix ex: <urn:x#> . ?s ex:p ?o ."
    with pytest.raises(TurtleSyntaxError):
        turtle.parse(text)
    doc = turtle.parse(text, allow_vars=True)
    assert doc.triples[0].subject == Var("s")


def test_listing_numbers_stripped_only_when_all_lines_numbered():
    numbered = "1 @prefix ex: <urn:x#> .\n2 ex:a ex:p 7 ."
    assert turtle.parse(numbered).triples[0].object.to_python() == 7
    mixed = "@prefix ex: <urn:x#> .\n2 ex:a ex:p 7 ."
    assert turtle.strip_listing_numbers(mixed) == mixed


def test_comments_ignored():
    doc = turtle.parse("# header\n@prefix ex: <urn:x#> . # trailing\nex:a ex:p ex:b . # done\n")
    assert len(doc.triples) == 1


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")) | st.sampled_from('"\\\n'), max_size=40))
def test_escape_round_trip(value):
    doc = turtle.parse(f'@prefix ex: <urn:x#> . ex:a ex:p "{turtle.escape(value)}" .')
    assert doc.triples[0].object == Literal(value)

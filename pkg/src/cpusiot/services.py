"""Service descriptions (N3 subset) and discovery queries (SPARQL subset).

A description announces one or more ``a as:Service`` resources, each with a
language-tagged ``rdfs:label`` and a list of ``doe:hasParams`` entries. A
query names a label, binds parameter values to variables and filters them
with a conjunction of numeric comparisons.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .turtle import (
    RDF_TYPE,
    RDFS,
    WELL_KNOWN_PREFIXES,
    XSD,
    BNode,
    IRI,
    Literal,
    TripleParser,
    TurtleSyntaxError,
    Var,
    escape,
    strip_listing_numbers,
    tokenize,
)

AS = WELL_KNOWN_PREFIXES["as"]
DOE = WELL_KNOWN_PREFIXES["doe"]

VALUE_PREDICATES = {
    DOE + "paramValueFloat": "FLOAT",
    DOE + "paramValueInt": "INT",
    DOE + "paramValueString": "STRING",
}
_PREDICATE_FOR = {v: k[len(DOE):] for k, v in VALUE_PREDICATES.items()}
_XSD_FOR = {"FLOAT": "float", "INT": "int", "STRING": "string"}

OPS = {">": operator.gt, "<": operator.lt, ">=": operator.ge, "<=": operator.le, "=": operator.eq}

Value = Union[float, int, str]


class ServiceModelError(Exception):
    pass


class MissingLabel(ServiceModelError):
    def __init__(self, iri: str):
        super().__init__(f"service {iri} has no rdfs:label")
        self.iri = iri


class TypeMismatch(ServiceModelError):
    def __init__(self, key: str, detail: str = ""):
        super().__init__(f"parameter {key}: {detail or 'value does not match its declared type'}")
        self.key = key


class UnboundFilterVariable(ServiceModelError):
    def __init__(self, name: str):
        super().__init__(f"FILTER uses ?{name} which no pattern binds")
        self.name = name


@dataclass(frozen=True)
class ParamEntry:
    key: str
    value: Value
    declared_type: str = "FLOAT"

    def __post_init__(self):
        if self.declared_type not in _XSD_FOR:
            raise TypeMismatch(self.key, f"unknown type {self.declared_type!r}")
        ok = {
            "FLOAT": isinstance(self.value, float),
            "INT": isinstance(self.value, int) and not isinstance(self.value, bool),
            "STRING": isinstance(self.value, str),
        }[self.declared_type]
        if not ok:
            raise TypeMismatch(self.key)


@dataclass(frozen=True)
class ServiceDescription:
    iri: str
    label: str
    lang: Optional[str] = "en"
    params: tuple[ParamEntry, ...] = ()
    state_info: Optional[str] = None

    def __post_init__(self):
        keys = [p.key for p in self.params]
        if len(keys) != len(set(keys)):
            raise ServiceModelError(f"service {self.iri}: duplicate parameter keys")

    def param(self, key: str) -> Optional[ParamEntry]:
        for p in self.params:
            if p.key == key:
                return p
        return None

    def values(self) -> dict[str, Value]:
        return {p.key: p.value for p in self.params}


@dataclass(frozen=True)
class Binding:
    key: str
    var: str
    declared_type: Optional[str] = None


@dataclass(frozen=True)
class Comparison:
    var: str
    op: str
    value: Value

    def holds(self, actual: Value) -> bool:
        if isinstance(self.value, str) or isinstance(actual, str):
            return self.op == "=" and actual == self.value
        return OPS[self.op](float(actual), float(self.value))


@dataclass(frozen=True)
class ServiceQuery:
    label: str
    bindings: tuple[Binding, ...] = ()
    filter: tuple[Comparison, ...] = field(default=())

    def __post_init__(self):
        bound = {b.var for b in self.bindings}
        for c in self.filter:
            if c.var not in bound:
                raise UnboundFilterVariable(c.var)

    def matches(self, service: ServiceDescription) -> bool:
        if service.label != self.label:
            return False
        env: dict[str, Value] = {}
        for b in self.bindings:
            p = service.param(b.key)
            if p is None or (b.declared_type is not None and p.declared_type != b.declared_type):
                return False
            env[b.var] = p.value
        return all(c.holds(env[c.var]) for c in self.filter)


# ---------------------------------------------------------------- parsing


def _literal_value(lit: Literal, declared: str, key: str) -> Value:
    try:
        if declared == "FLOAT":
            return float(lit.lexical)
        if declared == "INT":
            return int(lit.lexical)
    except ValueError:
        raise TypeMismatch(key, f"{lit.lexical!r} is not a {declared}") from None
    return lit.lexical


def _string(term, what: str, line: int = 0) -> str:
    if not isinstance(term, Literal):
        raise TurtleSyntaxError(line, f"{what} must be a literal")
    return term.lexical


def parse_n3_description(text: str) -> list[ServiceDescription]:
    """Parse every ``a as:Service`` resource in ``text``.

    Listing line numbers are tolerated, and ``as:``, ``doe:``, ``rdfs:`` and
    ``xsd:`` resolve to their usual namespaces when left undeclared.
    """
    parser = TripleParser(tokenize(strip_listing_numbers(text)), WELL_KNOWN_PREFIXES)
    doc = parser.document()
    by_subject: dict = {}
    for t in doc.triples:
        by_subject.setdefault(t.subject, []).append(t)

    services = []
    for t in doc.triples:
        if t.predicate != IRI(RDF_TYPE) or t.object != IRI(AS + "Service"):
            continue
        subject = t.subject
        iri = subject.value if isinstance(subject, IRI) else str(subject)
        props = by_subject[subject]
        labels = [p.object for p in props if p.predicate == IRI(RDFS + "label")]
        if not labels:
            raise MissingLabel(iri)
        label = labels[0]
        state = [p.object for p in props if p.predicate == IRI(DOE + "stateInfo")]
        params = []
        for p in props:
            if p.predicate != IRI(DOE + "hasParams"):
                continue
            params.append(_param_entry(p.object, by_subject.get(p.object, []), p.line))
        services.append(
            ServiceDescription(
                iri,
                _string(label, "rdfs:label", t.line),
                label.lang if isinstance(label, Literal) else None,
                tuple(params),
                _string(state[0], "doe:stateInfo") if state else None,
            )
        )
    return services


def _param_entry(node, props, line: int) -> ParamEntry:
    if not isinstance(node, BNode):
        raise TurtleSyntaxError(line, "doe:hasParams expects a [ ... ] block")
    key = declared = None
    value: Optional[Literal] = None
    value_kind = None
    for p in props:
        pred = p.predicate.value if isinstance(p.predicate, IRI) else None
        if pred == DOE + "key":
            key = _string(p.object, "doe:key", p.line)
        elif pred == DOE + "paramType":
            declared = _string(p.object, "doe:paramType", p.line).upper()
        elif pred in VALUE_PREDICATES:
            value, value_kind = p.object, VALUE_PREDICATES[pred]
    if key is None:
        raise TurtleSyntaxError(line, "parameter without doe:key")
    if value is None or not isinstance(value, Literal):
        raise TurtleSyntaxError(line, f"parameter {key} has no literal value")
    declared = declared or value_kind
    if declared not in _XSD_FOR:
        raise TypeMismatch(key, f"unknown type {declared!r}")
    if declared != value_kind:
        raise TypeMismatch(key, f"{_PREDICATE_FOR[value_kind]} value declared {declared}")
    return ParamEntry(key, _literal_value(value, declared, key), declared)


_FILTER_RE = re.compile(r"\bFILTER\s*\(", re.IGNORECASE)
_CMP_RE = re.compile(
    r"""\s*(?:
        \?(?P<v1>\w+)\s*(?P<op1>>=|<=|>|<|=)\s*(?P<c1>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|"[^"]*"|'[^']*')
      | (?P<c2>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(?P<op2>>=|<=|>|<|=)\s*\?(?P<v2>\w+)
    )\s*$""",
    re.VERBOSE,
)
_FLIP = {">": "<", "<": ">", ">=": "<=", "<=": ">=", "=": "="}


def _extract_filter(text: str) -> tuple[str, Optional[str]]:
    m = _FILTER_RE.search(text)
    if m is None:
        return text, None
    depth, i = 1, m.end()
    while i < len(text) and depth:
        depth += {"(": 1, ")": -1}.get(text[i], 0)
        i += 1
    if depth:
        line = text.count("\n", 0, m.start()) + 1
        raise TurtleSyntaxError(line, "unbalanced FILTER(...)")
    body = text[m.end():i - 1]
    # keep line numbering intact for later error messages
    return text[:m.start()] + "\n" * body.count("\n") + text[i:], body


def _constant(text: str) -> Value:
    if text[0] in "'\"":
        return text[1:-1]
    return float(text)


def _parse_filter(body: str) -> tuple[Comparison, ...]:
    if not body.strip():
        return ()
    out = []
    for part in body.split("&&"):
        m = _CMP_RE.match(part)
        if m is None:
            raise TurtleSyntaxError(0, f"unsupported FILTER term {part.strip()!r}")
        if m.group("v1"):
            out.append(Comparison(m.group("v1"), m.group("op1"), _constant(m.group("c1"))))
        else:
            out.append(Comparison(m.group("v2"), _FLIP[m.group("op2")], _constant(m.group("c2"))))
    return tuple(out)


def parse_query(text: str) -> ServiceQuery:
    """Parse a discovery query.

    The group pattern may be wrapped in ``( ... )`` or ``{ ... }``, optionally
    after ``SELECT ... WHERE``. The single FILTER holds ``&&``-joined
    comparisons between a variable and a constant.
    """
    stripped, filter_body = _extract_filter(strip_listing_numbers(text))
    parser = TripleParser(tokenize(stripped), WELL_KNOWN_PREFIXES, allow_vars=True)
    while parser.directive():
        pass
    tok = parser.peek()
    if tok is not None and tok.kind == "WORD" and tok.text.upper() == "SELECT":
        while not (parser.peek().kind == "WORD" and parser.peek().text.upper() == "WHERE"):
            parser.next()
        parser.next()
    opener = parser.next()
    closer = {"(": ")", "{": "}"}.get(opener.text)
    if closer is None:
        raise TurtleSyntaxError(opener.line, "query pattern must start with '(' or '{'")
    while not parser.at(closer):
        if parser.at("."):
            parser.next()
            continue
        subject = parser.subject()
        parser.predicate_object_list(subject, closers=(closer,))
    parser.expect(closer)
    if not parser.at_end():
        raise TurtleSyntaxError(parser.peek().line, f"trailing text {parser.peek().text!r}")

    triples = parser.triples
    service_vars = [
        t.subject for t in triples if t.predicate == IRI(RDF_TYPE) and t.object == IRI(AS + "Service")
    ]
    if len(service_vars) != 1:
        raise TurtleSyntaxError(opener.line, "query must select exactly one ?service a as:Service")
    service = service_vars[0]
    labels = [t.object for t in triples if t.subject == service and t.predicate == IRI(RDFS + "label")]
    if not labels or not isinstance(labels[0], Literal):
        raise TurtleSyntaxError(opener.line, "query needs a literal rdfs:label")
    bindings = []
    for t in triples:
        if t.subject != service or t.predicate != IRI(DOE + "hasParams"):
            continue
        props = [u for u in triples if u.subject == t.object]
        key = var = declared = None
        for u in props:
            pred = u.predicate.value
            if pred == DOE + "key":
                key = _string(u.object, "doe:key", u.line)
            elif pred == DOE + "paramType":
                declared = _string(u.object, "doe:paramType", u.line).upper()
            elif pred in VALUE_PREDICATES and isinstance(u.object, Var):
                var = u.object.name
        if key is None or var is None:
            raise TurtleSyntaxError(t.line, "parameter pattern needs doe:key and a ?variable value")
        bindings.append(Binding(key, var, declared))
    return ServiceQuery(labels[0].lexical, tuple(bindings), _parse_filter(filter_body or ""))


def eval_query(query: ServiceQuery, services: Iterable[ServiceDescription]) -> list[ServiceDescription]:
    """Services matching ``query``, in input order."""
    return [s for s in services if query.matches(s)]


# ---------------------------------------------------------------- serializing


_PREAMBLE = (
    f"PREFIX as: <{AS}>\n"
    f"PREFIX doe: <{DOE}>\n"
    f"PREFIX rdfs: <{RDFS}>\n"
    f"PREFIX xsd: <{XSD}>\n"
)


def _lexical(value: Value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def serialize_description(services: Union[ServiceDescription, Sequence[ServiceDescription]]) -> str:
    if isinstance(services, ServiceDescription):
        services = [services]
    blocks = []
    for s in services:
        lang = f"@{s.lang}" if s.lang else ""
        lines = [f"<{s.iri}> a as:Service;", f'  rdfs:label "{escape(s.label)}"{lang}']
        if s.state_info is not None:
            lines[-1] += ";"
            lines.append(f'  doe:stateInfo """{s.state_info.replace(chr(92), chr(92) * 2).replace(chr(34), chr(92) + chr(34))}"""')
        if s.params:
            lines[-1] += ";"
            entries = []
            for p in s.params:
                entries.append(
                    f'[doe:key "{escape(p.key)}"^^xsd:string;\n'
                    f'    doe:{_PREDICATE_FOR[p.declared_type]} "{escape(_lexical(p.value))}"^^xsd:{_XSD_FOR[p.declared_type]};\n'
                    f'    doe:paramType "{p.declared_type}"^^xsd:string]'
                )
            lines.append("  doe:hasParams " + ",\n  ".join(entries))
        blocks.append("\n".join(lines) + ".")
    return _PREAMBLE + "\n" + "\n\n".join(blocks) + "\n"


def serialize_query(query: ServiceQuery) -> str:
    label = query.label.replace("\\", "\\\\").replace("'", "\\'")
    lines = ["(?service a as:Service;", f"  rdfs:label '{label}'@en"]
    if query.bindings:
        lines[-1] += ";"
        entries = []
        for b in query.bindings:
            pred = _PREDICATE_FOR[b.declared_type or "FLOAT"]
            entry = f'[doe:key "{escape(b.key)}"^^xsd:string;\n    doe:{pred} ?{b.var}'
            if b.declared_type:
                entry += f';\n    doe:paramType "{b.declared_type}"^^xsd:string'
            entries.append(entry + "]")
        lines.append("  doe:hasParams " + ",\n  ".join(entries))
    if query.filter:
        terms = []
        for c in query.filter:
            const = f'"{c.value}"' if isinstance(c.value, str) else _lexical(float(c.value))
            terms.append(f"?{c.var}{c.op}{const}")
        lines.append(f"  FILTER({' && '.join(terms)}).)")
    else:
        lines[-1] += ".)"
    return _PREAMBLE + "\n" + "\n".join(lines) + "\n"

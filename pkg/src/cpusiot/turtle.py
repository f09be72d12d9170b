"""Lexer and parser for the small Turtle/N3 subset shared by product models,
service descriptions and discovery queries.

Supported: ``@prefix``/``PREFIX`` declarations, ``a``, ``;`` and ``,``
continuation, blank-node property lists ``[...]``, string literals (single,
double and triple quoted) with language tags or ``^^`` datatypes, bare
integer/decimal/double literals and, when enabled, ``?variables``.

Listings copied with leading line numbers (every non-blank line starts with
an integer) are accepted; the numbers are stripped before lexing.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Optional, Union

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
XSD = "http://www.w3.org/2001/XMLSchema#"
RDF_TYPE = RDF + "type"

# Prefixes assumed when a document uses them without declaring them. The
# service listings omit their `as:`, `doe:` and `xsd:` declarations.
WELL_KNOWN_PREFIXES = {
    "rdf": RDF,
    "rdfs": RDFS,
    "xsd": XSD,
    "as": "urn:cpusiot:as#",
    "doe": "https://wiki.tut.fi/DOE/CoreOntology#",
    "psmm": "http://purl.org/net/metamodels/PSMM#",
}


class TurtleSyntaxError(SyntaxError):
    """Malformed triple text. Carries the 1-based source line."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class IRI:
    value: str

    def __str__(self) -> str:
        return f"<{self.value}>"


@dataclass(frozen=True)
class BNode:
    id: str

    def __str__(self) -> str:
        return f"_:{self.id}"


@dataclass(frozen=True)
class Literal:
    lexical: str
    datatype: Optional[str] = None
    lang: Optional[str] = None
    quoted: bool = True

    def to_python(self) -> Union[str, int, float]:
        """Native value for numeric datatypes, the lexical form otherwise."""
        if self.datatype in (XSD + "integer", XSD + "int", XSD + "long"):
            return int(self.lexical)
        if self.datatype in (XSD + "decimal", XSD + "double", XSD + "float"):
            return float(self.lexical)
        return self.lexical


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


Term = Union[IRI, BNode, Literal, Var]


@dataclass(frozen=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term
    line: int = field(default=0, compare=False)


@dataclass
class Document:
    prefixes: dict[str, str]
    triples: list[Triple]
    declared: dict[str, str] = field(default_factory=dict)

    def objects(self, subject: Term, predicate: str) -> list[Term]:
        return [
            t.object
            for t in self.triples
            if t.subject == subject and t.predicate == IRI(predicate)
        ]


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int


_TOKEN_SPEC = [
    ("WS", r"[ \t\r]+"),
    ("NL", r"\n"),
    ("COMMENT", r"#[^\n]*"),
    ("IRIREF", r"<[^<>\"{}|^`\\\s]*>"),
    ("PREFIX_AT", r"@prefix\b"),
    ("BASE_AT", r"@base\b"),
    ("STRING3", r'"""(?:[^"\\]|\\.|"(?!""))*"""'),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("STRING1", r"'(?:[^'\\\n]|\\.)*'"),
    ("LANGTAG", r"@[A-Za-z]+(?:-[A-Za-z0-9]+)*"),
    ("DTYPE", r"\^\^"),
    ("NUMBER", r"[+-]?(?:\d+\.\d+|\.\d+|\d+)(?:[eE][+-]?\d+)?"),
    ("VAR", r"[?$][A-Za-z_][A-Za-z0-9_]*"),
    ("PNAME", r"(?:[A-Za-z][\w-]*)?:(?:[\w-]|\.(?=[\w-]))*"),
    ("WORD", r"[A-Za-z_][\w-]*"),
    ("OP", r"&&|\|\||>=|<=|!=|[<>=!]"),
    ("PUNCT", r"[\[\](){};,.]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{k}>{p})" for k, p in _TOKEN_SPEC))
_LISTING_RE = re.compile(r"^\s*\d+(?:[ \t]|$)")

_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", '"': '"', "'": "'", "\\": "\\"}


def strip_listing_numbers(text: str) -> str:
    """Remove leading line numbers if *every* non-blank line carries one."""
    lines = text.splitlines()
    nonblank = [ln for ln in lines if ln.strip()]
    if not nonblank or not all(_LISTING_RE.match(ln) for ln in nonblank):
        return text
    return "\n".join(_LISTING_RE.sub("", ln, count=1) for ln in lines)


def tokenize(text: str) -> list[Token]:
    tokens = []
    line = 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise TurtleSyntaxError(line, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("WS", "NL", "COMMENT"):
            tokens.append(Token(kind, chunk, line))
        line += chunk.count("\n")
        pos = m.end()
    return tokens


def unescape(body: str) -> str:
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), body)


def escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


class TripleParser:
    """Recursive-descent parser over a token list.

    :param tokens: output of :func:`tokenize`
    :param prefixes: initial prefix table; declarations in the text extend it
    :param allow_vars: accept ``?name`` terms (query patterns)
    """

    def __init__(
        self,
        tokens: list[Token],
        prefixes: Optional[dict[str, str]] = None,
        allow_vars: bool = False,
    ):
        self.tokens = tokens
        self.pos = 0
        self.prefixes = dict(prefixes or {})
        self.declared: dict[str, str] = {}
        self.allow_vars = allow_vars
        self.triples: list[Triple] = []
        self._bnodes = itertools.count(1)

    # -- token helpers

    def peek(self, offset: int = 0) -> Optional[Token]:
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1].line if self.tokens else 1
            raise TurtleSyntaxError(last, "unexpected end of input")
        self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text:
            raise TurtleSyntaxError(tok.line, f"expected {text!r}, got {tok.text!r}")
        return tok

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def fresh_bnode(self) -> BNode:
        return BNode(f"b{next(self._bnodes)}")

    # -- grammar

    def directive(self) -> bool:
        """Consume a prefix/base directive if one starts here."""
        tok = self.peek()
        if tok is None:
            return False
        if tok.kind == "PREFIX_AT" or (tok.kind == "WORD" and tok.text.upper() == "PREFIX"):
            self.next()
            name = self.next()
            if name.kind != "PNAME" or not name.text.endswith(":"):
                raise TurtleSyntaxError(name.line, f"bad prefix name {name.text!r}")
            iri = self.next()
            if iri.kind != "IRIREF":
                raise TurtleSyntaxError(iri.line, "prefix needs an <IRI>")
            self.prefixes[name.text[:-1]] = iri.text[1:-1]
            self.declared[name.text[:-1]] = iri.text[1:-1]
            if tok.kind == "PREFIX_AT":
                self.expect(".")
            return True
        if tok.kind == "BASE_AT" or (tok.kind == "WORD" and tok.text.upper() == "BASE"):
            self.next()
            self.next()
            if tok.kind == "BASE_AT":
                self.expect(".")
            return True
        return False

    def document(self) -> Document:
        while not self.at_end():
            if not self.directive():
                self.statement()
        return Document(self.prefixes, self.triples, self.declared)

    def statement(self) -> None:
        tok = self.peek()
        subject = self.subject()
        if isinstance(subject, BNode) and self.at("."):
            self.next()
            return
        self.predicate_object_list(subject)
        end = self.next()
        if end.text != ".":
            raise TurtleSyntaxError(end.line, f"expected '.' after statement starting {tok.text!r}")

    def subject(self) -> Term:
        tok = self.peek()
        if tok is not None and tok.text == "[":
            return self.blank_node_property_list()
        term = self.term()
        if isinstance(term, Literal):
            raise TurtleSyntaxError(tok.line, "a literal cannot be a subject")
        return term

    def predicate_object_list(self, subject: Term, closers: tuple[str, ...] = (".",)) -> None:
        while True:
            verb_tok = self.peek()
            verb = self.verb()
            self.object_list(subject, verb, verb_tok.line)
            if not self.at(";"):
                return
            while self.at(";"):
                self.next()
            nxt = self.peek()
            # trailing ';' before the terminator
            if nxt is None or nxt.text in closers or nxt.text in ("]", ".", ")", "}"):
                return
            if nxt.kind == "WORD" and nxt.text.upper() == "FILTER":
                return

    def verb(self) -> Term:
        tok = self.peek()
        if tok is not None and tok.kind == "WORD" and tok.text == "a":
            self.next()
            return IRI(RDF_TYPE)
        term = self.term()
        if not isinstance(term, (IRI, Var)):
            raise TurtleSyntaxError(tok.line, f"bad predicate {tok.text!r}")
        return term

    def object_list(self, subject: Term, verb: Term, line: int) -> None:
        while True:
            obj = self.object()
            self.triples.append(Triple(subject, verb, obj, line))
            if not self.at(","):
                return
            self.next()

    def object(self) -> Term:
        if self.at("["):
            return self.blank_node_property_list()
        return self.term()

    def blank_node_property_list(self) -> BNode:
        self.expect("[")
        node = self.fresh_bnode()
        if not self.at("]"):
            self.predicate_object_list(node, closers=("]",))
        self.expect("]")
        return node

    def term(self) -> Term:
        tok = self.next()
        if tok.kind == "IRIREF":
            return IRI(tok.text[1:-1])
        if tok.kind == "PNAME":
            prefix, _, local = tok.text.partition(":")
            if prefix not in self.prefixes:
                raise TurtleSyntaxError(tok.line, f"undeclared prefix {prefix!r}")
            return IRI(self.prefixes[prefix] + local)
        if tok.kind in ("STRING", "STRING1", "STRING3"):
            quote = 3 if tok.kind == "STRING3" else 1
            lexical = unescape(tok.text[quote:-quote])
            nxt = self.peek()
            if nxt is not None and nxt.kind == "LANGTAG":
                self.next()
                return Literal(lexical, lang=nxt.text[1:])
            if nxt is not None and nxt.kind == "DTYPE":
                self.next()
                dtype = self.term()
                if not isinstance(dtype, IRI):
                    raise TurtleSyntaxError(nxt.line, "datatype must be an IRI")
                return Literal(lexical, datatype=dtype.value)
            return Literal(lexical)
        if tok.kind == "NUMBER":
            text = tok.text
            if "e" in text.lower():
                dtype = XSD + "double"
            elif "." in text:
                dtype = XSD + "decimal"
            else:
                dtype = XSD + "integer"
            return Literal(text, datatype=dtype, quoted=False)
        if tok.kind == "WORD" and tok.text in ("true", "false"):
            return Literal(tok.text, datatype=XSD + "boolean", quoted=False)
        if tok.kind == "VAR":
            if not self.allow_vars:
                raise TurtleSyntaxError(tok.line, f"variable {tok.text} not allowed here")
            return Var(tok.text[1:])
        raise TurtleSyntaxError(tok.line, f"unexpected token {tok.text!r}")


def parse(
    text: str,
    prefixes: Optional[dict[str, str]] = None,
    allow_vars: bool = False,
) -> Document:
    """Parse a complete triple document."""
    tokens = tokenize(strip_listing_numbers(text))
    return TripleParser(tokens, prefixes, allow_vars).document()

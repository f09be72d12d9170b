"""Product structural models: parts, liaisons, connectors and sub-assembly
designations, read from and written to the triple text format."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, Optional

from . import turtle
from .turtle import IRI, BNode, Literal, RDF_TYPE

PSMM = "http://purl.org/net/metamodels/PSMM#"

LIAISON_TYPES = ("screw-fit", "insertion", "placement", "snap", "hold")
QOS_OPS = (">", ">=", "=")


class PartKind(str, Enum):
    COMPOSITE = "Composite"
    PRIMITIVE = "Primitive"


class LiaisonKind(str, Enum):
    SELF_DEFINED = "SelfDefined"
    LO_DCL_DEFINED = "LoDclDefined"
    HI_DCL_REALISED = "HiDclRealised"


class Role(str, Enum):
    MASTER = "Master"
    BRANCH = "Branch"


_CLASS_KINDS = {
    "CompositePart": PartKind.COMPOSITE,
    "PrimitivePart": PartKind.PRIMITIVE,
    "SelfDefinedLiaison": LiaisonKind.SELF_DEFINED,
    # alias used by the task identification rules for the same liaison kind
    "CurDclLiaison": LiaisonKind.SELF_DEFINED,
    "LoDclDefinedLiaison": LiaisonKind.LO_DCL_DEFINED,
    "HiDclRealisedLiaison": LiaisonKind.HI_DCL_REALISED,
    "Connector": "Connector",
}
_LIAISON_CLASS = {
    LiaisonKind.SELF_DEFINED: "SelfDefinedLiaison",
    LiaisonKind.LO_DCL_DEFINED: "LoDclDefinedLiaison",
    LiaisonKind.HI_DCL_REALISED: "HiDclRealisedLiaison",
}
_PREDICATES = {
    "hasPart", "hasLiaison", "name", "endpoint", "order", "liaisonType", "pair",
    "endA", "endB", "part", "feature", "masterSubAssembly", "branchSubAssembly",
    "of", "basePart", "assemblyLine", "requires", "key", "op", "value", "attaches",
}


class ProductModelError(Exception):
    pass


class UnknownVocabulary(ProductModelError):
    def __init__(self, term: str, line: int = 0):
        super().__init__(f"line {line}: unknown PSMM term {term!r}")
        self.term = term
        self.line = line


class DanglingReference(ProductModelError):
    def __init__(self, id: str, context: str = ""):
        super().__init__(f"dangling reference to {id!r}" + (f" ({context})" if context else ""))
        self.id = id


class InvalidModel(ProductModelError):
    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


class ModelWarning(UserWarning):
    """Accepted but suspicious input: foreign triples, unknown liaison types,
    missing designations."""


@dataclass(frozen=True)
class LiaisonEndPoint:
    part: str
    feature: str


@dataclass(frozen=True)
class LiaisonPair:
    end_a: LiaisonEndPoint
    end_b: LiaisonEndPoint


@dataclass(frozen=True)
class QosRequirement:
    """Lower bound a service must meet to realize a liaison, e.g. PAYLOAD > 7.0."""

    key: str
    op: str
    threshold: float


@dataclass(frozen=True)
class Liaison:
    id: str
    kind: LiaisonKind
    order: int = 0
    liaison_type: str = "placement"
    pairs: tuple[LiaisonPair, ...] = ()
    requires: tuple[QosRequirement, ...] = ()

    @property
    def realizable(self) -> bool:
        return self.kind is not LiaisonKind.HI_DCL_REALISED


@dataclass(frozen=True)
class Part:
    id: str
    name: str
    kind: PartKind
    children: tuple[str, ...] = ()
    owned_liaisons: tuple[str, ...] = ()
    endpoints: tuple[str, ...] = ()

    @property
    def composite(self) -> bool:
        return self.kind is PartKind.COMPOSITE


@dataclass(frozen=True)
class SubAssemblyDesignation:
    role: Role
    composite_part: str
    base_part: str
    assembly_line: Optional[str] = None


@dataclass(frozen=True)
class Connector:
    id: str
    name: str
    attached_liaisons: tuple[str, ...] = ()


@dataclass(frozen=True)
class DecompositionReport:
    N: int
    K: int
    P: int
    M: int


@dataclass(frozen=True)
class Violation:
    code: str
    element: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.element}: {self.message}"


@dataclass(frozen=True)
class ProductModel:
    root: str
    parts: Mapping[str, Part]
    liaisons: Mapping[str, Liaison] = field(default_factory=dict)
    connectors: Mapping[str, Connector] = field(default_factory=dict)
    subassemblies: tuple[SubAssemblyDesignation, ...] = ()
    prefixes: Mapping[str, str] = field(default_factory=dict)

    @cached_property
    def parent(self) -> dict[str, str]:
        parent = {}
        for part in self.parts.values():
            for child in part.children:
                parent.setdefault(child, part.id)
        return parent

    @cached_property
    def owner(self) -> dict[str, str]:
        """Liaison id -> id of the part that owns it."""
        owner = {}
        for part in self.parts.values():
            for lid in part.owned_liaisons:
                owner.setdefault(lid, part.id)
        return owner

    @property
    def master(self) -> Optional[SubAssemblyDesignation]:
        masters = [d for d in self.subassemblies if d.role is Role.MASTER]
        return masters[0] if masters else None

    @property
    def branches(self) -> list[SubAssemblyDesignation]:
        return [d for d in self.subassemblies if d.role is Role.BRANCH]

    def designation_of(self, part_id: str) -> Optional[SubAssemblyDesignation]:
        for d in self.subassemblies:
            if d.composite_part == part_id:
                return d
        return None

    def ancestors(self, part_id: str) -> list[str]:
        """Chain from ``part_id`` up to the root, inclusive of both."""
        chain = [part_id]
        seen = {part_id}
        while chain[-1] in self.parent:
            nxt = self.parent[chain[-1]]
            if nxt in seen:
                break
            chain.append(nxt)
            seen.add(nxt)
        return chain

    def contains(self, node: str, part_id: str) -> bool:
        return node in self.ancestors(part_id)

    def lift(self, node: str, part_id: str) -> Optional[str]:
        """The child of ``node`` whose subtree holds ``part_id``."""
        chain = self.ancestors(part_id)
        if node not in chain:
            return None
        i = chain.index(node)
        return chain[i - 1] if i > 0 else None

    def liaison_parts(self, liaison_id: str) -> frozenset[str]:
        """Children of the owning node joined by the liaison's pairs."""
        node = self.owner.get(liaison_id)
        liaison = self.liaisons[liaison_id]
        lifted = set()
        for pair in liaison.pairs:
            for end in (pair.end_a, pair.end_b):
                child = self.lift(node, end.part) if node else None
                if child is not None:
                    lifted.add(child)
        return frozenset(lifted)


# ---------------------------------------------------------------- parsing


def _local(iri: IRI) -> str:
    return iri.value[len(PSMM):] if iri.value.startswith(PSMM) else ""


def _compact(term, prefixes: Mapping[str, str]) -> str:
    if isinstance(term, BNode):
        return str(term)
    if isinstance(term, Literal):
        return term.lexical
    value = term.value
    if "" in prefixes and value.startswith(prefixes[""]):
        return value[len(prefixes[""]):]
    for name, ns in sorted(prefixes.items()):
        if name and value.startswith(ns) and name != "psmm":
            return f"{name}:{value[len(ns):]}"
    return f"<{value}>"


def _expand(id: str, prefixes: Mapping[str, str]) -> str:
    if id.startswith("<"):
        return id
    if ":" in id:
        return id
    return f":{id}"


class _Graph:
    """Triple index for model extraction."""

    def __init__(self, doc: turtle.Document):
        self.doc = doc
        self.by_subject: dict = {}
        for t in doc.triples:
            self.by_subject.setdefault(t.subject, []).append(t)

    def values(self, subject, name: str) -> list:
        return [t.object for t in self.by_subject.get(subject, ()) if t.predicate == IRI(PSMM + name)]

    def one(self, subject, name: str):
        vals = self.values(subject, name)
        return vals[0] if vals else None


def _literal(term, what: str, line: int = 0):
    if not isinstance(term, Literal):
        raise turtle.TurtleSyntaxError(line, f"{what} must be a literal")
    return term


def parse_product_model(text: str) -> ProductModel:
    """Parse a product structural model from triple text.

    Unknown PSMM terms raise :class:`UnknownVocabulary`; triples in foreign
    namespaces are skipped with a :class:`ModelWarning`. The result is
    validated; every violation except a missing master designation (which
    only warns) raises :class:`InvalidModel`.
    """
    doc = turtle.parse(text, prefixes=turtle.WELL_KNOWN_PREFIXES)
    prefixes = dict(doc.declared)
    prefixes.setdefault("psmm", PSMM)

    kinds: dict = {}
    kept = []
    for t in doc.triples:
        pred = t.predicate
        if pred == IRI(RDF_TYPE):
            if isinstance(t.object, IRI) and t.object.value.startswith(PSMM):
                name = _local(t.object)
                if name not in _CLASS_KINDS:
                    raise UnknownVocabulary(t.object.value, t.line)
                kinds[t.subject] = _CLASS_KINDS[name]
                continue
            warnings.warn(f"line {t.line}: ignoring foreign type {t.object}", ModelWarning, stacklevel=2)
            continue
        if isinstance(pred, IRI) and pred.value.startswith(PSMM):
            if _local(pred) not in _PREDICATES:
                raise UnknownVocabulary(pred.value, t.line)
            kept.append(t)
            continue
        warnings.warn(f"line {t.line}: ignoring foreign predicate {pred}", ModelWarning, stacklevel=2)
    graph = _Graph(turtle.Document(doc.prefixes, kept, doc.declared))

    def cid(term) -> str:
        return _compact(term, prefixes)

    part_terms = [s for s, k in kinds.items() if isinstance(k, PartKind)]
    liaison_terms = [s for s, k in kinds.items() if isinstance(k, LiaisonKind)]
    connector_terms = [s for s, k in kinds.items() if k == "Connector"]

    def ref(term, allowed, context: str) -> str:
        if term not in allowed:
            raise DanglingReference(cid(term), context)
        return cid(term)

    part_set = set(part_terms)
    liaison_set = set(liaison_terms)

    liaisons: dict[str, Liaison] = {}
    for term in liaison_terms:
        lid = cid(term)
        order_term = graph.one(term, "order")
        order = 0
        if order_term is not None:
            value = _literal(order_term, "order").to_python()
            try:
                order = int(value)
            except ValueError:
                raise turtle.TurtleSyntaxError(0, f"order of {lid} must be an integer") from None
        type_term = graph.one(term, "liaisonType")
        ltype = _literal(type_term, "liaisonType").lexical if type_term is not None else "placement"
        if ltype not in LIAISON_TYPES:
            warnings.warn(f"liaison {lid}: unknown liaison type {ltype!r}", ModelWarning, stacklevel=2)
        pairs = []
        for pnode in graph.values(term, "pair"):
            ends = []
            for side in ("endA", "endB"):
                enode = graph.one(pnode, side)
                if enode is None:
                    raise turtle.TurtleSyntaxError(0, f"liaison {lid}: pair without {side}")
                pterm = graph.one(enode, "part")
                fterm = graph.one(enode, "feature")
                if pterm is None or fterm is None:
                    raise turtle.TurtleSyntaxError(0, f"liaison {lid}: endpoint needs part and feature")
                ends.append(LiaisonEndPoint(ref(pterm, part_set, f"endpoint of {lid}"), _literal(fterm, "feature").lexical))
            pairs.append(LiaisonPair(*ends))
        requires = []
        for rnode in graph.values(term, "requires"):
            key, op, value = (graph.one(rnode, n) for n in ("key", "op", "value"))
            if key is None or op is None or value is None:
                raise turtle.TurtleSyntaxError(0, f"liaison {lid}: requirement needs key, op and value")
            requires.append(QosRequirement(
                _literal(key, "key").lexical,
                _literal(op, "op").lexical,
                float(_literal(value, "value").to_python()),
            ))
        liaisons[lid] = Liaison(lid, kinds[term], order, ltype, tuple(pairs), tuple(requires))

    # endpoint features referenced by pairs, for parts that declare none
    referenced: dict[str, list[str]] = {}
    for liaison in liaisons.values():
        for pair in liaison.pairs:
            for end in (pair.end_a, pair.end_b):
                feats = referenced.setdefault(end.part, [])
                if end.feature not in feats:
                    feats.append(end.feature)

    parts: dict[str, Part] = {}
    for term in part_terms:
        pid = cid(term)
        name_term = graph.one(term, "name")
        children = tuple(ref(c, part_set, f"hasPart of {pid}") for c in graph.values(term, "hasPart"))
        owned = tuple(ref(lt, liaison_set, f"hasLiaison of {pid}") for lt in graph.values(term, "hasLiaison"))
        endpoints = tuple(_literal(e, "endpoint").lexical for e in graph.values(term, "endpoint"))
        parts[pid] = Part(
            pid,
            _literal(name_term, "name").lexical if name_term is not None else pid,
            kinds[term],
            children,
            owned,
            endpoints or tuple(referenced.get(pid, ())),
        )

    subassemblies = []
    for t in kept:
        name = _local(t.predicate)
        if name not in ("masterSubAssembly", "branchSubAssembly"):
            continue
        of, base = graph.one(t.object, "of"), graph.one(t.object, "basePart")
        if of is None or base is None:
            raise turtle.TurtleSyntaxError(t.line, f"{name} needs psmm:of and psmm:basePart")
        line_term = graph.one(t.object, "assemblyLine")
        subassemblies.append(SubAssemblyDesignation(
            Role.MASTER if name == "masterSubAssembly" else Role.BRANCH,
            ref(of, part_set, name),
            ref(base, part_set, name),
            _literal(line_term, "assemblyLine").lexical if line_term is not None else None,
        ))

    connectors = {}
    for term in connector_terms:
        xid = cid(term)
        name_term = graph.one(term, "name")
        connectors[xid] = Connector(
            xid,
            _literal(name_term, "name").lexical if name_term is not None else xid,
            tuple(ref(lt, liaison_set, f"attaches of {xid}") for lt in graph.values(term, "attaches")),
        )

    has_parent = {c for p in parts.values() for c in p.children}
    roots = [pid for pid in parts if pid not in has_parent]
    if len(roots) != 1:
        raise InvalidModel([Violation("tree.root", ",".join(roots) or "-", f"expected one root part, found {len(roots)}")])
    model = ProductModel(roots[0], parts, liaisons, connectors, tuple(subassemblies), prefixes)
    model = _assign_unowned(model)

    violations = validate(model)
    missing_master = [v for v in violations if v.code == "master.count" and model.master is None]
    if missing_master:
        warnings.warn("model has no master sub-assembly designation", ModelWarning, stacklevel=2)
    fatal = [v for v in violations if v not in missing_master]
    if fatal:
        raise InvalidModel(fatal)
    return model


def _assign_unowned(model: ProductModel) -> ProductModel:
    """Attach liaisons without ``psmm:hasLiaison`` to the lowest common
    ancestor of their endpoint parts."""
    owned = set(model.owner)
    extra: dict[str, list[str]] = {}
    for lid, liaison in model.liaisons.items():
        if lid in owned or not liaison.pairs:
            continue
        chains = [model.ancestors(end.part) for pair in liaison.pairs for end in (pair.end_a, pair.end_b)]
        common = [n for n in chains[0] if all(n in c for c in chains[1:])]
        # the endpoint itself is not an owner candidate
        common = [n for n in common if n not in {end.part for pair in liaison.pairs for end in (pair.end_a, pair.end_b)}]
        if common:
            extra.setdefault(common[0], []).append(lid)
    if not extra:
        return model
    parts = dict(model.parts)
    for pid, lids in extra.items():
        part = parts[pid]
        parts[pid] = Part(part.id, part.name, part.kind, part.children, part.owned_liaisons + tuple(lids), part.endpoints)
    return ProductModel(model.root, parts, model.liaisons, model.connectors, model.subassemblies, model.prefixes)


# ---------------------------------------------------------------- validation


def validate(model: ProductModel) -> list[Violation]:
    """Every violated structural invariant, in a stable order. Empty means valid."""
    out: list[Violation] = []

    def bad(code: str, element: str, message: str) -> None:
        out.append(Violation(code, element, message))

    parts = model.parts
    if model.root not in parts:
        bad("tree.root", model.root, "root is not a part")
        return out
    if not parts[model.root].composite:
        bad("tree.root", model.root, "root must be a composite part")

    parents: dict[str, list[str]] = {}
    for part in parts.values():
        for child in part.children:
            if child not in parts:
                bad("ref.part", part.id, f"child {child!r} does not exist")
                continue
            parents.setdefault(child, []).append(part.id)
    for child, ps in parents.items():
        if len(ps) > 1:
            bad("tree.parents", child, f"part has {len(ps)} parents: {', '.join(ps)}")
    if model.root in parents:
        bad("tree.root", model.root, "root has a parent")

    reached = set()
    stack = [model.root]
    while stack:
        pid = stack.pop()
        if pid in reached or pid not in parts:
            continue
        reached.add(pid)
        stack.extend(parts[pid].children)
    for pid in parts:
        if pid not in reached:
            bad("tree.unreachable", pid, "part not reachable from the root")

    for part in parts.values():
        if part.composite and not part.children:
            bad("part.composite", part.id, "composite part without constituent parts")
        if not part.composite and (part.children or part.owned_liaisons):
            bad("part.primitive", part.id, "primitive part with children or owned liaisons")

    masters = [d for d in model.subassemblies if d.role is Role.MASTER]
    if len(masters) != 1:
        bad("master.count", model.root, f"a product has exactly one master sub-assembly, found {len(masters)}")
    seen_composites = set()
    for d in model.subassemblies:
        label = f"{d.role.value}:{d.composite_part}"
        if d.composite_part in seen_composites:
            bad("designation.duplicate", label, "part designated more than once")
        seen_composites.add(d.composite_part)
        comp = parts.get(d.composite_part)
        if comp is None or not comp.composite:
            bad("designation.composite", label, "designation must reference a composite part")
            continue
        if d.base_part not in comp.children:
            bad("designation.base-part", label, f"HasAsBasePart: {d.base_part!r} is not a constituent of {d.composite_part!r}")

    owners: dict[str, list[str]] = {}
    for part in parts.values():
        for lid in part.owned_liaisons:
            owners.setdefault(lid, []).append(part.id)
            if lid not in model.liaisons:
                bad("ref.liaison", part.id, f"owned liaison {lid!r} does not exist")

    for lid, liaison in model.liaisons.items():
        own = owners.get(lid, [])
        if len(own) != 1:
            bad("liaison.owner", lid, f"liaison must be owned by exactly one part, found {len(own)}")
        if liaison.order < 0:
            bad("liaison.order", lid, "order must be nonnegative")
        if liaison.kind is LiaisonKind.SELF_DEFINED and not liaison.pairs:
            bad("liaison.pairs", lid, "self-defined liaison needs at least one liaison pair")
        if liaison.kind is not LiaisonKind.SELF_DEFINED and liaison.pairs:
            bad("liaison.pairs", lid, f"{liaison.kind.value} liaison must not carry pairs")
        if liaison.kind is LiaisonKind.HI_DCL_REALISED and own == [model.root]:
            bad("liaison.scope", lid, "no higher level exists to realise a liaison owned by the root")
        for req in liaison.requires:
            if req.op not in QOS_OPS or not req.key.replace("_", "").isalnum() or req.key.upper() != req.key:
                bad("liaison.qos", lid, f"bad requirement {req.key}{req.op}{req.threshold}")
        for pair in liaison.pairs:
            if pair.end_a.part == pair.end_b.part:
                bad("pair.same-part", lid, f"both ends on {pair.end_a.part!r}")
            for end in (pair.end_a, pair.end_b):
                part = parts.get(end.part)
                if part is None:
                    bad("ref.endpoint", lid, f"endpoint part {end.part!r} does not exist")
                elif end.feature not in part.endpoints:
                    bad("liaison.feature", lid, f"{end.part!r} has no endpoint {end.feature!r}")
                elif len(own) == 1 and not model.contains(own[0], end.part):
                    bad("liaison.scope", lid, f"endpoint {end.part!r} outside owner {own[0]!r}")
        if len(own) == 1 and liaison.pairs and all(p.end_a.part in parts and p.end_b.part in parts for p in liaison.pairs):
            if len(model.liaison_parts(lid)) < 2:
                bad("liaison.scope", lid, f"liaison joins fewer than two constituents of {own[0]!r}")

    for conn in model.connectors.values():
        for lid in conn.attached_liaisons:
            if lid not in model.liaisons:
                bad("ref.connector", conn.id, f"attached liaison {lid!r} does not exist")
    return out


def decomposition_report(model: ProductModel) -> DecompositionReport:
    """Counts of the top-level decomposition terms.

    N counts the root's constituents, K those composite constituents with a
    composite child, P those whose children are all primitive, M the
    liaisons owned by the root. Primitive constituents contribute to N only.
    """
    root = model.parts[model.root]
    K = P = 0
    for cid in root.children:
        child = model.parts[cid]
        if not child.composite:
            continue
        if any(model.parts[g].composite for g in child.children):
            K += 1
        else:
            P += 1
    return DecompositionReport(N=len(root.children), K=K, P=P, M=len(root.owned_liaisons))


# ---------------------------------------------------------------- serialization


def _str(value: str) -> str:
    return f'"{turtle.escape(value)}"'


def _num(value: float) -> str:
    return repr(float(value))


def serialize(model: ProductModel) -> str:
    """Canonical triple text: prefixes sorted by name, statements by subject id."""
    prefixes = dict(model.prefixes)
    prefixes.setdefault("psmm", PSMM)
    lines = [f"@prefix {name}: <{ns}> ." for name, ns in sorted(prefixes.items())]
    lines.append("")

    def x(id: str) -> str:
        return _expand(id, prefixes)

    statements: dict[str, list[str]] = {}
    for part in model.parts.values():
        cls = "CompositePart" if part.composite else "PrimitivePart"
        props = [f"psmm:name {_str(part.name)}"]
        if part.children:
            props.append("psmm:hasPart " + ", ".join(x(c) for c in part.children))
        if part.owned_liaisons:
            props.append("psmm:hasLiaison " + ", ".join(x(lid) for lid in part.owned_liaisons))
        if part.endpoints:
            props.append("psmm:endpoint " + ", ".join(_str(e) for e in part.endpoints))
        if part.id == model.root:
            for d in model.subassemblies:
                pred = "masterSubAssembly" if d.role is Role.MASTER else "branchSubAssembly"
                body = f"psmm:of {x(d.composite_part)} ; psmm:basePart {x(d.base_part)}"
                if d.assembly_line is not None:
                    body += f" ; psmm:assemblyLine {_str(d.assembly_line)}"
                props.append(f"psmm:{pred} [ {body} ]")
        statements[part.id] = [f"{x(part.id)} a psmm:{cls}"] + props

    for liaison in model.liaisons.values():
        props = [f"psmm:order {liaison.order}", f"psmm:liaisonType {_str(liaison.liaison_type)}"]
        if liaison.pairs:
            pairs = [
                "[ psmm:endA [ psmm:part {} ; psmm:feature {} ] ; psmm:endB [ psmm:part {} ; psmm:feature {} ] ]".format(
                    x(p.end_a.part), _str(p.end_a.feature), x(p.end_b.part), _str(p.end_b.feature)
                )
                for p in liaison.pairs
            ]
            props.append("psmm:pair " + ",\n        ".join(pairs))
        if liaison.requires:
            reqs = [
                f"[ psmm:key {_str(r.key)} ; psmm:op {_str(r.op)} ; psmm:value {_num(r.threshold)} ]"
                for r in liaison.requires
            ]
            props.append("psmm:requires " + ", ".join(reqs))
        statements[liaison.id] = [f"{x(liaison.id)} a psmm:{_LIAISON_CLASS[liaison.kind]}"] + props

    for conn in model.connectors.values():
        props = [f"psmm:name {_str(conn.name)}"]
        if conn.attached_liaisons:
            props.append("psmm:attaches " + ", ".join(x(lid) for lid in conn.attached_liaisons))
        statements[conn.id] = [f"{x(conn.id)} a psmm:Connector"] + props

    for sid in sorted(statements):
        head, *props = statements[sid]
        lines.append(head + " ;\n    " + " ;\n    ".join(props) + " .")
    return "\n".join(lines) + "\n"

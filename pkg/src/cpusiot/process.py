"""Platform-independent assembly process generation.

From a :class:`~cpusiot.product.ProductModel` this derives the assembly tasks,
the assembly-task precedence graph (AT-PG) with its master/branch initial
nodes, and the activity specifications each task needs.
"""

from __future__ import annotations

import graphlib
import itertools
import json
import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from .product import (
    DecompositionReport,
    LiaisonEndPoint,
    LiaisonKind,
    ProductModel,
    QosRequirement,
    decomposition_report,
)

VERBS = {
    "insertion": "PickAndInsert",
    "screw-fit": "ScrewPickAndFasten",
    "placement": "PickAndPlace",
    "snap": "PickAndInsert",
    "hold": "Hold",
}
NOOP = "NoOp"


class ProcessError(Exception):
    pass


class CyclicPrecedence(ProcessError):
    def __init__(self, ids: Sequence[str]):
        super().__init__("precedence cycle through " + " -> ".join(ids))
        self.ids = list(ids)


class UnknownLiaisonType(UserWarning):
    pass


def natural_key(node_id: str) -> list:
    """Sort key ordering AT2 before AT10."""
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", node_id)]


@dataclass(frozen=True)
class ActivitySpec:
    verb: str
    liaison: str
    subject: Optional[LiaisonEndPoint] = None
    target: Optional[LiaisonEndPoint] = None
    qos: tuple[QosRequirement, ...] = ()
    repeat: int = 1


@dataclass(frozen=True)
class AssemblyTask:
    id: str
    liaisons: tuple[str, ...]
    origin_node: str
    rule: str = "1"
    order: int = 0
    line: str = "MIT"
    activities: tuple[ActivitySpec, ...] = ()


@dataclass(frozen=True)
class InitialTask:
    id: str
    kind: str
    base_part: str
    subassembly: str
    assembly_line: Optional[str] = None
    members: tuple[str, ...] = ()


@dataclass(frozen=True)
class PrecedenceGraph:
    nodes: tuple[str, ...] = ()
    arcs: tuple[tuple[str, str], ...] = ()
    initials: tuple[InitialTask, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(set(self.nodes), key=natural_key)))
        object.__setattr__(
            self, "arcs",
            tuple(sorted(set(map(tuple, self.arcs)), key=lambda a: (natural_key(a[0]), natural_key(a[1])))),
        )

    @property
    def initial_ids(self) -> set[str]:
        return {i.id for i in self.initials}

    def predecessors(self, node: str) -> list[str]:
        return [a for a, b in self.arcs if b == node]

    def successors(self, node: str) -> list[str]:
        return [b for a, b in self.arcs if a == node]

    def check_acyclic(self) -> None:
        sorter = graphlib.TopologicalSorter({n: set() for n in self.nodes})
        for a, b in self.arcs:
            sorter.add(b, a)
        try:
            sorter.prepare()
        except graphlib.CycleError as exc:
            raise CyclicPrecedence(exc.args[1]) from None


@dataclass(frozen=True)
class BranchDecisions:
    """Engineer decisions applied to an initial AT-PG.

    :param inline: branch (BIT id or its sub-assembly part id) -> node after
        which the branch is built on the master line
    :param arcs: extra precedence arcs pruning the sequence space
    """

    inline: Mapping[str, str] = field(default_factory=dict)
    arcs: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ProcessPIM:
    tasks: tuple[AssemblyTask, ...]
    graph: PrecedenceGraph
    report: DecompositionReport

    def task(self, task_id: str) -> AssemblyTask:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def to_dict(self) -> dict:
        return pim_to_dict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- tasks


def _ordered_children(model: ProductModel, node: str) -> list[str]:
    """Master subtree first, then branch subtrees in declaration order."""
    children = list(model.parts[node].children)
    designations = ([model.master] if model.master else []) + model.branches

    def rank(child: str) -> tuple[int, int]:
        for i, d in enumerate(designations):
            if model.contains(child, d.composite_part):
                return (0, i)
        return (1, children.index(child))

    return sorted(children, key=rank)


def _initials(model: ProductModel) -> list[InitialTask]:
    master = model.master
    if master is None:
        raise ProcessError("model has no master sub-assembly")

    def members(sub: str) -> tuple[str, ...]:
        return tuple(sorted((p for p in model.parts if model.contains(sub, p)), key=natural_key))

    out = [InitialTask("MIT", "MIT", master.base_part, master.composite_part, master.assembly_line, members(master.composite_part))]
    for i, b in enumerate(model.branches, 1):
        out.append(InitialTask(f"BIT{i}", "BIT", b.base_part, b.composite_part, b.assembly_line, members(b.composite_part)))
    return out


def _line_of(model: ProductModel, node: str, initials: Sequence[InitialTask]) -> str:
    by_part = {i.subassembly: i.id for i in initials}
    for anc in model.ancestors(node):
        if anc in by_part:
            return by_part[anc]
    return "MIT"


def _is_branch_part(model: ProductModel, part: str) -> bool:
    return any(model.contains(part, b.composite_part) for b in model.branches)


def _node_groups(model: ProductModel, node: str) -> list[tuple[list[str], str, int]]:
    """Group a node's realizable liaisons into tasks.

    Walks the liaisons by (order, declaration) while tracking the growing
    sub-assembly. All liaisons that attach the same incoming constituents to
    it form one task; when the incoming constituent is a branch sub-assembly
    the group is a branch joining task.
    """
    part = model.parts[node]
    decl = {lid: i for i, lid in enumerate(part.owned_liaisons)}
    ordered = sorted(
        (lid for lid in part.owned_liaisons if model.liaisons[lid].realizable),
        key=lambda lid: (model.liaisons[lid].order, decl[lid]),
    )
    designation = model.designation_of(node)
    if designation is not None:
        assembled = {designation.base_part}
    elif model.master is not None:
        assembled = {c for c in part.children if model.contains(c, model.master.composite_part)}
    else:
        assembled = set()

    groups = []
    assigned: set[str] = set()
    for lid in ordered:
        if lid in assigned:
            continue
        joined = model.liaison_parts(lid)
        incoming = joined - assembled
        if not joined or not incoming:
            group = [lid]
        else:
            group = [
                m for m in ordered
                if m not in assigned and model.liaison_parts(m) and model.liaison_parts(m) - assembled == incoming
            ]
        assigned.update(group)
        assembled |= incoming
        if len(group) == 1:
            rule = "1"
        elif any(_is_branch_part(model, p) for p in incoming):
            rule = "2b"
        else:
            rule = "2a"
        orders = [model.liaisons[m].order for m in group]
        groups.append((group, rule, max(orders) if rule == "2b" else min(orders)))
    return groups


def identify_tasks(model: ProductModel) -> list[AssemblyTask]:
    """One task per self-defined or lower-level-defined liaison, merged where
    a part (or a branch sub-assembly) is attached through several liaisons at
    once. Liaisons realised at a higher level produce no task.

    Ids run AT1..ATn depth first: master subtree, branch subtrees in
    declaration order, then the node's own liaisons.
    """
    initials = _initials(model) if model.master else []
    tasks: list[AssemblyTask] = []

    def visit(node: str) -> None:
        for child in _ordered_children(model, node):
            if model.parts[child].composite:
                visit(child)
        line = _line_of(model, node, initials) if initials else "MIT"
        for group, rule, order in _node_groups(model, node):
            tasks.append(AssemblyTask(f"AT{len(tasks) + 1}", tuple(group), node, rule, order, line))

    visit(model.root)
    return tasks


# ---------------------------------------------------------------- precedence


def _task_parts(model: ProductModel, task: AssemblyTask) -> frozenset[str]:
    return frozenset().union(*(model.liaison_parts(lid) for lid in task.liaisons))


def build_pg(model: ProductModel, tasks: Sequence[AssemblyTask]) -> PrecedenceGraph:
    """Construct the AT-PG.

    The master base part yields the MIT node, each branch base part a BIT
    node. Arcs follow the recursive traversal: composite children first, then
    the node's own tasks chained by ascending order (equal orders stay
    parallel). A child sub-assembly's final tasks precede the first task at
    the parent that consumes it; tasks with no predecessor hang off the
    initial node of their line.
    """
    initials = _initials(model)
    initial_of = {i.subassembly: i.id for i in initials}
    position = {t.id: i for i, t in enumerate(tasks)}
    by_node: dict[str, list[AssemblyTask]] = {}
    for t in tasks:
        by_node.setdefault(t.origin_node, []).append(t)
    arcs: set[tuple[str, str]] = set()

    def visit(node: str) -> list[str]:
        child_exits = {}
        for child in _ordered_children(model, node):
            if model.parts[child].composite:
                child_exits[child] = visit(child)
        local = sorted(by_node.get(node, []), key=lambda t: (t.order, position[t.id]))
        levels = [list(g) for _, g in itertools.groupby(local, key=lambda t: t.order)]
        for before, after in zip(levels, levels[1:]):
            arcs.update((a.id, b.id) for a in before for b in after)

        unconsumed: list[str] = []
        for child, exits in child_exits.items():
            consumer = next((t for t in local if child in _task_parts(model, t)), None)
            if consumer is None:
                unconsumed.extend(exits)
            else:
                arcs.update((e, consumer.id) for e in exits)

        line = _line_of(model, node, initials)
        has_pred = {b for _, b in arcs}
        for t in local:
            if t.id not in has_pred:
                arcs.add((line, t.id))
        # a designated node's initial must feed something even when every
        # local task already waits on a child subtree
        if node in initial_of and local and not any(a == initial_of[node] for a, _ in arcs):
            base = model.designation_of(node).base_part
            first = next((t for t in local if base in _task_parts(model, t)), local[0])
            arcs.add((initial_of[node], first.id))

        exits = ([t.id for t in levels[-1]] if levels else []) + unconsumed
        if not exits and node in initial_of:
            exits = [initial_of[node]]
        return exits

    visit(model.root)
    graph = PrecedenceGraph(
        nodes=tuple(i.id for i in initials) + tuple(t.id for t in tasks),
        arcs=tuple(arcs),
        initials=tuple(initials),
    )
    graph.check_acyclic()
    return graph


def refine_pg(graph: PrecedenceGraph, decisions: Optional[BranchDecisions] = None) -> PrecedenceGraph:
    """Apply branch decisions: inline branches get an arc from the chosen
    master-line node; extra arcs are added verbatim. The node set never
    changes and the result must stay acyclic."""
    if decisions is None:
        return graph
    by_key = {}
    for init in graph.initials:
        if init.kind == "BIT":
            by_key[init.id] = init.id
            by_key[init.subassembly] = init.id
    added = []
    for branch, after in decisions.inline.items():
        if branch not in by_key:
            raise ProcessError(f"no branch sub-assembly {branch!r}")
        added.append((after, by_key[branch]))
    added.extend(tuple(a) for a in decisions.arcs)
    for a, b in added:
        if a not in graph.nodes or b not in graph.nodes:
            raise ProcessError(f"decision arc ({a}, {b}) references an unknown node")
    refined = replace(graph, arcs=graph.arcs + tuple(added))
    refined.check_acyclic()
    return refined


def enumerate_sequences(graph: PrecedenceGraph, cap: int) -> list[tuple[str, ...]]:
    """All topological orders of the graph in lexicographic order of node ids
    (numeric suffixes compared as numbers), at most ``cap`` of them."""
    if cap <= 0:
        return []
    succs: dict[str, list[str]] = {n: [] for n in graph.nodes}
    indeg = {n: 0 for n in graph.nodes}
    for a, b in graph.arcs:
        succs[a].append(b)
        indeg[b] += 1
    out: list[tuple[str, ...]] = []
    prefix: list[str] = []
    available = sorted((n for n in graph.nodes if indeg[n] == 0), key=natural_key)

    def walk(available: list[str]) -> None:
        if len(out) >= cap:
            return
        if len(prefix) == len(graph.nodes):
            out.append(tuple(prefix))
            return
        for node in available:
            rest = [n for n in available if n != node]
            for s in succs[node]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    rest.append(s)
            prefix.append(node)
            walk(sorted(rest, key=natural_key))
            prefix.pop()
            for s in succs[node]:
                indeg[s] += 1
            if len(out) >= cap:
                return

    walk(available)
    return out


# ---------------------------------------------------------------- activities


def emit_activity_specs(model: ProductModel, tasks: Sequence[AssemblyTask]) -> list[AssemblyTask]:
    """Attach activity specs: one per liaison, verb from the liaison type,
    repeated once per liaison pair. Platform moves (transfer, rotation) are
    left to the binding step."""
    out = []
    for task in tasks:
        activities = []
        for lid in task.liaisons:
            liaison = model.liaisons[lid]
            verb = VERBS.get(liaison.liaison_type)
            if verb is None:
                warnings.warn(f"liaison {lid}: no activity for type {liaison.liaison_type!r}", UnknownLiaisonType, stacklevel=2)
                verb = NOOP
            subject = target = None
            if liaison.pairs:
                first = liaison.pairs[0]
                subject, target = first.end_a, first.end_b
                if liaison.liaison_type == "screw-fit" and "ThreadedHole" in subject.feature:
                    subject, target = target, subject
            activities.append(ActivitySpec(verb, lid, subject, target, liaison.requires, max(1, len(liaison.pairs))))
        out.append(replace(task, activities=tuple(activities)))
    return out


def generate_pim(model: ProductModel, decisions: Optional[BranchDecisions] = None) -> ProcessPIM:
    tasks = identify_tasks(model)
    graph = refine_pg(build_pg(model, tasks), decisions)
    return ProcessPIM(tuple(emit_activity_specs(model, tasks)), graph, decomposition_report(model))


def realizable_liaisons(model: ProductModel) -> set[str]:
    return {lid for lid, l in model.liaisons.items() if l.kind is not LiaisonKind.HI_DCL_REALISED}


# ---------------------------------------------------------------- export


def export_dot(graph: PrecedenceGraph) -> str:
    if not graph.nodes:
        return "digraph atpg {}\n"
    initial = graph.initial_ids
    lines = ["digraph atpg {"]
    for n in graph.nodes:
        shape = " [shape=box]" if n in initial else ""
        lines.append(f'  "{n}"{shape};')
    for a, b in graph.arcs:
        lines.append(f'  "{a}" -> "{b}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _end_dict(end: Optional[LiaisonEndPoint]) -> Optional[dict]:
    return None if end is None else {"part": end.part, "feature": end.feature}


def _end_from(d: Optional[dict]) -> Optional[LiaisonEndPoint]:
    return None if d is None else LiaisonEndPoint(d["part"], d["feature"])


def pim_to_dict(pim: ProcessPIM) -> dict:
    return {
        "tasks": [
            {
                "id": t.id,
                "liaisons": list(t.liaisons),
                "originNode": t.origin_node,
                "rule": t.rule,
                "order": t.order,
                "line": t.line,
                "activities": [
                    {
                        "verb": a.verb,
                        "liaison": a.liaison,
                        "subject": _end_dict(a.subject),
                        "target": _end_dict(a.target),
                        "qos": [[q.key, q.op, q.threshold] for q in a.qos],
                        "repeat": a.repeat,
                    }
                    for a in t.activities
                ],
            }
            for t in pim.tasks
        ],
        "graph": {
            "nodes": list(pim.graph.nodes),
            "arcs": [list(a) for a in pim.graph.arcs],
            "initials": [
                {
                    "id": i.id,
                    "kind": i.kind,
                    "basePart": i.base_part,
                    "subassembly": i.subassembly,
                    "assemblyLine": i.assembly_line,
                    "members": list(i.members),
                }
                for i in pim.graph.initials
            ],
        },
        "report": {"N": pim.report.N, "K": pim.report.K, "P": pim.report.P, "M": pim.report.M},
    }


def pim_from_dict(data: Mapping) -> ProcessPIM:
    tasks = tuple(
        AssemblyTask(
            t["id"],
            tuple(t["liaisons"]),
            t["originNode"],
            t.get("rule", "1"),
            t.get("order", 0),
            t.get("line", "MIT"),
            tuple(
                ActivitySpec(
                    a["verb"],
                    a["liaison"],
                    _end_from(a.get("subject")),
                    _end_from(a.get("target")),
                    tuple(QosRequirement(k, op, float(v)) for k, op, v in a.get("qos", [])),
                    a.get("repeat", 1),
                )
                for a in t.get("activities", [])
            ),
        )
        for t in data["tasks"]
    )
    g = data["graph"]
    graph = PrecedenceGraph(
        tuple(g["nodes"]),
        tuple(tuple(a) for a in g["arcs"]),
        tuple(
            InitialTask(
                i["id"], i["kind"], i["basePart"], i["subassembly"], i.get("assemblyLine"), tuple(i.get("members", ()))
            )
            for i in g["initials"]
        ),
    )
    return ProcessPIM(tasks, graph, DecompositionReport(**data["report"]))


def load_pim(text: str) -> ProcessPIM:
    return pim_from_dict(json.loads(text))


def task_predecessors(graph: PrecedenceGraph, node: str) -> set[str]:
    """Task predecessors of ``node``, looking through initial nodes."""
    initial = graph.initial_ids
    out: set[str] = set()
    stack = list(graph.predecessors(node))
    seen = set()
    while stack:
        p = stack.pop()
        if p in seen:
            continue
        seen.add(p)
        if p in initial:
            stack.extend(graph.predecessors(p))
        else:
            out.add(p)
    return out


def is_linear_extension(sequence: Iterable[str], arcs: Iterable[tuple[str, str]]) -> bool:
    index = {n: i for i, n in enumerate(sequence)}
    return all(a in index and b in index and index[a] < index[b] for a, b in arcs if a in index or b in index)

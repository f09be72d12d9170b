"""Independent reference implementations used by the tests.

Deliberately naive: nothing here imports the package under test, so a bug in
the library cannot leak into its own oracle.
"""

from __future__ import annotations

import itertools
import math
import re


def _natural(s: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", s)]


def respects(seq, arcs) -> bool:
    pos = {n: i for i, n in enumerate(seq)}
    return all(pos[a] < pos[b] for a, b in arcs)


def all_linear_extensions(nodes, arcs) -> list[tuple[str, ...]]:
    """Every permutation of ``nodes`` that respects ``arcs``, sorted
    lexicographically under natural ordering of node ids."""
    found = [p for p in itertools.permutations(nodes) if respects(p, arcs)]
    return sorted(found, key=lambda p: [_natural(n) for n in p])


def filter_holds(op: str, actual, expected) -> bool:
    if actual is None:
        return False
    if isinstance(expected, str) or isinstance(actual, str):
        return op == "=" and isinstance(actual, str) and isinstance(expected, str) and actual == expected
    actual, expected = float(actual), float(expected)
    if op == ">":
        return actual > expected
    if op == ">=":
        return actual >= expected
    if op == "<":
        return actual < expected
    if op == "<=":
        return actual <= expected
    if op == "=":
        return actual == expected
    if op == "!=":
        return actual != expected
    raise ValueError(op)


def brute_match(service: dict, query: dict) -> bool:
    """``service``: {"label": str, "params": {KEY: value}}.
    ``query``: {"label": str, "keys": [KEY...], "filter": [(KEY, op, value)]}.
    """
    if service["label"] != query["label"]:
        return False
    for key in query["keys"]:
        if key not in service["params"]:
            return False
    for key, op, value in query["filter"]:
        if not filter_holds(op, service["params"].get(key), value):
            return False
    return True


def nearest_rank(values, q: float) -> float:
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def rtt_stats(samples: list[float]) -> dict:
    ordered = sorted(samples)
    return {
        "count": len(ordered),
        "min": ordered[0],
        "p50": nearest_rank(ordered, 0.50),
        "p95": nearest_rank(ordered, 0.95),
        "max": ordered[-1],
    }


def task_windows(trace) -> dict:
    """task id -> (first start, last end) over successful trace entries."""
    out = {}
    for e in trace:
        if e.task is None or e.outcome != "success":
            continue
        lo, hi = out.get(e.task, (e.start, e.end))
        out[e.task] = (min(lo, e.start), max(hi, e.end))
    return out


def trace_sequence(trace, initials) -> list:
    """Initial nodes first, then tasks in order of completion."""
    windows = task_windows(trace)
    return list(initials) + sorted(windows, key=lambda t: (windows[t][1], windows[t][0], _natural(t)))


def trace_respects(trace, arcs, initials) -> bool:
    """Every task of an arc finishes before its successor starts, and the
    completion order is a linear extension of the arcs."""
    windows = task_windows(trace)
    for a, b in arcs:
        if a in windows and b in windows and windows[a][1] > windows[b][0]:
            return False
    seq = trace_sequence(trace, initials)
    return len(set(seq)) == len(seq) and respects(seq, arcs)

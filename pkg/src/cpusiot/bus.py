"""In-process publish/subscribe topic bus.

Topics are slash-delimited paths. Subscription patterns may use ``+`` for
one level and a trailing ``#`` for any remainder. Delivery is synchronous
and reaches every subscriber registered before the publish call.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable

Handler = Callable[["Event"], None]


@dataclass(frozen=True)
class Event:
    topic: str
    payload: Any = None
    timestamp: float = 0.0


def topic_matches(pattern: str, topic: str) -> bool:
    pat = pattern.split("/")
    top = topic.split("/")
    for i, p in enumerate(pat):
        if p == "#":
            return True
        if i >= len(top) or (p != "+" and p != top[i]):
            return False
    return len(pat) == len(top)


@dataclass
class EventBus:
    log: list[Event] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()
        self._subs: list[tuple[str, Handler]] = []

    def subscribe(self, pattern: str, handler: Handler) -> None:
        if not pattern or pattern.startswith("/") or pattern.endswith("/"):
            raise ValueError(f"bad topic pattern {pattern!r}")
        with self._lock:
            self._subs.append((pattern, handler))

    def publish(self, topic: str, payload: Any = None, timestamp: float = 0.0) -> int:
        """Deliver to matching subscribers; returns the delivery count."""
        if "+" in topic or "#" in topic:
            raise ValueError("wildcards are not allowed in published topics")
        event = Event(topic, payload, timestamp)
        with self._lock:
            self.log.append(event)
            targets = [h for p, h in self._subs if topic_matches(p, topic)]
        for handler in targets:
            handler(event)
        return len(targets)

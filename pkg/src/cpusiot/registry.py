"""In-process resource directory.

Workers register their service resources under an endpoint name with a
lifetime; clients look them up by resource type and, optionally, by a
discovery query evaluated against each resource's description.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .services import ServiceDescription, ServiceQuery

DEFAULT_LIFETIME = 90000.0
SERVICE_RT = "as:Service"


class RegistryError(Exception):
    pass


class InvalidLifetime(RegistryError):
    pass


class EmptyLinks(RegistryError):
    pass


class RegistryUnreachable(RegistryError):
    pass


@dataclass(frozen=True)
class ResourceLink:
    path: str
    resource_type: str = SERVICE_RT
    description: Optional[ServiceDescription] = None

    def __post_init__(self):
        if not self.path.startswith("/"):
            object.__setattr__(self, "path", "/" + self.path)


@dataclass(frozen=True)
class Registration:
    id: str
    endpoint: str
    lifetime: float
    registered_at: float
    links: tuple[ResourceLink, ...] = ()

    @property
    def expires_at(self) -> float:
        return self.registered_at + self.lifetime

    def live_at(self, now: float) -> bool:
        return now < self.expires_at


@dataclass(frozen=True)
class LookupHit:
    endpoint: str
    link: ResourceLink

    @property
    def path(self) -> str:
        return self.link.path

    @property
    def description(self) -> Optional[ServiceDescription]:
        return self.link.description


class Registry:
    """Thread-safe resource directory with an injectable clock.

    :param clock: returns the current time in seconds
    """

    def __init__(self, clock: Optional[Callable[[], float]] = None):
        self.clock = clock or time.monotonic
        self._lock = threading.Lock()
        self._entries: dict[str, Registration] = {}
        self._ids = itertools.count(1)

    def register(
        self,
        endpoint: str,
        lifetime: float = DEFAULT_LIFETIME,
        links: Sequence[ResourceLink] = (),
    ) -> str:
        if not lifetime > 0:
            raise InvalidLifetime(f"lifetime must be positive, got {lifetime}")
        links = tuple(links)
        if not links:
            raise EmptyLinks(f"{endpoint} registered no links")
        paths = [ln.path for ln in links]
        if len(paths) != len(set(paths)):
            raise RegistryError(f"{endpoint}: duplicate resource paths")
        with self._lock:
            now = self.clock()
            old = self._entries.get(endpoint)
            if old is not None and old.live_at(now):
                reg_id = old.id
            else:
                reg_id = f"rd{next(self._ids)}"
            self._entries[endpoint] = Registration(reg_id, endpoint, float(lifetime), now, links)
            return reg_id

    def unregister(self, endpoint_or_id: str) -> bool:
        with self._lock:
            for ep, reg in list(self._entries.items()):
                if endpoint_or_id in (ep, reg.id):
                    del self._entries[ep]
                    return True
            return False

    def lookup(
        self,
        resource_type: Optional[str] = None,
        query: Optional[ServiceQuery] = None,
    ) -> list[LookupHit]:
        """Live links, ordered by endpoint then registration order of links."""
        with self._lock:
            now = self.clock()
            entries = sorted(self._entries.values(), key=lambda r: r.endpoint)
        hits = []
        for reg in entries:
            if not reg.live_at(now):
                continue
            for link in reg.links:
                if resource_type is not None and link.resource_type != resource_type:
                    continue
                if query is not None and (link.description is None or not query.matches(link.description)):
                    continue
                hits.append(LookupHit(reg.endpoint, link))
        return hits

    def sweep_expired(self, now: Optional[float] = None) -> int:
        with self._lock:
            now = self.clock() if now is None else now
            dead = [ep for ep, reg in self._entries.items() if not reg.live_at(now)]
            for ep in dead:
                del self._entries[ep]
            return len(dead)

    def registrations(self) -> list[Registration]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda r: r.endpoint)

    def get(self, endpoint: str) -> Optional[Registration]:
        with self._lock:
            reg = self._entries.get(endpoint)
            return reg if reg is not None and reg.live_at(self.clock()) else None

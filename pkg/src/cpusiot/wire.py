"""Text protocol for the resource directory and EXECUTE requests.

One request per connection. The client writes the request, shuts down its
write side and reads the response until EOF. A message is a start line, and
optionally a blank line followed by a body::

    POST /rd?ep=R2&lt=90000

    </pickAndPlace>;rt="as:Service"
    </hold>;rt="as:Service"

    <N3 block for pickAndPlace>
    ---
    <N3 block for hold>

Responses start with ``2.01 Created <id>``, ``2.05 Content``, ``2.02 Deleted``
or ``4.00 Bad Request <reason>`` (``4.04 Not Found`` for unknown paths).
"""

from __future__ import annotations

import json
import re
import socket
import socketserver
import threading
from typing import Any, Callable, Optional, Sequence
from urllib.parse import parse_qs, quote, urlsplit

from .registry import (
    DEFAULT_LIFETIME,
    LookupHit,
    Registry,
    RegistryError,
    RegistryUnreachable,
    ResourceLink,
)
from .services import (
    ServiceDescription,
    ServiceModelError,
    ServiceQuery,
    parse_n3_description,
    parse_query,
    serialize_description,
    serialize_query,
)

BLOCK_SEP = "\n---\n"
_LINK_RE = re.compile(r'^<(?P<target>[^>]*)>(?P<attrs>(?:;[^;]*)*)$')

ExecuteHandler = Callable[[str, str, dict], dict]


class WireError(Exception):
    pass


def split_message(text: str) -> tuple[str, str]:
    start, _, body = text.partition("\n")
    if body.startswith("\n"):
        body = body[1:]
    return start.strip(), body


def join_message(start: str, body: str = "") -> str:
    return start + "\n" + ("\n" + body if body else "")


def format_link(target: str, attrs: dict[str, str]) -> str:
    return f"<{target}>" + "".join(f';{k}="{v}"' for k, v in attrs.items())


def parse_link(line: str) -> tuple[str, dict[str, str]]:
    m = _LINK_RE.match(line.strip())
    if m is None:
        raise WireError(f"malformed link {line!r}")
    attrs = {}
    for part in filter(None, m.group("attrs").split(";")):
        k, _, v = part.partition("=")
        attrs[k.strip()] = v.strip().strip('"')
    return m.group("target"), attrs


def _encode_links(entries: Sequence[tuple[str, dict[str, str], Optional[ServiceDescription]]]) -> str:
    lines = [format_link(t, a) for t, a, _ in entries]
    blocks = [serialize_description(d) if d is not None else "" for _, _, d in entries]
    return "\n".join(lines) + "\n\n" + BLOCK_SEP.join(blocks)


def _decode_links(body: str) -> list[tuple[str, dict[str, str], Optional[ServiceDescription]]]:
    head, _, tail = body.partition("\n\n")
    lines = [ln for ln in head.splitlines() if ln.strip()]
    blocks = tail.split(BLOCK_SEP) if tail.strip() else []
    if blocks and len(blocks) != len(lines):
        raise WireError(f"{len(lines)} links but {len(blocks)} description blocks")
    out = []
    for i, line in enumerate(lines):
        target, attrs = parse_link(line)
        desc = None
        if blocks and blocks[i].strip():
            parsed = parse_n3_description(blocks[i])
            desc = parsed[0] if parsed else None
        out.append((target, attrs, desc))
    return out


def encode_register(endpoint: str, lifetime: float, links: Sequence[ResourceLink]) -> str:
    body = _encode_links([(ln.path, {"rt": ln.resource_type}, ln.description) for ln in links])
    return join_message(f"POST /rd?ep={quote(endpoint)}&lt={lifetime:g}", body)


def encode_hits(hits: Sequence[LookupHit]) -> str:
    return _encode_links([(h.link.path, {"ep": h.endpoint, "rt": h.link.resource_type}, h.link.description) for h in hits])


def decode_hits(body: str) -> list[LookupHit]:
    if not body.strip():
        return []
    return [
        LookupHit(attrs.get("ep", ""), ResourceLink(target, attrs.get("rt", ""), desc))
        for target, attrs, desc in _decode_links(body)
    ]


def handle_request(
    registry: Registry,
    text: str,
    execute: Optional[ExecuteHandler] = None,
) -> str:
    """Serve one request against ``registry`` and return the response text."""
    try:
        start, body = split_message(text)
        method, _, target = start.partition(" ")
        url = urlsplit(target.strip())
        params = {k: v[-1] for k, v in parse_qs(url.query).items()}
        if method == "POST" and url.path == "/rd":
            if "ep" not in params:
                return "4.00 Bad Request missing ep\n"
            lifetime = float(params.get("lt", DEFAULT_LIFETIME))
            links = [ResourceLink(t, a.get("rt", ""), d) for t, a, d in _decode_links(body)]
            reg_id = registry.register(params["ep"], lifetime, links)
            return f"2.01 Created {reg_id}\n"
        if method == "GET" and url.path == "/rd-lookup/res":
            return join_message("2.05 Content", encode_hits(registry.lookup(params.get("rt"))))
        if method == "POST" and url.path == "/rd-lookup/query":
            query = parse_query(body)
            return join_message("2.05 Content", encode_hits(registry.lookup(params.get("rt"), query)))
        if method == "DELETE" and url.path.startswith("/rd/"):
            if registry.unregister(url.path[len("/rd/"):]):
                return "2.02 Deleted\n"
            return "4.04 Not Found\n"
        if method == "POST" and execute is not None and url.path.count("/") >= 2:
            _, ep, path = url.path.split("/", 2)
            result = execute(ep, "/" + path, json.loads(body) if body.strip() else {})
            return join_message("2.04 Changed", json.dumps(result, sort_keys=True))
        return f"4.04 Not Found {method} {url.path}\n"
    except (RegistryError, ServiceModelError, SyntaxError, WireError, ValueError, KeyError) as exc:
        reason = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        return f"4.00 Bad Request {type(exc).__name__}: {reason}\n"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        data = self.rfile.read().decode("utf-8")
        response = handle_request(self.server.registry, data, self.server.execute)
        self.wfile.write(response.encode("utf-8"))


class RegistryServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], registry: Registry, execute: Optional[ExecuteHandler] = None):
        super().__init__(address, _Handler)
        self.registry = registry
        self.execute = execute

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "RegistryServer":
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self


def exchange(host: str, port: int, text: str, timeout: float = 5.0) -> str:
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            sock.sendall(text.encode("utf-8"))
            sock.shutdown(socket.SHUT_WR)
            chunks = []
            while True:
                chunk = sock.recv(65536)
                if not chunk:
                    break
                chunks.append(chunk)
    except OSError as exc:
        raise RegistryUnreachable(f"{host}:{port}: {exc}") from exc
    return b"".join(chunks).decode("utf-8")


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {address!r}")
    return host, int(port)


class RemoteRegistry:
    """Client with the same register/lookup/unregister surface as
    :class:`~cpusiot.registry.Registry`."""

    def __init__(self, address: str, timeout: float = 5.0):
        self.host, self.port = parse_address(address)
        self.timeout = timeout

    def _call(self, text: str) -> tuple[str, str]:
        start, body = split_message(exchange(self.host, self.port, text, self.timeout))
        if start.startswith("4."):
            raise RegistryError(start)
        return start, body

    def register(self, endpoint: str, lifetime: float = DEFAULT_LIFETIME, links: Sequence[ResourceLink] = ()) -> str:
        start, _ = self._call(encode_register(endpoint, lifetime, links))
        return start.split()[-1]

    def lookup(self, resource_type: Optional[str] = None, query: Optional[ServiceQuery] = None) -> list[LookupHit]:
        rt = f"?rt={quote(resource_type)}" if resource_type else ""
        if query is None:
            _, body = self._call(f"GET /rd-lookup/res{rt}\n")
        else:
            _, body = self._call(join_message(f"POST /rd-lookup/query{rt}", serialize_query(query)))
        return decode_hits(body)

    def unregister(self, endpoint_or_id: str) -> bool:
        try:
            self._call(f"DELETE /rd/{quote(endpoint_or_id)}\n")
        except RegistryError:
            return False
        return True

    def execute(self, endpoint: str, path: str, args: Optional[dict] = None) -> dict[str, Any]:
        start, body = self._call(join_message(f"POST /{endpoint}{path}", json.dumps(args or {}, sort_keys=True)))
        return json.loads(body)

"""HTTP gateway: serves ``/ipfs/...`` and ``/ipns/...`` paths from a backing node.

Status mapping:

    400  malformed path, unparsable identifier, or a directory requested as a file
    404  a path segment or dnslink record definitely does not exist
    504  content, providers or names unreachable within ``request_timeout``
    500  anything else

Successful responses carry ``Content-Type: application/octet-stream`` and
``X-Content-Cid`` with the identifier of the bytes served.
"""

from __future__ import annotations

import logging
import queue
import threading
from concurrent.futures import Future as ThreadFuture
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Generator, Optional

from . import dag
from .errors import (
    CidError,
    DagError,
    DnslinkError,
    FetchTimeout,
    IntegrityError,
    InvalidPath,
    InvalidSignature,
    NotADirectory,
    NotFound,
    PstoreError,
    SegmentNotFound,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GatewayConfig:
    listen_address: str = "127.0.0.1:8080"
    request_timeout: float = 30.0
    backing_node: int = 0

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"listen address must be host:port, got {self.listen_address!r}")
        return host, int(port)


@dataclass
class Response:
    status: int
    body: bytes = b""
    headers: dict = field(default_factory=dict)


def status_for(exc: BaseException) -> int:
    if isinstance(exc, (InvalidPath, CidError)):
        return 400
    if isinstance(exc, NotADirectory) and exc.kind == "is-a-directory":
        return 400
    if isinstance(exc, (SegmentNotFound, NotADirectory)):
        return 404
    if isinstance(exc, DnslinkError):
        return 404 if exc.kind == "no-record" else 500
    if isinstance(exc, (NotFound, FetchTimeout, IntegrityError, InvalidSignature)):
        return 504
    if isinstance(exc, DagError) and exc.kind == "missing-block":
        return 504
    return 500


def _error(status: int, exc: BaseException) -> Response:
    kind = getattr(exc, "kind", "internal")
    body = f"{status} {kind}: {exc}\n".encode()
    return Response(status, body, {"Content-Type": "text/plain; charset=utf-8", "Content-Length": str(len(body))})


class Gateway:
    """Request handling against a simulator-attached node.

    Concurrent requests for the same path share one resolution, and requests
    that resolve to the same identifier share one fetch.
    """

    def __init__(self, node, request_timeout: float = 30.0):
        self.node = node
        self.request_timeout = request_timeout
        self._inflight: dict = {}
        self._paths: dict = {}
        self.fetches = 0

    @property
    def loop(self):
        return self.node.loop

    def _serve(self, path: str) -> Generator:
        if not path.startswith(("/ipfs/", "/ipns/")):
            raise InvalidPath(f"unsupported route {path!r}")
        cid, session = yield from self.node.resolve_proc(path)
        shared = self._inflight.get(cid)
        if shared is None:
            self.fetches += 1
            shared = self.loop.start(self.node.fetch_dag_proc(cid, session))
            self._inflight[cid] = shared
            shared.add_callback(lambda _f, c=cid: self._inflight.pop(c, None))
        yield shared
        shared.result()
        body = dag.reassemble(cid, lambda c: self.node.store.get(c, self.node.now))
        return Response(200, body, {
            "Content-Type": "application/octet-stream",
            "Content-Length": str(len(body)),
            "X-Content-Cid": cid.text,
        })

    def _shared(self, path: str):
        proc = self._paths.get(path)
        if proc is None:
            proc = self.loop.start(self._serve(path))
            self._paths[path] = proc
            proc.add_callback(lambda _f: self._paths.pop(path, None))
        return proc

    def handle_proc(self, path: str) -> Generator:
        """Process resolving to a :class:`Response`; never raises."""
        fut = self.node.sim.with_timeout(self._shared(path), self.request_timeout)
        try:
            yield fut
            return fut.result()
        except PstoreError as exc:
            return _error(status_for(exc), exc)
        except Exception as exc:  # noqa: BLE001 - mapped to 500
            log.exception("gateway internal error for %s", path)
            return _error(500, exc)

    def handle_get(self, path: str) -> Response:
        return self.loop.run(self.handle_proc(path))

    def handle_many(self, paths: list[str]) -> list[Response]:
        """Start every request at the same simulated instant and wait for all."""
        procs = [self.loop.start(self.handle_proc(p)) for p in paths]
        self.loop.run_future(self.loop.all_of(procs))
        return [p.result() for p in procs]


_STOP = object()


class GatewayService:
    """Threaded HTTP front end. One driver thread owns the simulator; HTTP
    threads hand requests to it through a queue, so node state stays single-writer."""

    def __init__(self, gateway: Gateway, config: GatewayConfig):
        self.gateway = gateway
        self.config = config
        self._commands: "queue.Queue" = queue.Queue()
        host, port = config.host_port
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def do_GET(self):  # noqa: N802 - http.server naming
                path = self.path.split("?", 1)[0]
                resp = service.submit(path).result()
                self.send_response(resp.status)
                for k, v in resp.headers.items():
                    self.send_header(k, v)
                self.end_headers()
                self.wfile.write(resp.body)

            def log_message(self, fmt, *args):
                log.debug("gateway: " + fmt, *args)

        try:
            self.server = ThreadingHTTPServer((host, port), Handler)
        except OSError as exc:
            raise PstoreError(f"cannot bind {config.listen_address}: {exc}", kind="address-in-use") from None
        self.server.daemon_threads = False
        self._driver = threading.Thread(target=self._drive, name="gateway-driver", daemon=True)
        self._http = threading.Thread(target=self.server.serve_forever, name="gateway-http", daemon=True)
        self.inflight = 0

    @property
    def address(self) -> tuple[str, int]:
        return self.server.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def submit(self, path: str) -> ThreadFuture:
        fut: ThreadFuture = ThreadFuture()
        self._commands.put((path, fut))
        return fut

    def _launch(self, cmd) -> None:
        path, tfut = cmd
        proc = self.gateway.loop.start(self.gateway.handle_proc(path))
        self.inflight += 1

        def done(p):
            self.inflight -= 1
            tfut.set_result(p.result())

        proc.add_callback(done)

    def _drive(self) -> None:
        loop = self.gateway.loop
        while True:
            if self.inflight == 0:
                cmd = self._commands.get()
                if cmd is _STOP:
                    return
                self._launch(cmd)
            while True:
                try:
                    cmd = self._commands.get_nowait()
                except queue.Empty:
                    break
                if cmd is _STOP:
                    self._commands.put(_STOP)  # finish in-flight work first
                    break
                self._launch(cmd)
            if self.inflight and not loop.step():
                break

    def start(self) -> "GatewayService":
        if self._driver.is_alive():
            return self
        self._driver.start()
        self._http.start()
        return self

    def stop(self) -> None:
        """Stop accepting, let in-flight requests finish, then stop the driver."""
        self.server.shutdown()
        self.server.server_close()
        self._commands.put(_STOP)
        self._driver.join(timeout=30)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(node, config: GatewayConfig = GatewayConfig()) -> GatewayService:
    return GatewayService(Gateway(node, config.request_timeout), config).start()

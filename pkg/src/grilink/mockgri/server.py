"""Threaded HTTP front end for :class:`~grilink.mockgri.world.MockGri`."""

from __future__ import annotations

import errno
import logging
import signal
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..errors import PortInUse
from .world import FixtureWorld, MockGri

log = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # Headers and body go out in separate writes; with Nagle on, keep-alive
    # clients stall on delayed ACKs for every response.
    disable_nagle_algorithm = True
    server: "_Server"

    def do_GET(self) -> None:  # noqa: N802 (stdlib naming)
        status, headers, body = self.server.mock.handle(self.path)
        self.send_response(status)
        for name, value in headers.items():
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt: str, *args) -> None:
        log.debug("mock %s", fmt % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, address, mock: MockGri):
        self.mock = mock
        super().__init__(address, _Handler)


@dataclass
class ServerHandle:
    server: _Server
    thread: threading.Thread

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    @property
    def mock(self) -> MockGri:
        return self.server.mock

    @property
    def request_log(self) -> list[str]:
        return self.server.mock.request_log

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(world: FixtureWorld | MockGri, port: int = 0, *, host: str = "127.0.0.1") -> ServerHandle:
    """Start serving ``world`` on a background thread. ``port=0`` picks a free port."""
    mock = world if isinstance(world, MockGri) else MockGri(world)
    try:
        server = _Server((host, port), mock)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {port} is already in use") from exc
        raise
    thread = threading.Thread(target=server.serve_forever, name="mockgri", daemon=True)
    thread.start()
    return ServerHandle(server, thread)


def serve_until_signal(handle: ServerHandle) -> None:
    """Block the main thread until SIGINT or SIGTERM, then shut down."""
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        handle.shutdown()

"""Run FastAPI apps under uvicorn, foreground or in a background thread."""

from __future__ import annotations

import threading
import time

import uvicorn
from fastapi import FastAPI


class ServerStartupError(RuntimeError):
    pass


class ServerHandle:
    def __init__(self, server: uvicorn.Server, thread: threading.Thread, url: str):
        self._server = server
        self._thread = thread
        self.url = url

    def stop(self, timeout: float = 5.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=timeout)


def split_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def start_server(app: FastAPI, host: str = "127.0.0.1", port: int = 0,
                 startup_timeout: float = 10.0) -> ServerHandle:
    """Start uvicorn in a daemon thread; port 0 binds an ephemeral port."""
    config = uvicorn.Config(app, host=host, port=port, log_level="warning",
                            access_log=False)
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True, name="uvicorn")
    thread.start()
    deadline = time.monotonic() + startup_timeout
    while not server.started:
        if not thread.is_alive() or time.monotonic() > deadline:
            raise ServerStartupError(f"server failed to start on {host}:{port}")
        time.sleep(0.01)
    bound_port = server.servers[0].sockets[0].getsockname()[1]
    return ServerHandle(server, thread, url=f"http://{host}:{bound_port}")


def run_server(app: FastAPI, addr: str) -> None:
    """Blocking serve for CLI entry points."""
    host, port = split_addr(addr)
    uvicorn.run(app, host=host, port=port, log_level="info")

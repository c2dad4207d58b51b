"""Process assembly for the pipeline service.

One process hosts the blob store REST API, the event bus, the trigger
engine, the orchestrator, and the compute pool, wired together
in-process: the store publishes events to the bus, the bus delivers to
trigger targets, triggers start orchestrator runs, and runs dispatch
Process/Render work onto the pool. The detector runs as a separate
process (`bloomstack serve detector`).

Configuration comes from an optional YAML file; STORE_ROOT and
STORE_ADDR env vars override, and PIPE_FAKE_CLOCK=1 swaps in the
manually advanced clock for deterministic experiments.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .clock import Clock, FakeClock, WallClock
from .events import (
    DEFAULT_MAX_DELIVERY_ATTEMPTS,
    DEFAULT_QUEUE_DEPTH,
    DEFAULT_RETRY_BACKOFF_S,
    EventBus,
)
from .orchestrator.api import create_orchestration_router
from .orchestrator.engine import (
    DEFAULT_MAX_CONCURRENT_RUNS,
    DEFAULT_RUN_TIMEOUT_S,
    Orchestrator,
)
from .pool import ComputePool, PoolConfig
from .store.api import create_store_app
from .store.core import DEFAULT_MAX_BLOB_BYTES, BlobStore
from .triggers import TriggerEngine

DEFAULT_STORE_ADDR = "127.0.0.1:9901"
DEFAULT_DETECTOR_ADDR = "127.0.0.1:9902"


@dataclass
class ServiceConfig:
    store_root: Path = Path("./data/store")
    store_addr: str = DEFAULT_STORE_ADDR
    store_latency_ms: float = 0.0
    max_blob_bytes: int = DEFAULT_MAX_BLOB_BYTES
    data_dir: Path = Path("./data")
    max_concurrent_runs: int = DEFAULT_MAX_CONCURRENT_RUNS
    run_timeout_s: float = DEFAULT_RUN_TIMEOUT_S
    bus_queue_depth: int = DEFAULT_QUEUE_DEPTH
    bus_retry_backoff_s: float = DEFAULT_RETRY_BACKOFF_S
    bus_max_delivery_attempts: int = DEFAULT_MAX_DELIVERY_ATTEMPTS
    pool: PoolConfig = field(default_factory=PoolConfig)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ServiceConfig":
        cfg = cls()
        if path is not None:
            raw: dict[str, Any] = yaml.safe_load(Path(path).read_text()) or {}
            store = raw.get("store", {})
            cfg.store_root = Path(store.get("root", cfg.store_root))
            cfg.store_addr = store.get("addr", cfg.store_addr)
            cfg.store_latency_ms = float(store.get("latency_ms", cfg.store_latency_ms))
            if "max_blob_mib" in store:
                cfg.max_blob_bytes = int(store["max_blob_mib"]) * 1024 * 1024
            orch = raw.get("orchestrator", {})
            cfg.data_dir = Path(orch.get("data_dir", cfg.data_dir))
            cfg.max_concurrent_runs = int(
                orch.get("max_concurrent_runs", cfg.max_concurrent_runs)
            )
            cfg.run_timeout_s = float(orch.get("run_timeout_s", cfg.run_timeout_s))
            bus = raw.get("bus", {})
            cfg.bus_queue_depth = int(bus.get("queue_depth", cfg.bus_queue_depth))
            cfg.bus_retry_backoff_s = float(
                bus.get("retry_backoff_ms", cfg.bus_retry_backoff_s * 1000)
            ) / 1000.0
            cfg.bus_max_delivery_attempts = int(
                bus.get("max_delivery_attempts", cfg.bus_max_delivery_attempts)
            )
            pool = raw.get("pool", {})
            if pool:
                cfg.pool = PoolConfig(
                    min_workers=int(pool.get("min_workers", 2)),
                    max_workers=int(pool.get("max_workers", 8)),
                    cold_start_ms=int(pool.get("cold_start_ms", 3000)),
                    idle_timeout_ms=int(pool.get("idle_timeout_ms", 60_000)),
                    tasks_per_worker=int(pool.get("tasks_per_worker", 4)),
                )
        # Environment wins over the file.
        if os.environ.get("STORE_ROOT"):
            cfg.store_root = Path(os.environ["STORE_ROOT"])
        if os.environ.get("STORE_ADDR"):
            cfg.store_addr = os.environ["STORE_ADDR"]
        return cfg


class PipelineService:
    def __init__(self, config: ServiceConfig | None = None, clock: Clock | None = None):
        self.config = config or ServiceConfig()
        if clock is None:
            clock = FakeClock() if os.environ.get("PIPE_FAKE_CLOCK") == "1" else WallClock()
        self.clock = clock
        self.bus = EventBus(
            queue_depth=self.config.bus_queue_depth,
            retry_backoff_s=self.config.bus_retry_backoff_s,
        )
        self.store = BlobStore(
            self.config.store_root,
            publish=self.bus.publish,
            max_blob_bytes=self.config.max_blob_bytes,
            clock=clock,
        )
        self.pool = ComputePool(self.config.pool, clock=clock)
        self.orchestrator = Orchestrator(
            self.store,
            self.pool,
            data_dir=self.config.data_dir,
            max_concurrent_runs=self.config.max_concurrent_runs,
            run_timeout_s=self.config.run_timeout_s,
            clock=clock,
        )
        self.engine = TriggerEngine(
            self.orchestrator, bus=self.bus, store=self.store, clock=clock
        )
        self.app = create_store_app(self.store, latency_s=self.config.store_latency_ms / 1000.0)
        self.app.include_router(
            create_orchestration_router(self.orchestrator, self.engine, self.pool, self.bus)
        )
        self._stop = threading.Event()
        self._maintenance: threading.Thread | None = None

    def start_maintenance(self, interval_s: float = 0.5) -> None:
        """Drive schedule ticks, pool autoscale, and idle termination."""
        if self._maintenance is not None:
            return

        def loop() -> None:
            while not self._stop.wait(interval_s):
                try:
                    self.engine.tick(self.clock.now_utc())
                    self.pool.autoscale_step()
                    self.pool.tick_idle()
                except Exception:  # keep the service alive
                    import logging

                    logging.getLogger(__name__).exception("maintenance tick failed")

        self._maintenance = threading.Thread(target=loop, daemon=True, name="maintenance")
        self._maintenance.start()

    def close(self) -> None:
        self._stop.set()
        if self._maintenance is not None:
            self._maintenance.join(timeout=2.0)
        self.orchestrator.close()
        self.bus.close()
        self.pool.close()

"""Shared fixtures: bundled images and the in-process service stack."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from bloomstack.client import OrchClient, StoreClient
from bloomstack.detector.backends import MockBackend, ThresholdBackend
from bloomstack.detector.service import create_detector_app
from bloomstack.pool import PoolConfig
from bloomstack.service import PipelineService, ServiceConfig
from bloomstack.serving import ServerHandle, start_server

FIXTURES = Path(__file__).parent / "fixtures"

TEST_KEY = "test-key-1f2e3d"
CONTAINERS = ("stream", "batch", "work", "output")


@pytest.fixture(scope="session")
def field_jpeg() -> bytes:
    return (FIXTURES / "field_530x144.jpg").read_bytes()


@pytest.fixture(scope="session")
def two_squares_png() -> bytes:
    return (FIXTURES / "two_squares.png").read_bytes()


def bloom_pipeline(detector_url: str) -> dict:
    """The standard Copy -> compress -> Infer -> Render pipeline."""
    return {
        "name": "bloom-detect",
        "parameters": [{"name": "folder"}, {"name": "file"}],
        "activities": [
            {
                "name": "copy-input",
                "kind": "Copy",
                "config": {
                    "source": {"container_expr": "@param.folder", "path_expr": "@param.file"},
                    "sink": {"container_expr": "work", "path_expr": "@param.file"},
                },
            },
            {
                "name": "compress",
                "kind": "Process",
                "config": {"op": "compress", "params": {"quality": 30}},
            },
            {
                "name": "infer",
                "kind": "Infer",
                "config": {
                    "endpoint": f"{detector_url}/v1/score",
                    "auth_key_ref": "DETECTOR_KEY",
                    "timeout_ms": 10_000,
                    "sink": {"container_expr": "output", "path_expr": "@param.file + '.json'"},
                },
            },
            {
                "name": "render",
                "kind": "Render",
                "config": {
                    "detections_from": "infer",
                    "sink": {"container_expr": "output", "path_expr": "@param.file"},
                },
            },
        ],
    }


@dataclass
class Stack:
    service: PipelineService
    pipeline_server: ServerHandle
    detector_server: ServerHandle

    @property
    def store_url(self) -> str:
        return self.pipeline_server.url

    @property
    def detector_url(self) -> str:
        return self.detector_server.url

    def store_client(self) -> StoreClient:
        return StoreClient(self.store_url)

    def orch_client(self) -> OrchClient:
        return OrchClient(self.store_url)

    def close(self) -> None:
        self.pipeline_server.stop()
        self.detector_server.stop()
        self.service.close()


@pytest.fixture
def stack_factory(tmp_path, monkeypatch):
    stacks: list[Stack] = []

    def build(
        backend: str = "mock",
        latency_ms: float = 0.0,
        pool: PoolConfig | None = None,
        max_concurrent_runs: int = 8,
        run_timeout_s: float = 60.0,
        warm: bool = True,
        apply_pipeline: bool = True,
    ) -> Stack:
        monkeypatch.setenv("DETECTOR_KEY", TEST_KEY)
        monkeypatch.delenv("PIPE_FAKE_CLOCK", raising=False)
        config = ServiceConfig(
            store_root=tmp_path / f"store{len(stacks)}",
            data_dir=tmp_path / f"data{len(stacks)}",
            store_latency_ms=latency_ms,
            max_concurrent_runs=max_concurrent_runs,
            run_timeout_s=run_timeout_s,
            pool=pool or PoolConfig(cold_start_ms=150, idle_timeout_ms=60_000),
        )
        service = PipelineService(config)
        for name in CONTAINERS:
            service.store.create_container(name)
        if backend == "mock":
            detector = MockBackend.from_file(FIXTURES / "mock_detections.json")
        else:
            detector = ThresholdBackend()
        detector_server = start_server(create_detector_app(detector, [TEST_KEY]))
        pipeline_server = start_server(service.app)
        stack = Stack(service, pipeline_server, detector_server)
        stacks.append(stack)
        if apply_pipeline:
            from bloomstack.orchestrator.model import PipelineDefinition

            service.orchestrator.apply_pipeline(
                PipelineDefinition.from_json(bloom_pipeline(stack.detector_url))
            )
        if warm:
            service.pool.warm_up()
        return stack

    yield build
    for stack in stacks:
        stack.close()

"""Operator CLI.

Command groups: store, pipeline, trigger, run, runs, pool, serve, plus
ingest / bench / eval. Exit codes: 0 success, 1 operational error,
2 usage error. Every data-bearing command supports --json for scripting.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import client as client_mod
from .client import BenchReport, IngestPlan, OrchClient, StoreClient
from .evaluation import EvaluationError, evaluate_corpus
from .store.core import StoreError


@dataclass
class CliState:
    store_url: str
    orch_url: str
    detector_url: str
    as_json: bool

    def store(self) -> StoreClient:
        return StoreClient(self.store_url)

    def orch(self) -> OrchClient:
        return OrchClient(self.orch_url)


_OPERATIONAL_ERRORS = (
    client_mod.ClientError,
    client_mod.StoreUnreachable,
    StoreError,
    EvaluationError,
    OSError,
    ValueError,
)


def _run(state: CliState, fn):
    try:
        return fn()
    except _OPERATIONAL_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


def _emit(state: CliState, data, human=None) -> None:
    if state.as_json or human is None:
        click.echo(json.dumps(data, indent=2, default=str))
    else:
        human(data)


@click.group()
@click.option("--store-url", envvar="PIPE_STORE_URL", default="http://127.0.0.1:9901",
              show_default=True, help="Blob store base URL.")
@click.option("--orch-url", envvar="PIPE_ORCH_URL", default=None,
              help="Orchestrator base URL [default: the store URL].")
@click.option("--detector-url", envvar="PIPE_DETECTOR_URL", default="http://127.0.0.1:9902",
              show_default=True, help="Detector service base URL.")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of tables.")
@click.pass_context
def main(ctx, store_url, orch_url, detector_url, as_json):
    """Operate the lambda-architecture image pipeline."""
    ctx.obj = CliState(
        store_url=store_url,
        orch_url=orch_url or store_url,
        detector_url=detector_url,
        as_json=as_json,
    )


# -- store ---------------------------------------------------------------


@main.group()
def store():
    """Blob store operations."""


@store.command("mkcontainer")
@click.argument("name")
@click.pass_obj
def store_mkcontainer(state: CliState, name):
    _run(state, lambda: state.store().create_container(name))
    click.echo(f"created container {name}")


@store.command("put")
@click.option("--container", required=True)
@click.option("--path", required=True)
@click.argument("file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_obj
def store_put(state: CliState, container, path, file):
    data = file.read_bytes()
    result = _run(
        state,
        lambda: state.store().put_blob(container, path, data, client_mod.content_type_for(file)),
    )
    _emit(state, result, lambda r: click.echo(f"{r['container']}/{r['path']} v{r['version']} ({r['size']} bytes)"))


@store.command("get")
@click.option("--container", required=True)
@click.option("--path", required=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_obj
def store_get(state: CliState, container, path, out):
    data, _ = _run(state, lambda: state.store().get_blob(container, path))
    if out is None:
        sys.stdout.buffer.write(data)
    else:
        out.write_bytes(data)
        click.echo(f"wrote {len(data)} bytes to {out}")


@store.command("ls")
@click.option("--container", required=True)
@click.option("--prefix", default="")
@click.pass_obj
def store_ls(state: CliState, container, prefix):
    entries = _run(state, lambda: state.store().list_blobs(container, prefix))

    def human(rows):
        for e in rows:
            click.echo(f"{e['size']:>10}  {e['created_at']}  {e['path']}")

    _emit(state, entries, human)


@store.command("rm")
@click.option("--container", required=True)
@click.option("--path", required=True)
@click.pass_obj
def store_rm(state: CliState, container, path):
    _run(state, lambda: state.store().delete_blob(container, path))
    click.echo(f"deleted {container}/{path}")


# -- pipeline / trigger -----------------------------------------------------


@main.group()
def pipeline():
    """Pipeline definitions."""


@pipeline.command("apply")
@click.option("-f", "--file", "path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_obj
def pipeline_apply(state: CliState, path):
    definition = json.loads(path.read_text())
    result = _run(state, lambda: state.orch().apply_pipeline(definition))
    click.echo(f"applied pipeline {result['name']}")


@pipeline.command("ls")
@click.pass_obj
def pipeline_ls(state: CliState):
    items = _run(state, lambda: state.orch().list_pipelines())
    _emit(state, items, lambda rows: [
        click.echo(f"{p['name']}  ({len(p['activities'])} activities)") for p in rows
    ])


@main.group()
def trigger():
    """Event and schedule triggers."""


@trigger.command("apply")
@click.option("-f", "--file", "path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_obj
def trigger_apply(state: CliState, path):
    spec = json.loads(path.read_text())
    result = _run(state, lambda: state.orch().apply_trigger(spec))
    click.echo(f"registered trigger {result['name']}")


@trigger.command("enable")
@click.argument("name")
@click.pass_obj
def trigger_enable(state: CliState, name):
    _run(state, lambda: state.orch().set_trigger_enabled(name, True))
    click.echo(f"enabled {name}")


@trigger.command("disable")
@click.argument("name")
@click.pass_obj
def trigger_disable(state: CliState, name):
    _run(state, lambda: state.orch().set_trigger_enabled(name, False))
    click.echo(f"disabled {name}")


@trigger.command("ls")
@click.pass_obj
def trigger_ls(state: CliState):
    items = _run(state, lambda: state.orch().list_triggers())

    def human(rows):
        for t in rows:
            flag = "enabled" if t.get("enabled") else "disabled"
            extra = f" next={t['next_fire_at']}" if "next_fire_at" in t else ""
            click.echo(f"{t['name']}  {t['kind']}  -> {t['pipeline']}  [{flag}]{extra}")

    _emit(state, items, human)


# -- runs ---------------------------------------------------------------------


@main.group()
def run():
    """Start pipeline runs."""


@run.command("start")
@click.argument("pipeline_name")
@click.option("--param", "params", multiple=True, help="name=value, repeatable.")
@click.pass_obj
def run_start(state: CliState, pipeline_name, params):
    parameters = {}
    for item in params:
        name, sep, value = item.partition("=")
        if not sep:
            raise click.UsageError(f"--param must be name=value, got {item!r}")
        parameters[name] = value
    run_id = _run(state, lambda: state.orch().start_run(pipeline_name, parameters))
    _emit(state, {"run_id": run_id}, lambda d: click.echo(d["run_id"]))


@main.group()
def runs():
    """Inspect run history."""


@runs.command("ls")
@click.option("--pipeline", default=None)
@click.option("--status", default=None)
@click.option("--since", default=None, help="RFC 3339 lower bound.")
@click.option("--limit", default=50, show_default=True)
@click.pass_obj
def runs_ls(state: CliState, pipeline, status, since, limit):
    rows = _run(
        state,
        lambda: state.orch().list_runs(pipeline=pipeline, status=status, since=since, limit=limit),
    )

    def human(items):
        for r in items:
            click.echo(f"{r['run_id']}  {r['status']:<10}  {r['pipeline']}  {r['created_at']}")

    _emit(state, rows, human)


@runs.command("show")
@click.argument("run_id")
@click.pass_obj
def runs_show(state: CliState, run_id):
    _emit(state, _run(state, lambda: state.orch().get_run(run_id)))


@runs.command("dead-letters")
@click.pass_obj
def runs_dead_letters(state: CliState, ):
    records = _run(state, lambda: state.orch().dead_letters())
    # JSON lines, one record each, for piping into other tools.
    for record in records:
        click.echo(json.dumps(record, separators=(",", ":")))


@main.group()
def pool():
    """Compute pool state."""


@pool.command("status")
@click.pass_obj
def pool_status(state: CliState):
    data = _run(state, lambda: state.orch().pool_state())
    _emit(state, data, lambda d: click.echo(
        f"{d['phase']}: workers={d['active_workers']} queued={d['queued_tasks']} running={d['running_tasks']}"
    ))


# -- ingest / bench / eval ------------------------------------------------------


@main.command("ingest")
@click.option("--dir", "source_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--container", required=True)
@click.option("--prefix", default="")
@click.option("--mode", type=click.Choice(["sync", "async"]), default="sync", show_default=True)
@click.option("--concurrency", default=64, show_default=True)
@click.pass_obj
def ingest_cmd(state: CliState, source_dir, container, prefix, mode, concurrency):
    """Upload a directory of files into a container."""
    plan = IngestPlan(mode=mode, source_dir=source_dir, container=container,
                      prefix=prefix, concurrency=concurrency)
    summary = _run(state, lambda: client_mod.ingest(plan, state.store_url))
    failures = [r for r in summary.results if not r.ok]
    _emit(state, summary.to_json(), lambda d: click.echo(
        f"{d['mode']}: {d['succeeded']}/{d['file_count']} files "
        f"({d['total_bytes']} bytes) in {d['wall_s']:.2f}s"
    ))
    if failures:
        for r in failures[:10]:
            click.echo(f"failed: {r.rel_path} ({r.status_code or r.error})", err=True)
        sys.exit(1)


@main.group()
def bench():
    """Benchmarks."""


@bench.command("ingest")
@click.option("--dir", "source_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--container", required=True)
@click.option("--concurrency", default=64, show_default=True)
@click.option("--latency-ms", default=0.0, show_default=True,
              help="Per-request latency the store was started with.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_obj
def bench_ingest_cmd(state: CliState, source_dir, container, concurrency, latency_ms, out):
    """Sync-vs-async ingestion benchmark against a cleaned container."""
    report: BenchReport = _run(
        state,
        lambda: client_mod.bench_ingest(
            state.store_url, source_dir, container, concurrency, latency_ms
        ),
    )
    payload = report.to_json()
    if out is not None:
        out.write_text(json.dumps(payload, indent=2) + "\n")
    _emit(state, payload, lambda d: click.echo(
        f"sync {d['sync']['wall_s']:.2f}s vs async {d['async']['wall_s']:.2f}s "
        f"-> speedup {d['speedup']:.1f}x (max in-flight {d['max_inflight']})"
    ))


@main.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--gt", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--iou", default=0.55, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--strict", is_flag=True, help="Fail on predictions for unknown images.")
@click.pass_obj
def eval_cmd(state: CliState, pred, gt, iou, out, strict):
    """Evaluate detection JSON files against ground-truth annotations."""
    report = _run(state, lambda: evaluate_corpus(pred, gt, iou, strict=strict, out_path=out))
    _emit(state, report.to_json(), lambda d: click.echo(
        f"tp={d['tp']} fp={d['fp']} fn={d['fn']}  "
        f"precision={d['precision']:.4f} recall={d['recall']:.4f} "
        f"f1={d['f1']:.4f} mAP@{d['iou_threshold']}={d['map']:.4f}"
    ))


# -- serve ------------------------------------------------------------------


@main.group()
def serve():
    """Run services in the foreground."""


@serve.command("pipeline")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="YAML config (store/pool/bus/orchestrator sections).")
@click.option("--addr", default=None, help="Listen address, overrides config/STORE_ADDR.")
def serve_pipeline(config_path, addr):
    """Serve the store + orchestrator API and the trigger scheduler."""
    from .service import PipelineService, ServiceConfig
    from .serving import run_server

    config = ServiceConfig.load(config_path)
    if addr:
        config.store_addr = addr
    service = PipelineService(config)
    service.start_maintenance()
    try:
        run_server(service.app, config.store_addr)
    finally:
        service.close()


@serve.command("detector")
@click.option("--addr", default=None, help="Listen address, overrides DETECTOR_ADDR.")
def serve_detector(addr):
    """Serve the detection API (configured via DETECTOR_* env vars)."""
    import os

    from .detector.service import create_detector_app_from_env
    from .serving import run_server

    from .service import DEFAULT_DETECTOR_ADDR

    app = create_detector_app_from_env()
    run_server(app, addr or os.environ.get("DETECTOR_ADDR", DEFAULT_DETECTOR_ADDR))


if __name__ == "__main__":
    main()

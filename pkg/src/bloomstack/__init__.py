"""Local lambda-architecture pipeline for image-based bloom detection.

Subsystems: a filesystem-backed blob store with lifecycle events, an
in-process event bus, event/CRON trigger engine, a linear-activity run
orchestrator backed by a simulated compute pool, imaging primitives, a
pluggable HTTP detection service, detection-quality evaluation, and an
operator CLI with sync/async ingestion benchmarking.
"""

__version__ = "0.1.0"

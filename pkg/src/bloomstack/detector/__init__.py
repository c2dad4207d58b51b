from .backends import (
    DetectorBackend,
    FixtureError,
    MockBackend,
    ThresholdBackend,
    ThresholdParams,
)
from .service import create_detector_app, create_detector_app_from_env

__all__ = [
    "DetectorBackend",
    "FixtureError",
    "MockBackend",
    "ThresholdBackend",
    "ThresholdParams",
    "create_detector_app",
    "create_detector_app_from_env",
]

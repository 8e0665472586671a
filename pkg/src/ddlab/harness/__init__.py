"""Configuration, verification suites, sweeps and the command line."""

from .config import DEFAULTS, resolve
from .runner import RunRecord, bounds_record, run_suite, suite_config, sweep
from .suites import REGISTRY, REQUIRED_SUITES, SuiteResult, get_suite

__all__ = [
    "DEFAULTS",
    "REGISTRY",
    "REQUIRED_SUITES",
    "RunRecord",
    "SuiteResult",
    "bounds_record",
    "get_suite",
    "resolve",
    "run_suite",
    "suite_config",
    "sweep",
]

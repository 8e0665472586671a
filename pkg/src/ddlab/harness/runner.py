"""Run suites, collect run records and write deterministic CSV tables."""

from __future__ import annotations

import copy
import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .. import bounds
from ..errors import HypothesisError, KernelError, NumericError, SupportError, UsageError
from . import config as cfgmod
from .suites import SuiteResult, check_mode, get_suite

OUTPUT_ENV = "DDLAB_OUTPUT_DIR"
TIMINGS_ENV = "DDLAB_TIMINGS"
DEFAULT_OUTPUT = "ddlab_output"
RESULT_COLUMNS = ("suite", "check", "lhs", "rhs", "margin", "prior_term", "loss_term", "l3_term", "runtime_ms", "status")


@dataclass
class RunRecord:
    suite: str
    config: dict
    checks: list = field(default_factory=list)
    losses: Optional[dict] = None
    coupling: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)
    runtime_ms: float = 0.0
    error: Optional[str] = None
    numeric_error: bool = False

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    @property
    def status(self) -> str:
        if self.numeric_error:
            return "ERROR"
        return "PASS" if self.passed else "FAIL"

    @property
    def headline(self):
        return self.checks[0] if self.checks else None


def suite_config(name: str, *layers) -> dict:
    """Suite defaults under user layers (file contents, overrides)."""
    s = get_suite(name)
    cfg = cfgmod.resolve(s.defaults, *layers)
    check_mode(s, cfg)
    return cfg


def run_suite(name: str, cfg: dict) -> RunRecord:
    """Execute one suite on a resolved configuration.

    Hypothesis violations become FAIL records; numeric errors propagate.
    """
    s = get_suite(name)
    check_mode(s, cfg)
    t0 = time.perf_counter()
    record = RunRecord(name, copy.deepcopy(cfg))
    try:
        result: SuiteResult = s.func(cfg)
    except HypothesisError as exc:
        record.error = f"hypothesis: {exc}"
    else:
        record.checks = result.checks
        record.losses = result.losses
        record.coupling = result.coupling
        record.diagnostics = result.diagnostics
    record.runtime_ms = 1000.0 * (time.perf_counter() - t0)
    return record


def bounds_record(cfg: dict) -> RunRecord:
    """Single pipeline run with the TV bound and every configured IPM bound."""
    t0 = time.perf_counter()
    record = RunRecord("bounds", copy.deepcopy(cfg))
    run = bounds.run_pipeline(
        cfgmod.build_rate(cfg),
        cfgmod.build_data(cfg),
        epsilon=float(cfg["perturbation"]["epsilon"]),
        seed=int(cfg["perturbation"]["seed"]),
        mode=cfg["perturbation"]["mode"],
        start=cfg["start"],
        steps_per_unit_beta=cfg["integrator"]["steps_per_unit_beta"],
    )
    try:
        record.checks = [bounds.corollary_tv_check(run)]
        for name in cfg["metrics"]:
            ipm = cfgmod.metric_spec(name)
            if ipm.applicable(run.spec.space):
                record.checks.append(bounds.corollary_spec_check(run, ipm))
    except HypothesisError as exc:
        record.error = f"hypothesis: {exc}"
    record.losses = run.losses.as_dict()
    record.runtime_ms = 1000.0 * (time.perf_counter() - t0)
    return record


# --- formatting --------------------------------------------------------------


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) or hasattr(value, "dtype"):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def timings_enabled(flag: Optional[bool] = None) -> bool:
    if flag is not None:
        return flag
    return os.environ.get(TIMINGS_ENV, "") not in ("", "0")


def check_row(record: RunRecord, check, timings: bool) -> dict:
    row = dict(cfgmod.flatten(record.config))
    comp = check.components if check is not None else {}
    row.update(
        {
            "suite": record.suite,
            "check": check.theorem_id if check is not None else "",
            "lhs": check.lhs if check is not None else None,
            "rhs": check.rhs if check is not None else None,
            "margin": check.margin if check is not None else None,
            "prior_term": comp.get("prior_term"),
            "loss_term": comp.get("loss_term"),
            "l3_term": comp.get("l3_term"),
            "runtime_ms": record.runtime_ms if timings else None,
        }
    )
    if check is None:
        row["status"] = record.status
    elif record.numeric_error:
        row["status"] = "ERROR"
    else:
        row["status"] = "PASS" if check.passed and record.error is None else "FAIL"
    return row


def record_rows(record: RunRecord, timings: bool = False) -> list:
    if not record.checks:
        return [check_row(record, None, timings)]
    return [check_row(record, c, timings) for c in record.checks]


def headline_row(record: RunRecord, timings: bool = False) -> dict:
    row = check_row(record, record.headline, timings)
    row["status"] = record.status
    return row


def columns_for(cfg: dict) -> list:
    return sorted(cfgmod.flatten(cfg)) + list(RESULT_COLUMNS)


class CsvSink:
    """Writes rows to a CSV file as they arrive, so partial tables survive failures."""

    def __init__(self, path: str, columns):
        self.path = path
        self.columns = list(columns)
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)
        self._fh.flush()

    def write(self, row: dict):
        self._writer.writerow([fmt(row.get(c)) for c in self.columns])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def summary_lines(record: RunRecord, timings: bool = False) -> list:
    lines = []
    for c in record.checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"  {status} {c.theorem_id}: lhs={c.lhs:.6e} rhs={c.rhs:.6e} margin={c.margin:.6e}")
    if record.error:
        lines.append(f"  FAIL {record.error}")
    tail = f" in {record.runtime_ms:.0f} ms" if timings else ""
    lines.append(f"{record.suite}: {record.status} ({len(record.checks)} checks){tail}")
    return lines


def output_dir(cli_value: Optional[str], cfg: Optional[dict]) -> str:
    if cli_value:
        return cli_value
    if cfg and cfg.get("output_path"):
        return cfg["output_path"]
    return os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)


# --- sweeps ------------------------------------------------------------------


def _sweep_row(args):
    suite, cfg = args
    try:
        return run_suite(suite, cfg)
    except (NumericError, SupportError, KernelError) as exc:
        rec = RunRecord(suite, cfg, error=f"numeric: {exc}", numeric_error=True)
        return rec


def sweep_configs(template: dict, suite: str, axis: str, values) -> list:
    """One resolved config per value, validated before any row runs."""
    out = []
    for v in values:
        layer = cfgmod.set_path(copy.deepcopy(template), axis, v)
        cfg = cfgmod.resolve(get_suite(suite).defaults, layer)
        check_mode(get_suite(suite), cfg)
        out.append(cfg)
    return out


def sweep(template: dict, suite: str, axis: str, values, path: str, workers: int = 1, timings: bool = False):
    """Run ``suite`` once per axis value; returns the records in input order."""
    cfgs = sweep_configs(template, suite, axis, values)
    columns = columns_for(cfgs[0])
    records = []
    with CsvSink(path, columns) as sink:
        jobs = [(suite, c) for c in cfgs]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(_sweep_row, jobs):
                    sink.write(headline_row(rec, timings))
                    records.append(rec)
        else:
            for job in jobs:
                rec = _sweep_row(job)
                sink.write(headline_row(rec, timings))
                records.append(rec)
    return records


def parse_values(text: str) -> list:
    if not text:
        raise UsageError("--values must list at least one value")
    return [cfgmod.parse_value(v.strip()) for v in text.split(",")]

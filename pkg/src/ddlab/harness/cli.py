"""Command line entry point: ``ddlab verify | sweep | bounds | couple``."""

from __future__ import annotations

import argparse
import os
import sys

from ..errors import (
    CapacityError,
    DomainError,
    HypothesisError,
    KernelError,
    ModeError,
    NumericError,
    SupportError,
    UsageError,
)
from . import config as cfgmod
from . import runner
from .suites import REGISTRY, get_suite

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddlab", description="Exact verification of discrete diffusion error bounds.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="YAML configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted override, repeatable")
        sp.add_argument("--output-dir", help=f"directory for CSV output (default ${runner.OUTPUT_ENV} or ./{runner.DEFAULT_OUTPUT})")
        sp.add_argument("--timings", action="store_true", help="fill runtime_ms (output no longer byte-stable)")

    v = sub.add_parser("verify", help="run one verification suite")
    v.add_argument("suite", help=f"one of: {', '.join(sorted(REGISTRY))}")
    common(v)

    s = sub.add_parser("sweep", help="run a suite across values of one config key")
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma separated")
    s.add_argument("--suite", help="suite to sweep (default: first entry of config 'suites')")
    s.add_argument("--workers", type=int, default=1)
    common(s)

    b = sub.add_parser("bounds", help="single pipeline run, print every bound report")
    common(b, config_required=True)

    c = sub.add_parser("couple", help="synchronous coupling estimate for the uniform rate")
    c.add_argument("--trials", type=int, required=True)
    common(c, config_required=True)
    return p


def _layers(args) -> list:
    file_cfg = cfgmod.load_file(args.config) if args.config else {}
    return [file_cfg, cfgmod.apply_overrides({}, args.set)]


def _emit(records, path, rows, columns, timings):
    with runner.CsvSink(path, columns) as sink:
        for r in rows:
            sink.write(r)
    for rec in records:
        for line in runner.summary_lines(rec, timings):
            print(line)
    print(f"wrote {path}")


def _exit_for(records) -> int:
    if any(r.numeric_error for r in records):
        return EXIT_NUMERIC
    return EXIT_PASS if all(r.passed for r in records) else EXIT_FAIL


def cmd_verify(args) -> int:
    cfg = runner.suite_config(args.suite, *_layers(args))
    timings = runner.timings_enabled(args.timings or None)
    rec = runner.run_suite(args.suite, cfg)
    path = os.path.join(runner.output_dir(args.output_dir, cfg), f"verify_{args.suite}.csv")
    _emit([rec], path, runner.record_rows(rec, timings), runner.columns_for(cfg), timings)
    return _exit_for([rec])


def cmd_sweep(args) -> int:
    file_cfg, over = _layers(args)
    template = cfgmod.deep_merge(file_cfg, over)
    name = args.suite or (template.get("suites") or cfgmod.DEFAULTS["suites"])[0]
    get_suite(name)
    values = runner.parse_values(args.values)
    timings = runner.timings_enabled(args.timings or None)
    out = runner.output_dir(args.output_dir, template)
    path = os.path.join(out, f"sweep_{name}_{args.axis}.csv")
    records = runner.sweep(template, name, args.axis, values, path, workers=max(1, args.workers), timings=timings)
    for v, rec in zip(values, records):
        h = rec.headline
        if h is None:
            print(f"{args.axis}={v}: {rec.status} {rec.error or ''}".rstrip())
        else:
            print(f"{args.axis}={v}: {rec.status} lhs={h.lhs:.6e} rhs={h.rhs:.6e} margin={h.margin:.6e}")
    print(f"wrote {path}")
    return _exit_for(records)


def cmd_bounds(args) -> int:
    cfg = cfgmod.resolve(*_layers(args))
    timings = runner.timings_enabled(args.timings or None)
    rec = runner.bounds_record(cfg)
    path = os.path.join(runner.output_dir(args.output_dir, cfg), "bounds.csv")
    _emit([rec], path, runner.record_rows(rec, timings), runner.columns_for(cfg), timings)
    return _exit_for([rec])


def cmd_couple(args) -> int:
    if args.trials <= 0:
        raise UsageError("--trials must be positive")
    file_cfg, over = _layers(args)
    over = cfgmod.deep_merge(over, {"trials": args.trials})
    cfg = runner.suite_config("thm_c1", file_cfg, over)
    timings = runner.timings_enabled(args.timings or None)
    rec = runner.run_suite("thm_c1", cfg)
    if rec.coupling:
        info = rec.coupling
        print(
            f"trials={info['trials']} disagreements={info['disagreements']} "
            f"p_hat={info['p_hat']:.6e} std_err={info['std_err']:.6e} oracle={info['oracle']:.6e}"
        )
    path = os.path.join(runner.output_dir(args.output_dir, cfg), "couple.csv")
    _emit([rec], path, runner.record_rows(rec, timings), runner.columns_for(cfg), timings)
    return _exit_for([rec])


COMMANDS = {"verify": cmd_verify, "sweep": cmd_sweep, "bounds": cmd_bounds, "couple": cmd_couple}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HypothesisError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (NumericError, SupportError, KernelError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, ModeError, CapacityError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line harness: seeded runs, batch experiments, verification.

Subcommands
-----------
run          one seeded realization, printed as a JSON record
experiment   M independent realizations -> CSV of runs + JSON report
analyze      recompute the JSON report from an existing CSV
verify       the analytic verification suite (quick | full)

Configuration comes from a flat ``key = value`` text file and/or flags
(flags win).  Per-run streams are derived as stream_index = run_index, so a
single run from an experiment can be replayed exactly with
``amsplit run --stream-index <m>``.  Batch output is a pure function of
(config, master_seed): identical whatever the worker count.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime or
verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, stats, verify
from .ams import (
    AmsParams,
    IterationCapExceeded,
    InvalidParams,
    run_ams,
    run_ams_batch,
)
from .sampling import DomainError, RngStream, make_distribution

__all__ = ["ExperimentConfig", "parse_config", "serialize_config", "main"]

WORKERS_ENV_VAR = "AMSPLIT_WORKERS"

CSV_COLUMNS = ("run_index", "seed_index", "p_hat", "iterations", "corrector")


class UsageError(Exception):
    """Bad flags, bad config file, or inconsistent parameters (exit 1)."""


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; mirrors the CLI flags one to one."""

    distribution: str = "exponential"
    dist_params: tuple = ()
    a: float = 6.0
    x: float = 0.0
    n: int = 100
    k: int = 1
    num_runs: int = 1
    master_seed: int = 0
    true_p: Optional[float] = None
    output_path: str = "experiment"
    workers: int = field(default_factory=default_workers)

    def validate(self) -> None:
        if not 1 <= self.k <= self.n - 1:
            raise UsageError(f"need 1 <= k <= n-1, got k={self.k}, n={self.n}")
        if self.num_runs < 1:
            raise UsageError(f"num_runs must be >= 1, got {self.num_runs}")
        if self.workers < 1:
            raise UsageError(f"workers must be >= 1, got {self.workers}")
        if self.true_p is not None and not 0.0 < self.true_p < 1.0:
            raise UsageError(f"true_p must lie in (0, 1), got {self.true_p}")
        try:
            make_distribution(self.distribution, self.dist_params)
        except (DomainError, TypeError) as exc:
            raise UsageError(str(exc)) from None


_CONFIG_FIELDS = [f.name for f in fields(ExperimentConfig)]


def serialize_config(config: ExperimentConfig) -> str:
    """Flat key = value rendering; parse_config inverts it exactly."""
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(float(v)) for v in value)
            if not value:
                continue
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat key = value format (``#`` starts a comment)."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_FIELDS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        values[key] = val
    kwargs: dict = {}
    for key, val in values.items():
        if key == "distribution" or key == "output_path":
            kwargs[key] = val
        elif key == "dist_params":
            kwargs[key] = tuple(float(v) for v in val.split(",") if v.strip())
        elif key in ("n", "k", "num_runs", "master_seed", "workers"):
            kwargs[key] = int(val)
        else:  # a, x, true_p
            kwargs[key] = float(val)
    return ExperimentConfig(**kwargs)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        config = parse_config(text)
    else:
        config = ExperimentConfig()
    overrides = {
        "distribution": args.distribution,
        "dist_params": (
            tuple(float(v) for v in args.dist_params.split(",") if v.strip())
            if args.dist_params is not None
            else None
        ),
        "a": args.a,
        "x": args.x,
        "n": args.n,
        "k": args.k,
        "num_runs": getattr(args, "num_runs", None),
        "master_seed": args.master_seed,
        "true_p": args.true_p,
        "output_path": getattr(args, "output", None),
        "workers": getattr(args, "workers", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    config.validate()
    return config


def _fmt(x: float) -> str:
    """17 significant digits: enough for a bit-faithful float round-trip."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    dist = make_distribution(config.distribution, config.dist_params)
    params = AmsParams(
        n=config.n,
        k=config.k,
        a=config.a,
        x=config.x,
        seed=RngStream(config.master_seed, args.stream_index),
    )
    result = run_ams(params, dist)
    if 0.0 < result.estimate < 1.0:
        lo, hi = analysis.confidence_interval(result.estimate, config.n, 0.05)
    else:  # trivial run (x >= a): zero-width interval at 1
        lo = hi = result.estimate
    record = {
        "p_hat": result.estimate,
        "iterations": result.iterations,
        "corrector": result.corrector,
        "ci_low": lo,
        "ci_high": hi,
        "n": config.n,
        "k": config.k,
        "a": config.a,
        "x": config.x,
        "distribution": dist.label,
        "master_seed": config.master_seed,
        "stream_index": args.stream_index,
    }
    print(json.dumps(record))
    return 0


def _write_csv(path: Path, indices: np.ndarray, p_hat, iterations, corrector) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i, ph, it, co in zip(indices, p_hat, iterations, corrector):
            writer.writerow([int(i), int(i), _fmt(ph), int(it), _fmt(co)])


def _write_plot_data(stem: Path, report) -> None:
    """Two-column gnuplot-ready data: histogram and Q-Q of the normalized sample."""
    if report.hist_counts:
        edges, counts = report.hist_edges, report.hist_counts
        lines = [
            f"{_fmt((lo + hi) / 2.0)} {c}"
            for lo, hi, c in zip(edges, edges[1:], counts)
        ]
        stem.with_suffix(".hist.dat").write_text("\n".join(lines) + "\n")
    if report.qq_pairs:
        lines = [f"{_fmt(t)} {_fmt(e)}" for t, e in report.qq_pairs]
        stem.with_suffix(".qq.dat").write_text("\n".join(lines) + "\n")


def cmd_experiment(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    dist = make_distribution(config.distribution, config.dist_params)
    batch = run_ams_batch(
        dist,
        n=config.n,
        k=config.k,
        a=config.a,
        x=config.x,
        num_runs=config.num_runs,
        master_seed=config.master_seed,
        workers=config.workers,
    )
    ok = batch.ok
    indices = np.nonzero(ok)[0]
    if indices.size < 1:
        print(
            f"error: none of the {config.num_runs} runs completed; "
            f"failures: {batch.failures[:5]}",
            file=sys.stderr,
        )
        return 2
    out = Path(config.output_path)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    report_path = out.with_suffix(".report.json")
    _write_csv(csv_path, indices, batch.p_hat[ok], batch.iterations[ok],
               batch.corrector[ok])
    report = stats.make_experiment_report(
        batch.p_hat[ok],
        batch.iterations[ok],
        n=config.n,
        k=config.k,
        a=config.a,
        p_true=config.true_p,
        n_failures=len(batch.failures),
    )
    payload = {
        "config": {name: getattr(config, name) for name in _CONFIG_FIELDS
                   if name != "workers"},
        "report": report.to_dict(),
        "failures": [[i, kind] for i, kind in batch.failures],
    }
    payload["config"]["dist_params"] = list(config.dist_params)
    report_path.write_text(json.dumps(payload, indent=2) + "\n")
    _write_plot_data(out, report)
    print(f"wrote {csv_path} ({indices.size} runs) and {report_path}")
    var = "n/a" if report.var_p_hat is None else f"{report.var_p_hat:.6e}"
    ks = "n/a" if report.ks_normalized is None else f"{report.ks_normalized:.4f}"
    print(
        f"mean p_hat = {report.mean_p_hat:.6e}  var = {var}  "
        f"KS(normalized) = {ks}  mean iterations = {report.mean_iterations:.1f}"
    )
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    path = Path(args.csv)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
                raise UsageError(
                    f"{path}: expected columns {','.join(CSV_COLUMNS)}, "
                    f"got {reader.fieldnames}"
                )
            rows = list(reader)
    except OSError as exc:
        raise UsageError(f"cannot read CSV: {exc}") from None
    if not rows:
        raise UsageError(f"{path}: no runs to analyze")
    p_hat = np.array([float(r["p_hat"]) for r in rows])
    iterations = np.array([int(r["iterations"]) for r in rows])
    report = stats.make_experiment_report(
        p_hat, iterations, n=args.n, k=args.k, a=args.a, p_true=args.true_p
    )
    text = json.dumps({"report": report.to_dict()}, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
        print(f"wrote {args.output}")
    else:
        print(text)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    results = verify.run_checks(args.level, workers=args.workers or default_workers())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser, with_runs: bool) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--distribution", help="built-in model name (exponential, uniform, normal)")
    p.add_argument("--dist-params", dest="dist_params",
                   help="comma-separated model parameters")
    p.add_argument("--a", type=float, help="stopping threshold")
    p.add_argument("--x", type=float, help="initial level (default 0)")
    p.add_argument("--n", type=int, help="number of replicas")
    p.add_argument("--k", type=int, help="replicas resampled per iteration")
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--true-p", dest="true_p", type=float,
                   help="known probability, used for normalization/coverage")
    if with_runs:
        p.add_argument("--num-runs", "-M", dest="num_runs", type=int,
                       help="number of independent realizations")
        p.add_argument("--output", help="output path stem (.csv / .report.json)")
        p.add_argument("--workers", type=int,
                       help=f"worker processes (default ${WORKERS_ENV_VAR} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amsplit",
                     description="Rare-event estimation by adaptive multilevel splitting")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="one seeded run")
    _add_common(p_run, with_runs=False)
    p_run.add_argument("--stream-index", dest="stream_index", type=int, default=0,
                       help="replay the run with this stream index")
    p_run.set_defaults(func=cmd_run)

    p_exp = sub.add_parser("experiment", help="batch of independent runs")
    _add_common(p_exp, with_runs=True)
    p_exp.set_defaults(func=cmd_experiment)

    p_an = sub.add_parser("analyze", help="recompute a report from a CSV")
    p_an.add_argument("csv", help="CSV produced by the experiment subcommand")
    p_an.add_argument("--n", type=int, required=True)
    p_an.add_argument("--k", type=int, required=True)
    p_an.add_argument("--a", type=float, required=True)
    p_an.add_argument("--true-p", dest="true_p", type=float)
    p_an.add_argument("--output", help="write the report here instead of stdout")
    p_an.set_defaults(func=cmd_analyze)

    p_ver = sub.add_parser("verify", help="analytic verification suite")
    p_ver.add_argument("level", choices=("quick", "full"))
    p_ver.add_argument("--workers", type=int, default=None)
    p_ver.set_defaults(func=cmd_verify)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (InvalidParams, DomainError) as exc:
        print(f"usage error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except IterationCapExceeded as exc:
        print(f"runtime error: IterationCapExceeded: {exc}", file=sys.stderr)
        return 2
    except (analysis.ConvergenceFailure, analysis.SingularSystem) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

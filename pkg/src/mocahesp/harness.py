"""Command-line runner: seeded repeats, trace persistence, summaries and plot data.

Usage::

    mocahesp run --benchmark ackley20c --driver moca-bo --repeats 10 --out runs/
    mocahesp run --config experiment.cfg
    mocahesp export --mode convergence runs/*.jsonl --out curves.csv
    mocahesp export --mode trajectory runs/ackley2d_moca-bo_seed0.jsonl

Config files hold one ``key = value`` per line (``#`` starts a comment);
every key mirrors a long CLI flag, with dashes or underscores.
"""
from __future__ import annotations

import argparse
import csv
import glob
import io
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .benchmarks import get_benchmark, list_benchmarks
from .drivers import VARIANTS, DriverConfig, batch_size, run_driver
from .trace import SCHEMA_VERSION, RunTrace

log = logging.getLogger("mocahesp")

OUT_ENV = "MOCAHESP_OUT"

# config key -> (parser, DriverConfig field or None for run-level keys)
_RUN_KEYS = {
    "benchmark": str,
    "driver": str,
    "budget": int,
    "seed": int,
    "repeats": int,
    "out": str,
}


def _tuple_of_str(s: str):
    return tuple(x.strip() for x in s.split(",") if x.strip())


_DRIVER_KEYS = {
    "n0": int,
    "alpha": float,
    "lam": int,
    "lam_rule": str,
    "pool_size": int,
    "target_m": float,
    "encoders": _tuple_of_str,
    "eta": float,
    "L_x_init": float,
    "L_h_init": int,
    "d_A_init": int,
    "sigma_lb": float,
    "gp_restarts": int,
    "gp_maxiter": int,
    "gp_max_points": int,
    "local_budget": int,
    "interleaved_rounds": int,
}
_ALIASES = {"m": "target_m"}


class ConfigError(ValueError):
    pass


def _canonical(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = _ALIASES.get(key, key)
    for k in list(_RUN_KEYS) + list(_DRIVER_KEYS):
        if k.lower() == key.lower():
            return k
    raise ConfigError(f"unknown config key {key!r}")


def _convert(key: str, raw) -> object:
    conv = _RUN_KEYS.get(key) or _DRIVER_KEYS[key]
    if not isinstance(raw, str):
        return raw
    try:
        return conv(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def parse_config_text(text: str) -> Dict[str, object]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        key = _canonical(k)
        out[key] = _convert(key, v)
    return out


@dataclass
class RunConfig:
    benchmark: str
    driver: str
    budget: Optional[int] = None
    n0: int = 20
    repeats: int = 10
    seed: int = 0
    out: str = field(default_factory=lambda: os.environ.get(OUT_ENV, "runs"))
    overrides: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.driver not in VARIANTS:
            raise ConfigError(f"unknown driver {self.driver!r}; choose from {', '.join(VARIANTS)}")
        try:
            bench = get_benchmark(self.benchmark)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        if self.budget is None:
            self.budget = bench.budget
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.n0 < 2:
            raise ConfigError("n0 must be >= 2")
        if self.budget < self.n0:
            raise ConfigError(f"budget {self.budget} is below n0 {self.n0}")
        try:
            self.driver_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "RunConfig":
        values = {_canonical(k): _convert(_canonical(k), v) for k, v in values.items() if v is not None}
        missing = [k for k in ("benchmark", "driver") if k not in values]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")
        run = {k: values[k] for k in _RUN_KEYS if k in values}
        n0 = values.get("n0", 20)
        overrides = {k: v for k, v in values.items() if k in _DRIVER_KEYS and k != "n0"}
        return cls(n0=n0, overrides=overrides, **run)

    def driver_config(self) -> DriverConfig:
        return DriverConfig(n0=self.n0, **self.overrides)

    def lam(self) -> int:
        bench = get_benchmark(self.benchmark)
        return batch_size(bench.space, self.driver_config())

    def trace_path(self, seed: int) -> Path:
        return Path(self.out) / f"{self.benchmark}_{self.driver}_seed{seed}.jsonl"

    def summary_path(self) -> Path:
        return Path(self.out) / f"{self.benchmark}_{self.driver}_summary.csv"


def run_repeat(cfg: RunConfig, seed: int) -> RunTrace:
    bench = get_benchmark(cfg.benchmark)
    trace = run_driver(cfg.driver, bench.objective, bench.space, cfg.budget, seed, cfg.driver_config())
    trace.config["benchmark"] = cfg.benchmark
    return trace


def _quantiles(curves: List[np.ndarray], length: int, pad: bool = False):
    rows = []
    for i in range(length):
        col = np.array([c[min(i, len(c) - 1)] if pad else c[i] for c in curves if len(c) > i or (pad and len(c))])
        if len(col):
            q25, med, q75 = np.percentile(col, [25, 50, 75])
            rows.append((i + 1, float(med), float(q25), float(q75), len(col)))
    return rows


def summary_grid(budget: int, lam: int) -> int:
    """Length of the batch-aligned evaluation grid, ceil(N / lam) * lam."""
    return math.ceil(budget / lam) * lam


def summary_rows(traces: Sequence[RunTrace], budget: int, lam: int = 1):
    """(evaluation, median, q25, q75, n_runs) of best-so-far across repeats.

    Rows cover the batch-aligned grid; a curve that stops early (the final
    batch is truncated at the budget) carries its last best forward.
    """
    return _quantiles([t.best_so_far for t in traces], summary_grid(budget, lam), pad=True)


def write_summary(path: Path, traces: Sequence[RunTrace], budget: int, lam: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["schema_version", "evaluation", "median_best", "q25_best", "q75_best", "n_runs"])
        for row in summary_rows(traces, budget, lam):
            w.writerow([SCHEMA_VERSION, *row])


def cli_run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    traces, failed = [], 0
    for i in range(cfg.repeats):
        seed = cfg.seed + i
        try:
            trace = run_repeat(cfg, seed)
        except Exception as exc:  # noqa: BLE001 - keep sibling repeats running
            log.error("repeat with seed %d failed: %s", seed, exc)
            trace = RunTrace(config={"variant": cfg.driver, "benchmark": cfg.benchmark, "seed": seed},
                             status="failed", error=repr(exc))
        cfg.trace_path(seed).write_text(trace.to_jsonl())
        cfg.trace_path(seed).with_suffix(".timing.jsonl").write_text(trace.timing_jsonl())
        if trace.status != "ok":
            failed += 1
        if trace.records:
            traces.append(trace)
        log.info("seed %d: best %.6g over %d evaluations (%s)", seed, trace.best_value, len(trace), trace.status)
    write_summary(cfg.summary_path(), traces, cfg.budget, cfg.lam())
    return 1 if failed else 0


def load_traces(patterns: Sequence[str]) -> List[RunTrace]:
    paths = []
    for p in patterns:
        matched = sorted(glob.glob(p))
        paths.extend(matched if matched else [p])
    paths = [p for p in paths if not p.endswith(".timing.jsonl")]
    if not paths:
        raise FileNotFoundError("no trace files given")
    return [RunTrace.from_jsonl(Path(p).read_text()) for p in paths]


def convergence_rows(traces: Sequence[RunTrace]):
    """(method, evaluation, median, q25, q75, n_runs) per method."""
    by_method: Dict[str, List[RunTrace]] = {}
    for t in traces:
        by_method.setdefault(str(t.config.get("variant", "unknown")), []).append(t)
    rows = []
    for method in sorted(by_method):
        ts = by_method[method]
        length = max(len(t) for t in ts)
        rows.extend((method, *r) for r in _quantiles([t.best_so_far for t in ts], length))
    return rows


def trajectory_rows(trace: RunTrace):
    """Per iteration: region mean (unit and decoded) and ellipse radii along each axis."""
    if not trace.records or len(trace.records[0].point) != 2:
        raise ValueError("trajectory export requires a 2-dimensional run")
    rows, seen = [], set()
    for r in trace.records:
        if r.region is None or "mean" not in r.region or r.iteration in seen:
            continue
        seen.add(r.iteration)
        reg = r.region
        std = np.sqrt(reg["cov_diag"])
        radii = std * math.sqrt(reg["chi2"])
        rows.append((r.iteration, *reg["mean"], *reg["mean_decoded"], *radii, *std, r.best))
    return rows


TRAJECTORY_HEADER = ["iteration", "mean_0", "mean_1", "cell_0", "cell_1", "radius_0", "radius_1",
                     "std_0", "std_1", "best"]
CONVERGENCE_HEADER = ["method", "evaluation", "median_best", "q25_best", "q75_best", "n_runs"]


def cli_export(patterns: Sequence[str], mode: str) -> str:
    traces = load_traces(patterns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if mode == "convergence":
        w.writerow(["schema_version", *CONVERGENCE_HEADER])
        rows = convergence_rows(traces)
    elif mode == "trajectory":
        if len(traces) != 1:
            raise ValueError("trajectory export takes exactly one trace")
        w.writerow(["schema_version", *TRAJECTORY_HEADER])
        rows = trajectory_rows(traces[0])
    else:
        raise ValueError(f"unknown export mode {mode!r}")
    for row in rows:
        w.writerow([SCHEMA_VERSION, *row])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mocahesp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run seeded repeats of one driver on one benchmark")
    r.add_argument("--config", help="flat key = value config file")
    for key, conv in _RUN_KEYS.items():
        r.add_argument(f"--{key}", type=conv)
    for key, conv in _DRIVER_KEYS.items():
        r.add_argument(f"--{key.replace('_', '-')}", dest=key, type=str)
    r.add_argument("--list", action="store_true", help="list benchmarks and drivers, then exit")
    e = sub.add_parser("export", help="export plot-ready CSV from trace files")
    e.add_argument("traces", nargs="+", help="trace files or glob patterns")
    e.add_argument("--mode", choices=("convergence", "trajectory"), default="convergence")
    e.add_argument("--out", help="output CSV (default: stdout)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run":
        if args.list:
            print("benchmarks:", " ".join(list_benchmarks()))
            print("drivers:", " ".join(VARIANTS))
            return 0
        try:
            values: Dict[str, object] = {}
            if args.config:
                values.update(parse_config_text(Path(args.config).read_text()))
            for key in list(_RUN_KEYS) + list(_DRIVER_KEYS):
                v = getattr(args, key, None)
                if v is not None:
                    values[key] = v
            cfg = RunConfig.from_mapping(values)
        except (ConfigError, OSError) as exc:
            print(f"mocahesp: invalid configuration: {exc}", file=sys.stderr)
            return 2
        return cli_run(cfg)
    try:
        text = cli_export(args.traces, args.mode)
    except (ValueError, OSError) as exc:
        print(f"mocahesp: {exc}", file=sys.stderr)
        return 2
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())

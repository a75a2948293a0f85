"""
Command-line front end.

    python experiment_cli.py list
    python experiment_cli.py run <experiment-id> [--config configs/<id>.ini] [--seed S] [--workers W] [--out DIR]

Exit code 0 when every criterion passes, 1 when any fails, 2 on configuration or numerical errors.

Config files are INI:

    [experiment]   id, seed, workers, replicates, output, plus experiment switches (target, workers_list)
    [law]          name | laws = a, b | support = "v:p, ..." | alpha, beta, symmetric
    [grid]         N, levels, u, x, m, n, lambda, starts, ...
    [sampling]     samples, cap, engine, M, reflection, sample_records (per-sample JSON lines kept per batch), ...

Command-line flags override the file; environment variables (see settings) only supply defaults.
"""

import argparse
import configparser
import functools
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

import settings
from errors import ConfigurationError, LabError
from experiments import EXPERIMENTS, ExperimentContext, ExperimentOutcome, get_experiment
from replicate_scheduler import ReplicateScheduler, memory_usage
from results_store import ResultsStore
from stats_verify import TestReport
from utils import parse_float_list, parse_int_list, parse_name_list
from walk_models import IncrementLaw, get_law, law_from_config

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json-lines", "summary-text")
_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


# Seeds

def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, replicate_index: int) -> int:
    """
    SplitMix64: the finalizer applied to master + (index + 1) * golden gamma (mod 2^64).
    The gamma is odd and the finalizer is a bijection, so distinct indices never collide.
    """
    if replicate_index < 0:
        raise ConfigurationError("replicate index must be >= 0")
    return _mix64((int(master_seed) + (int(replicate_index) + 1) * _GOLDEN_GAMMA) & _MASK64)


def derive_seeds(master_seed: int, indices) -> np.ndarray:
    """Vectorised derive_seed over an index array (uint64 arithmetic wraps mod 2^64)"""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(master_seed) & _MASK64) + (idx + np.uint64(1)) * np.uint64(_GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


# Configuration

@dataclass
class ExperimentConfig:
    experiment: str
    law: Dict[str, str] = field(default_factory=dict)
    samples: Optional[int] = None
    cap: int = settings.DEFAULT_STEP_CAP
    seed: int = settings.DEFAULT_MASTER_SEED
    workers: int = 1
    replicates: int = settings.DEFAULT_REPLICATES
    output_dir: Optional[str] = None
    params: Dict[str, str] = field(default_factory=dict)
    source: Optional[str] = None

    def value(self, key: str, default=None):
        return self.params.get(key, default)

    def get_int(self, key: str, default: int) -> int:
        if key not in self.params:
            return default
        values = parse_int_list(self.params[key])
        if len(values) != 1:
            raise ConfigurationError(f"{key} must be a single integer, got {self.params[key]!r}")
        return values[0]

    def get_float(self, key: str, default: float) -> float:
        if key not in self.params:
            return default
        values = parse_float_list(self.params[key])
        if len(values) != 1:
            raise ConfigurationError(f"{key} must be a single number, got {self.params[key]!r}")
        return values[0]

    def get_ints(self, key: str, default: Sequence[int]) -> List[int]:
        values = parse_int_list(self.params[key]) if key in self.params else list(default)
        if not values:
            raise ConfigurationError(f"{key} must not be empty")
        return values

    def get_floats(self, key: str, default: Sequence[float]) -> List[float]:
        values = parse_float_list(self.params[key]) if key in self.params else [float(v) for v in default]
        if not values:
            raise ConfigurationError(f"{key} must not be empty")
        return values

    def resolve_laws(self, default: Sequence[str]) -> List[IncrementLaw]:
        if "laws" in self.law:
            return [get_law(name) for name in parse_name_list(self.law["laws"])]
        if "support" in self.law or "alpha" in self.law:
            return [law_from_config(self.law)]
        if "name" in self.law:
            return [get_law(self.law["name"].strip())]
        return [get_law(name) for name in default]

    @property
    def output(self) -> str:
        return self.output_dir or os.path.join(settings.OUTPUT_DIR, self.experiment)

    def echo(self) -> dict:
        return {"experiment": self.experiment, "law": dict(self.law), "samples": self.samples, "cap": self.cap,
                "seed": self.seed, "workers": self.workers, "replicates": self.replicates,
                "output_dir": self.output, "params": dict(self.params), "source": self.source}


def _positive(name: str, text) -> int:
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be an integer, got {text!r}")
    if value < 1:
        raise ConfigurationError(f"{name} must be >= 1, got {value}")
    return value


def load_config(experiment_id: str, path: Optional[str] = None, seed: Optional[int] = None,
                workers: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    """Defaults, then the INI file, then command-line overrides"""
    get_experiment(experiment_id)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if path:
        if not os.path.exists(path):
            raise ConfigurationError(f"Config file {path!r} not found")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigurationError(f"Cannot parse {path}: {e}")

    experiment = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    declared = experiment.pop("id", experiment_id).strip()
    if declared != experiment_id:
        logger.warning(f"⚠️ {path} declares experiment {declared!r}; running {experiment_id!r}")

    config = ExperimentConfig(experiment=experiment_id, source=path,
                              law=dict(parser["law"]) if parser.has_section("law") else {})
    try:
        config.seed = int(experiment.pop("seed", config.seed))
    except ValueError:
        raise ConfigurationError("seed must be an integer")
    config.workers = _positive("workers", experiment.pop("workers", settings.default_workers()))
    config.replicates = _positive("replicates", experiment.pop("replicates", config.replicates))
    config.output_dir = experiment.pop("output", None)

    params = dict(experiment)
    for section in parser.sections():
        if section not in ("experiment", "law"):
            params.update(parser[section])
    if "samples" in params:
        config.samples = _positive("samples", params.pop("samples"))
    if "cap" in params:
        config.cap = _positive("cap", params.pop("cap"))
    config.params = {k: v.strip().strip('"') for k, v in params.items()}
    config.law = {k: v.strip().strip('"') for k, v in config.law.items()}
    if seed is not None:
        config.seed = int(seed)
    if workers is not None:
        config.workers = _positive("workers", workers)
    if output_dir is not None:
        config.output_dir = output_dir
    logger.info(f"🎛️ {experiment_id}: seed {config.seed}, {config.workers} worker(s), "
                f"{config.replicates} replicate(s), config {path or 'built-in defaults'}")
    return config


# Running

@dataclass
class ExperimentRecord:
    experiment: str
    config: dict
    reports: List[TestReport]
    tables: Dict[str, str]
    capped: Dict[str, int]
    sampled: Dict[str, int]
    samples: Dict[str, List[dict]] = field(default_factory=dict)
    notes: Dict[str, str] = field(default_factory=dict)
    wall_clock: float = 0.0
    memory: dict = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(report.passed for report in self.reports)

    @property
    def failures(self) -> List[TestReport]:
        return [report for report in self.reports if not report.passed]


def _execute(config: ExperimentConfig) -> ExperimentOutcome:
    experiment = get_experiment(config.experiment)
    scheduler = ReplicateScheduler(workers=config.workers)

    def rerun(target: str, workers: int) -> ExperimentOutcome:
        get_experiment(target)
        logger.info(f"🔁 Re-running {target} with {workers} worker(s)")
        return _execute(replace(config, experiment=target, workers=workers))

    ctx = ExperimentContext(config=config, seed_for=functools.partial(derive_seed, config.seed),
                            scheduler=scheduler, rerun=rerun)
    experiment.run(ctx)
    scheduler.log_detailed_status()
    return ctx.outcome


def run_experiment(config: ExperimentConfig) -> ExperimentRecord:
    started = time.time()
    logger.info(f"🚀 Running experiment {config.experiment}")
    outcome = _execute(config)
    record = ExperimentRecord(experiment=config.experiment, config=config.echo(), reports=outcome.reports,
                              tables=outcome.render_tables(), capped=dict(outcome.capped),
                              sampled=dict(outcome.sampled), samples=dict(outcome.samples),
                              notes=dict(outcome.notes), wall_clock=time.time() - started,
                              memory=memory_usage())
    if not record.reports:
        raise ConfigurationError(f"{config.experiment} produced no test reports")
    failed = len(record.failures)
    logger.info(f"📊 {config.experiment}: {len(record.reports) - failed}/{len(record.reports)} criteria passed "
                f"in {record.wall_clock:.1f}s")
    return record


# Reports

def _verdict_rows(record: ExperimentRecord):
    rows = [report.to_row() for report in record.reports]
    header = list(rows[0]) if rows else ["name", "passed"]
    return header, [[row[key] for key in header] for row in rows]


def summary_text(record: ExperimentRecord) -> str:
    lines = [f"experiment: {record.experiment}", f"seed: {record.config.get('seed')}",
             f"criteria: {len(record.reports)}"]
    for report in record.reports:
        verdict = "PASS" if report.passed else "FAIL"
        measure = f"p={report.p_value:.4g}" if report.p_value is not None else f"{report.statistic:.6g}"
        lines.append(f"{verdict} {report.name}: {measure} (reference {report.reference:.6g}, "
                     f"{report.criterion.value} {report.threshold:g})")
    for key in sorted(record.notes):
        lines.append(f"{key}: {record.notes[key]}")
    for label in sorted(record.sampled):
        lines.append(f"capped {label}: {record.capped.get(label, 0)}/{record.sampled[label]}")
    failed = len(record.failures)
    lines.append("result: all criteria passed" if failed == 0 else f"result: {failed} criteria did not pass")
    return "\n".join(lines) + "\n"


def emit_report(record: ExperimentRecord, fmt: str, output_dir: Optional[str] = None) -> List[str]:
    """Write the record in one format; wall-clock and memory appear only in the JSON record"""
    if fmt not in FORMATS:
        raise ConfigurationError(f"Unknown report format {fmt!r}; use one of {', '.join(FORMATS)}")
    store = ResultsStore(output_dir or record.config.get("output_dir") or
                         os.path.join(settings.OUTPUT_DIR, record.experiment))
    if fmt == "csv":
        artifacts = dict(record.tables)
        artifacts["verdicts.csv"] = _verdict_rows(record)
    elif fmt == "json-lines":
        artifacts = {f"{name}.jsonl": rows for name, rows in record.samples.items()}
        artifacts["verdicts.jsonl"] = [report.to_row() for report in record.reports]
        artifacts["record.json"] = {
            "experiment": record.experiment, "config": record.config, "passed": record.passed,
            "wall_clock_seconds": record.wall_clock, "memory": record.memory, "notes": record.notes,
            "capped": record.capped, "sampled": record.sampled, "tables": sorted(record.tables),
            "samples": sorted(record.samples)}
    else:
        artifacts = {"summary.txt": summary_text(record)}
    paths = store.write_all(artifacts)
    record.artifacts.extend(paths)
    return paths


# Command line

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="experiment_cli",
                                     description="Local times of killed and reflected lattice random walks")
    parser.add_argument("--log-level", default=None, help="overrides LOCALTIME_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one acceptance experiment")
    run.add_argument("experiment", help="experiment id (see 'list')")
    run.add_argument("--config", default=None, help="INI config; defaults to configs/<id>.ini when present")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--format", choices=FORMATS + ("all",), default="all")

    sub.add_parser("list", help="list experiments and their acceptance criteria")
    return parser


def _default_config_path(experiment_id: str) -> Optional[str]:
    path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs", f"{experiment_id}.ini")
    return path if os.path.exists(path) else None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings.configure_logging(args.log_level)

    if args.command == "list":
        for experiment in EXPERIMENTS.values():
            print(f"{experiment.id:24s} {experiment.criterion}")
        return 0

    try:
        config = load_config(args.experiment, args.config or _default_config_path(args.experiment),
                             seed=args.seed, workers=args.workers, output_dir=args.out)
        record = run_experiment(config)
        formats = FORMATS if args.format == "all" else (args.format,)
        for fmt in formats:
            emit_report(record, fmt)
    except LabError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2

    print(summary_text(record), end="")
    return 0 if record.passed else 1


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runner: seeded trials, aggregation and report files.

Seeds
-----
Every random draw descends from the configuration's root seed. Trial ``t``
uses ``derive_seed(root, t, 0)`` for stream generation and
``derive_seed(root, t, 1)`` as the solver root seed of every method, so
methods in one trial see the same stream.

Config grammar
--------------
One ``key = value`` pair per line; ``#`` starts a comment. Keys are listed
in :data:`CONFIG_KEYS`. ``dims`` takes three integers, ``schedule`` takes
either comma-separated ranks (``2,4,3``) or ``;``-separated active sets
(``0 1; 0 1 2``) and ``methods`` takes comma-separated method tags such as
``seek-and-destroy@0.6`` or ``baseline@initial-rank``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .als import AlsOptions
from .baseline import BaselineConfig, fixed_rank_stream
from .matching import MatchOptions
from .seekdestroy import StreamOptions, reconstruct_stream, run_stream
from .streamgen import GroundTruth, StreamSpec, generate_stream, load_stream
from .tensor import concat_all, relative_error

SCHEMA_VERSION = 1
SIGMA_WINDOW = 25
MAX_TRIALS = 1000

CSV_COLUMNS = (
    "method",
    "trials",
    "median_error",
    "std_error",
    "rank_accuracy",
    "drift_accuracy",
    "median_running_rank",
    "median_wall_time",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    """One method to run: ``seek-and-destroy`` with a matching threshold or
    ``baseline`` with a rank mode."""

    name: str
    threshold: float = 0.6
    rank_mode: str = "initial-rank"

    @classmethod
    def parse(cls, tag: str) -> "MethodSpec":
        name, _, arg = tag.strip().partition("@")
        if name == "seek-and-destroy":
            try:
                th = float(arg) if arg else 0.6
            except ValueError:
                raise ConfigError(f"bad threshold in method {tag!r}") from None
            if not 0 < th < 1:
                raise ConfigError(f"threshold must lie in (0, 1): {tag!r}")
            return cls(name, threshold=th)
        if name == "baseline":
            mode = arg or "initial-rank"
            if mode not in ("initial-rank", "full-rank"):
                raise ConfigError(f"unknown baseline rank mode in {tag!r}")
            return cls(name, rank_mode=mode)
        raise ConfigError(f"unknown method {tag!r}")

    @property
    def tag(self) -> str:
        if self.name == "seek-and-destroy":
            return f"seek-and-destroy@{self.threshold:g}"
        return f"baseline@{self.rank_mode}"


@dataclass(frozen=True)
class ExperimentConfig:
    spec: StreamSpec | None = None
    stream_path: str | None = None
    methods: tuple = (MethodSpec("seek-and-destroy"),)
    trials: int = 1
    convergence: str = "fixed-trials"
    seed: int = 0
    oracle_ranks: bool = False
    jobs: int = 1
    als: AlsOptions = field(default_factory=lambda: AlsOptions(init="gevd"))
    similarity_source: str = "A"
    average_factors: bool = False
    rho_denominator: str = "batches"
    first_max_rank: int = 6
    rank_headroom: int = 3
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.convergence not in ("fixed-trials", "sigma-2-digit"):
            raise ConfigError(f"unknown convergence rule {self.convergence!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.rho_denominator not in ("batches", "active"):
            raise ConfigError(f"unknown rho denominator {self.rho_denominator!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.spec is None and self.stream_path is None:
            raise ConfigError("either a stream spec or a stream path is required")
        for m in self.methods:
            if m.name == "seek-and-destroy" and not 0 < m.threshold < 1:
                raise ConfigError("threshold must lie in (0, 1)")

    def stream_options(self, method: MethodSpec, seed: int) -> StreamOptions:
        return StreamOptions(
            match=MatchOptions(threshold=method.threshold, similarity_source=self.similarity_source),
            als=replace(self.als, seed=seed),
            first_max_rank=self.first_max_rank,
            rank_headroom=self.rank_headroom,
            average_factors=self.average_factors,
        )


@dataclass
class TrialReport:
    method: str
    trial: int
    seed: int
    final_error: float
    actual_ranks: list
    predicted_ranks: list
    drift_flags: list
    expected_drift: list
    running_rank: int
    batches: list
    wall_time: float

    @property
    def rank_accuracy(self):
        if not self.actual_ranks or not self.predicted_ranks:
            return None
        hits = sum(int(a == p) for a, p in zip(self.actual_ranks, self.predicted_ranks))
        return hits / len(self.actual_ranks)

    @property
    def drift_accuracy(self):
        if not self.expected_drift or not self.drift_flags:
            return None
        hits = sum(int(a == p) for a, p in zip(self.expected_drift, self.drift_flags))
        return hits / len(self.expected_drift)


# -- config parsing ---------------------------------------------------------

CONFIG_KEYS = (
    "dims", "initial_rank", "full_rank", "batch_size", "noise_sigma", "schedule",
    "fixed_scale", "stream", "methods", "trials", "convergence", "seed",
    "oracle_ranks", "jobs", "als_max_iters", "als_tol", "als_init",
    "similarity_source", "average_factors", "rho_denominator", "first_max_rank", "rank_headroom",
    "out", "format",
)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def parse_schedule(text: str):
    text = text.strip()
    if not text:
        return None
    if ";" in text or " " in text.replace(", ", ","):
        return tuple(tuple(int(c) for c in part.replace(",", " ").split()) for part in text.split(";"))
    return tuple(int(p) for p in text.split(","))


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse the key-value grammar into a raw dict of strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        raw[key] = value.strip()
    return raw


def build_config(raw: dict) -> ExperimentConfig:
    """Turn a raw key-value mapping (strings or typed values) into a config."""

    def get(key, conv, default=None):
        if key not in raw or raw[key] is None:
            return default
        v = raw[key]
        try:
            return conv(v) if isinstance(v, str) else v
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {v!r} ({exc})") from None

    spec = None
    if "dims" in raw:
        dims = get("dims", lambda s: tuple(int(x) for x in s.replace(",", " ").split()))
        try:
            spec = StreamSpec(
                dims=dims,
                initial_rank=get("initial_rank", int, 2),
                full_rank=get("full_rank", int, 5),
                batch_size=get("batch_size", int, 10),
                noise_sigma=get("noise_sigma", float, 0.0),
                seed=get("seed", int, 0),
                schedule=get("schedule", parse_schedule),
                fixed_scale=get("fixed_scale", _bool, False),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid stream spec: {exc}") from None
    methods = get("methods", lambda s: tuple(MethodSpec.parse(t) for t in s.split(",") if t.strip()))
    if methods is None:
        methods = (MethodSpec("seek-and-destroy"),)
    try:
        als = AlsOptions(
            max_iters=get("als_max_iters", int, 100),
            tol=get("als_tol", float, 1e-8),
            seed=0,
            init=get("als_init", str, "gevd"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(
        spec=spec,
        stream_path=get("stream", str),
        methods=tuple(methods),
        trials=get("trials", int, 1),
        convergence=get("convergence", str, "fixed-trials"),
        seed=get("seed", int, 0),
        oracle_ranks=get("oracle_ranks", _bool, False),
        jobs=get("jobs", int, 1),
        als=als,
        similarity_source=get("similarity_source", str, "A"),
        average_factors=get("average_factors", _bool, False),
        rho_denominator=get("rho_denominator", str, "batches"),
        first_max_rank=get("first_max_rank", int, 6),
        rank_headroom=get("rank_headroom", int, 3),
        out=get("out", str),
        format=get("format", str, "json"),
    )


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror or exc})") from None
    return parse_config_text(text, str(p))


# -- running ----------------------------------------------------------------


def derive_seed(root: int, *path: int) -> int:
    ss = np.random.SeedSequence([int(root), *(int(p) for p in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _trial_stream(cfg: ExperimentConfig, trial: int):
    if cfg.stream_path is not None:
        loaded = load_stream(cfg.stream_path)
        gt = loaded.ground_truth()
        return list(loaded.batches), gt, loaded.batch_ranks
    spec = replace(cfg.spec, seed=derive_seed(cfg.seed, trial, 0))
    gt = generate_stream(spec)
    return list(gt.batches), gt, gt.batch_ranks


def run_trial(cfg: ExperimentConfig, trial: int) -> list[TrialReport]:
    """Run every configured method once on the trial's stream."""
    batches, gt, ranks = _trial_stream(cfg, trial)
    full = concat_all(batches)
    algo_seed = derive_seed(cfg.seed, trial, 1)
    actual = list(ranks) if ranks is not None else []
    expected = gt.drift_flags() if isinstance(gt, GroundTruth) and gt.active_sets else []
    if cfg.oracle_ranks and ranks is None:
        raise ConfigError("oracle ranks requested but the stream carries no ranks")

    out = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        if method.name == "seek-and-destroy":
            opts = cfg.stream_options(method, algo_seed)
            state, reports = run_stream(batches, opts, ranks=ranks if cfg.oracle_ranks else None)
            err = relative_error(full, reconstruct_stream(state, cfg.rho_denominator))
            rep = TrialReport(
                method=method.tag,
                trial=trial,
                seed=algo_seed,
                final_error=err,
                actual_ranks=actual,
                predicted_ranks=[r.batch_rank for r in reports],
                drift_flags=[r.drift_detected for r in reports],
                expected_drift=list(expected),
                running_rank=state.running_rank,
                batches=[asdict(r) for r in reports],
                wall_time=time.perf_counter() - t0,
            )
        else:
            if method.rank_mode == "initial-rank":
                rank = actual[0] if actual else cfg.spec.initial_rank
            else:
                rank = max(actual) if actual else cfg.spec.full_rank
            bcfg = BaselineConfig(rank=rank, rank_mode=method.rank_mode, als=replace(cfg.als, seed=algo_seed))
            _, err = fixed_rank_stream(batches, bcfg)
            rep = TrialReport(
                method=method.tag,
                trial=trial,
                seed=algo_seed,
                final_error=err,
                actual_ranks=actual,
                predicted_ranks=[],
                drift_flags=[],
                expected_drift=[],
                running_rank=rank,
                batches=[],
                wall_time=time.perf_counter() - t0,
            )
        out.append(rep)
    return out


def rounded_sigma(values) -> float:
    """Sample standard deviation rounded to two significant digits."""
    if len(values) < 2:
        return float("nan")
    s = float(np.std(values, ddof=1))
    if s == 0 or not math.isfinite(s):
        return s
    return round(s, 1 - int(math.floor(math.log10(abs(s)))))


def _converged(errors_by_method: dict) -> bool:
    for errs in errors_by_method.values():
        if len(errs) < SIGMA_WINDOW + 2:
            return False
        ref = rounded_sigma(errs)
        for back in range(1, SIGMA_WINDOW + 1):
            if rounded_sigma(errs[:-back]) != ref:
                return False
    return True


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run trials until the convergence rule fires and aggregate them.

    With ``fixed-trials`` exactly ``cfg.trials`` trials run. With
    ``sigma-2-digit`` trials run until every method's error standard
    deviation, rounded to two significant digits, has not changed over the
    last 25 trials, capped at ``min(cfg.trials, 1000)``.
    """
    if cfg.stream_path is not None and not (Path(cfg.stream_path) / "manifest.txt").is_file():
        raise FileNotFoundError(f"{cfg.stream_path}: stream manifest not found")
    cap = cfg.trials if cfg.convergence == "fixed-trials" else min(cfg.trials, MAX_TRIALS)
    results: list[TrialReport] = []
    errors = {m.tag: [] for m in cfg.methods}
    executor = ProcessPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None
    try:
        t = 0
        done = False
        while t < cap and not done:
            chunk = list(range(t, min(cap, t + cfg.jobs)))
            if executor is None:
                outs = [run_trial(cfg, i) for i in chunk]
            else:
                outs = list(executor.map(run_trial, [cfg] * len(chunk), chunk))
            for reps in outs:
                results.extend(reps)
                for r in reps:
                    errors[r.method].append(r.final_error)
                if cfg.convergence == "sigma-2-digit" and _converged(errors):
                    done = True
                    break
            t += len(chunk)
    finally:
        if executor is not None:
            executor.shutdown()
    results.sort(key=lambda r: (r.trial, r.method))
    return aggregate(cfg, results)


def _median(xs):
    xs = [x for x in xs if x is not None]
    return float(np.median(xs)) if xs else None


def aggregate(cfg: ExperimentConfig | None, results: list[TrialReport]) -> dict:
    methods = [m.tag for m in cfg.methods] if cfg is not None else sorted({r.method for r in results})
    summary = []
    for tag in methods:
        rs = [r for r in results if r.method == tag]
        errs = [r.final_error for r in rs]
        summary.append(
            {
                "method": tag,
                "trials": len(rs),
                "median_error": _median(errs),
                "std_error": float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0,
                "rank_accuracy": _median([r.rank_accuracy for r in rs]),
                "drift_accuracy": _median([r.drift_accuracy for r in rs]),
                "median_running_rank": _median([r.running_rank for r in rs]),
                "median_wall_time": _median([r.wall_time for r in rs]),
            }
        )
    report = {
        "schema_version": SCHEMA_VERSION,
        "methods": summary,
        "trials": [_trial_dict(r) for r in results],
    }
    if cfg is not None:
        report["config"] = _config_dict(cfg)
    return report


def _trial_dict(r: TrialReport) -> dict:
    d = asdict(r)
    d["rank_accuracy"] = r.rank_accuracy
    d["drift_accuracy"] = r.drift_accuracy
    return d


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = {
        "stream": cfg.stream_path,
        "methods": [m.tag for m in cfg.methods],
        "trials": cfg.trials,
        "convergence": cfg.convergence,
        "seed": cfg.seed,
        "oracle_ranks": cfg.oracle_ranks,
        "als": asdict(cfg.als),
        "similarity_source": cfg.similarity_source,
        "average_factors": cfg.average_factors,
        "rho_denominator": cfg.rho_denominator,
    }
    if cfg.spec is not None:
        s = asdict(cfg.spec)
        s["dims"] = list(s["dims"])
        s["schedule"] = None if s["schedule"] is None else [x if isinstance(x, int) else list(x) for x in s["schedule"]]
        d["spec"] = s
    return d


# -- report files -----------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_to_csv(report: dict) -> str:
    """One row per method in the order of :data:`CSV_COLUMNS`."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report.get("methods", []):
        w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv_report(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        d = {}
        for k, v in row.items():
            if k in ("method",):
                d[k] = v
            elif k == "trials":
                d[k] = int(v)
            else:
                d[k] = float(v) if v != "" else None
        out.append(d)
    return out


def emit_report(report: dict, fmt: str = "json", path=None) -> str:
    """Render ``report`` as ``csv`` or ``json``; write it when ``path`` is given."""
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "json":
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def load_report(path) -> dict:
    p = Path(path)
    try:
        report = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read report ({exc.strerror or exc})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not a JSON report ({exc})") from None
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{p}: unsupported report schema {report.get('schema_version')!r}")
    return report

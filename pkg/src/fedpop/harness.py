"""Experiment configs, multi-seed runs and report files.

A config is one JSON document. Every block is validated, with unknown keys
rejected, before any training starts. A run writes three files:

``summary.json``
    Per-seed and aggregate accuracies and losses, tried-vector counts.
``trace.csv``
    One row per live process per round (columns in :data:`TRACE_COLUMNS`
    plus one column per server and client HP).
``config_echo.json``
    The fully resolved config; feeding it back reproduces the run.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .data import Dataset, PartitionSpec, generate_synthetic, load_csv, partition
from .evaluation import evaluate_finetuned, evaluate_global
from .evo import EvoParams
from .fl_engine import Architecture, init_weights
from .hp_space import (
    SCHEDULERS,
    ContinuousUniform,
    DiscreteOrdered,
    HyperparamSpec,
    SearchSpace,
    default_search_space,
)
from .tuners import (
    FedPopParams,
    InfeasibleSchedule,
    RoundTrace,
    ShaParams,
    Streams,
    TuningBudget,
    count_tried_vectors,
    run_tuning,
    sha_schedule,
)

__all__ = [
    "ConfigError",
    "RunFailure",
    "ExperimentConfig",
    "SeedResult",
    "RunReport",
    "METHODS",
    "TRACE_COLUMNS",
    "load_config",
    "run_experiment",
    "emit_reports",
    "run_sweep",
    "format_report",
]

METHODS = ("rs", "sha", "fedpop_rs", "fedpop_sha")
TRACE_COLUMNS = (
    "seed", "round", "process_id", "s_i", "s_min", "s_max",
    "global_acc", "events", "alpha_id", "beta_ids",
)


class ConfigError(ValueError):
    """Invalid experiment config; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class RunFailure(RuntimeError):
    pass


def fmt(x: float | None) -> str:
    """Floats with 9 significant digits; ``None`` becomes an empty cell."""
    if x is None:
        return ""
    return format(float(x), ".9g")


def _json_num(x: float | None) -> float | None:
    if x is None or not math.isfinite(x):
        return None
    return float(fmt(x))


# -- config parsing -----------------------------------------------------------


class _Block:
    """Typed, path-aware access to one JSON object."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected an object")
        self.data, self.path, self.seen = data, path, set()

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, kind: type | tuple, default: Any = ..., check=None) -> Any:
        self.seen.add(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(self._p(key), "missing required field")
            return default
        value = self.data[key]
        kinds = kind if isinstance(kind, tuple) else (kind,)
        # JSON true/false must not pass as numbers.
        if not isinstance(value, kinds) or (isinstance(value, bool) and bool not in kinds):
            names = "/".join("null" if k is type(None) else k.__name__ for k in kinds)
            raise ConfigError(self._p(key), f"expected {names}, got {value!r}")
        if check is not None and not check(value):
            raise ConfigError(self._p(key), f"invalid value {value!r}")
        return value

    def sub(self, key: str, required: bool = False) -> _Block:
        value = self.get(key, dict, ... if required else {})
        return _Block(value, self._p(key))

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.seen)
        if extra:
            raise ConfigError(self._p(extra[0]), "unknown key")


_NUM = (int, float)


def _positive(x) -> bool:
    return x > 0


def _spec_from_json(item: Any, path: str, delta: float) -> HyperparamSpec:
    b = _Block(item, path)
    name = b.get("name", str)
    d = b.get("delta_fraction", _NUM, delta)
    try:
        if "values" in b.data:
            values = b.get("values", list, check=lambda v: len(v) >= 2)
            kind = DiscreteOrdered(tuple(values))
        else:
            kind = ContinuousUniform(float(b.get("low", _NUM)), float(b.get("high", _NUM)), b.get("log", bool, False))
        b.finish()
        return HyperparamSpec(name, kind, float(d))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def _spec_to_json(spec: HyperparamSpec) -> dict:
    out: dict[str, Any] = {"name": spec.name}
    if isinstance(spec.kind, DiscreteOrdered):
        out["values"] = list(spec.kind.values)
    else:
        out.update(low=spec.kind.low, high=spec.kind.high, log=spec.kind.log_scale)
    out["delta_fraction"] = spec.delta_fraction
    return out


_CLIENT_HPS = {"learning_rate", "scheduler", "momentum", "weight_decay", "local_epochs", "batch_size", "dropout"}
_SERVER_HPS = {"learning_rate", "scheduler", "momentum"}


def _parse_space(b: _Block) -> SearchSpace:
    delta = b.get("delta_fraction", _NUM, 0.1, check=lambda x: 0 < x <= 1)
    default = default_search_space(float(delta))
    parts = []
    for role, known, fallback in (("server", _SERVER_HPS, default.server_specs), ("client", _CLIENT_HPS, default.client_specs)):
        items = b.get(role, list, None)
        if items is None:
            parts.append(fallback)
            continue
        specs = tuple(_spec_from_json(it, f"{b._p(role)}[{i}]", float(delta)) for i, it in enumerate(items))
        for i, s in enumerate(specs):
            path = f"{b._p(role)}[{i}]"
            if s.name not in known:
                raise ConfigError(path, f"unknown {role} HP {s.name!r}; expected one of {sorted(known)}")
            if s.name == "scheduler" and not set(s.kind.values) <= set(SCHEDULERS):
                raise ConfigError(path, f"schedulers must be drawn from {SCHEDULERS}")
        parts.append(specs)
    b.finish()
    try:
        return SearchSpace(*parts)
    except ValueError as exc:
        raise ConfigError(b.path, str(exc)) from None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    partition: PartitionSpec
    architecture: str
    hidden_width: int
    space: SearchSpace
    budget: TuningBudget
    method: str
    fedpop: FedPopParams | None
    sha: ShaParams
    selection_window: int
    eval_interval: int
    weight_by_examples: bool
    seeds: tuple[int, ...]
    output_dir: str | None = None

    @property
    def constructor(self) -> str:
        return "sha" if self.method.endswith("sha") else "rs"

    @classmethod
    def from_dict(cls, doc: Any) -> ExperimentConfig:
        root = _Block(doc, "")

        ds = root.sub("dataset", required=True)
        kind = ds.get("kind", str, "synthetic", check=lambda k: k in ("synthetic", "csv"))
        if kind == "synthetic":
            dataset = dict(
                kind="synthetic",
                num_examples=ds.get("num_examples", int, check=_positive),
                num_features=ds.get("num_features", int, check=_positive),
                num_classes=ds.get("num_classes", int, check=lambda c: c >= 2),
                separation=float(ds.get("separation", _NUM, 2.0, check=lambda s: s >= 0)),
            )
        else:
            dataset = dict(kind="csv", path=ds.get("path", str), label_column=ds.get("label_column", str))
        ds.finish()

        pb = root.sub("partition", required=True)
        try:
            part = PartitionSpec(
                pb.get("scheme", str, "dirichlet"),
                pb.get("num_clients", int),
                float(pb.get("concentration", _NUM, 0.5)),
                tuple(float(f) for f in pb.get("split_fractions", list, [0.7, 0.15, 0.15])),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("partition", str(exc)) from None
        pb.finish()

        mb = root.sub("model", required=True)
        arch = mb.get("kind", str, "logreg", check=lambda k: k in ("logreg", "mlp"))
        hidden = mb.get("hidden_width", int, 32 if arch == "mlp" else 0, check=lambda h: h >= 0)
        if arch == "mlp" and hidden < 1:
            raise ConfigError("model.hidden_width", "mlp needs hidden_width >= 1")
        mb.finish()

        space = _parse_space(root.sub("space"))

        bb = root.sub("budget", required=True)
        budget = TuningBudget(
            bb.get("total_rounds", int, check=_positive),
            bb.get("rounds_per_config", int, check=_positive),
            bb.get("num_configs", int, check=_positive),
            bb.get("active_clients", int, check=_positive),
        )
        bb.finish()
        if budget.active_clients > part.num_clients:
            raise ConfigError("budget.active_clients", f"{budget.active_clients} exceeds {part.num_clients} clients")

        tb = root.sub("tuner", required=True)
        method = tb.get("method", str, check=lambda m: m in METHODS)
        shab = tb.sub("sha")
        rungs = shab.get("rungs", (list, type(None)), None)
        try:
            sha = ShaParams(shab.get("eta", int, 3), shab.get("num_rungs", int, 3), tuple(rungs) if rungs else None)
        except ValueError as exc:
            raise ConfigError("tuner.sha", str(exc)) from None
        shab.finish()
        fb = tb.sub("fedpop")
        fedpop = None
        try:
            evo = EvoParams(
                float(fb.get("epsilon", _NUM, 0.1)),
                float(fb.get("resample_prob", _NUM, 0.1)),
                fb.get("anneal_horizon", int, budget.rounds_per_config),
            )
            params = FedPopParams(
                evo,
                fb.get("global_interval", int, max(1, round(0.05 * budget.rounds_per_config))),
                fb.get("quantile_coef", int, 3),
                float(fb.get("decay_power", _NUM, 1.0)),
                fb.get("use_local", bool, True),
                fb.get("use_global", bool, True),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("tuner.fedpop", str(exc)) from None
        fb.finish()
        if method.startswith("fedpop"):
            fedpop = params
            if params.global_interval > budget.rounds_per_config:
                raise ConfigError("tuner.fedpop.global_interval", "must not exceed rounds_per_config")
        selection_window = tb.get("selection_window", int, 1, check=_positive)
        eval_interval = tb.get("eval_interval", int, 0, check=lambda x: x >= 0)
        weight_by_examples = tb.get("weight_by_examples", bool, False)
        tb.finish()

        constructor = "sha" if method.endswith("sha") else "rs"
        if constructor == "rs" and budget.total_rounds != budget.num_configs * budget.rounds_per_config:
            raise ConfigError("budget.total_rounds", "random search needs total_rounds == num_configs * rounds_per_config")
        if constructor == "sha":
            if budget.num_configs != sha.eta ** sha.num_rungs:
                raise ConfigError("budget.num_configs", f"successive halving starts eta**num_rungs = {sha.eta ** sha.num_rungs} configs")
            try:
                sha_schedule(budget, sha)
            except InfeasibleSchedule as exc:
                raise ConfigError("tuner.sha.rungs", str(exc)) from None

        seeds = root.get("seeds", list, [1, 2, 3, 4, 5], check=lambda s: len(s) >= 1)
        for i, s in enumerate(seeds):
            if not isinstance(s, int) or isinstance(s, bool) or s < 0:
                raise ConfigError(f"seeds[{i}]", f"expected a non-negative integer, got {s!r}")
        output_dir = root.get("output_dir", (str, type(None)), None)
        root.finish()
        return cls(dataset, part, arch, hidden, space, budget, method, fedpop, sha,
                   selection_window, eval_interval, weight_by_examples, tuple(seeds), output_dir)

    def to_dict(self) -> dict:
        fp = self.fedpop or FedPopParams(EvoParams(0.1, 0.1, self.budget.rounds_per_config),
                                         max(1, round(0.05 * self.budget.rounds_per_config)))
        model: dict[str, Any] = {"kind": self.architecture}
        if self.architecture == "mlp":
            model["hidden_width"] = self.hidden_width
        return {
            "dataset": dict(self.dataset),
            "partition": {
                "scheme": self.partition.scheme,
                "num_clients": self.partition.num_clients,
                "concentration": self.partition.concentration,
                "split_fractions": list(self.partition.split_fractions),
            },
            "model": model,
            "space": {
                "server": [_spec_to_json(s) for s in self.space.server_specs],
                "client": [_spec_to_json(s) for s in self.space.client_specs],
            },
            "budget": {
                "total_rounds": self.budget.total_rounds,
                "rounds_per_config": self.budget.rounds_per_config,
                "num_configs": self.budget.num_configs,
                "active_clients": self.budget.active_clients,
            },
            "tuner": {
                "method": self.method,
                "fedpop": {
                    "epsilon": fp.evo.epsilon0,
                    "resample_prob": fp.evo.p_re0,
                    "anneal_horizon": fp.evo.anneal_horizon,
                    "global_interval": fp.global_interval,
                    "quantile_coef": fp.quantile_coef,
                    "decay_power": fp.decay_power,
                    "use_local": fp.use_local,
                    "use_global": fp.use_global,
                },
                "sha": {"eta": self.sha.eta, "num_rungs": self.sha.num_rungs,
                        "rungs": list(self.sha.rungs) if self.sha.rungs else None},
                "selection_window": self.selection_window,
                "eval_interval": self.eval_interval,
                "weight_by_examples": self.weight_by_examples,
            },
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def with_overrides(self, **changes: Any) -> ExperimentConfig:
        """Re-validated copy with dotted-path overrides, e.g. ``{"budget.num_configs": 10}``."""
        return ExperimentConfig.from_dict(apply_overrides(self.to_dict(), changes))


def apply_overrides(doc: dict, changes: dict) -> dict:
    doc = copy.deepcopy(doc)
    for dotted, value in changes.items():
        node = doc
        keys = dotted.split(".")
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(dotted, "no such config block")
            node = node[k]
        node[keys[-1]] = value
    return doc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(doc)


# -- running ------------------------------------------------------------------


@dataclass(frozen=True)
class SeedResult:
    seed: int
    global_accuracy: float
    global_loss: float
    finetuned_accuracy: float
    finetuned_loss: float
    finetune_diverged: int
    best_process: int
    num_alpha: int
    num_beta: int
    fed_rounds: int

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        for k in ("global_accuracy", "global_loss", "finetuned_accuracy", "finetuned_loss"):
            d[k] = _json_num(d[k])
        return d


def _mean_std(xs: Sequence[float]) -> tuple[float, float | None]:
    a = np.asarray(xs, dtype=float)
    return float(a.mean()), (float(a.std(ddof=1)) if len(a) >= 2 else None)


@dataclass(frozen=True)
class RunReport:
    method: str
    seeds: tuple[SeedResult, ...]
    traces: tuple[tuple[int, tuple[RoundTrace, ...]], ...] = ()

    def stat(self, field_name: str) -> tuple[float, float | None]:
        """Mean and sample std across seeds."""
        return _mean_std([getattr(s, field_name) for s in self.seeds])

    def to_json(self) -> dict:
        agg = {}
        for name in ("global_accuracy", "global_loss", "finetuned_accuracy", "finetuned_loss"):
            mean, std = self.stat(name)
            agg[name] = {"mean": _json_num(mean), "std": _json_num(std)}
        return {
            "method": self.method,
            "num_seeds": len(self.seeds),
            "aggregate": agg,
            "tried_vectors": {
                "alpha_mean": _json_num(self.stat("num_alpha")[0]),
                "beta_mean": _json_num(self.stat("num_beta")[0]),
            },
            "per_seed": [s.to_json() for s in self.seeds],
            "trace_file": "trace.csv",
        }


def _load_dataset(config: ExperimentConfig, rng: np.random.Generator) -> Dataset:
    d = config.dataset
    if d["kind"] == "csv":
        return load_csv(d["path"], d["label_column"])
    return generate_synthetic(d["num_examples"], d["num_features"], d["num_classes"], d["separation"], rng)


def run_seed(config: ExperimentConfig, seed: int, csv_data: Dataset | None = None):
    """One seed end to end: data, tuning, best-process selection, evaluation."""
    streams = Streams(seed)
    data = csv_data if csv_data is not None else _load_dataset(config, streams.rng("data"))
    shards = partition(data, config.partition, streams.rng("partition"))
    arch = Architecture(config.architecture, data.num_features, data.num_classes, config.hidden_width)
    w0 = init_weights(arch, streams.rng("init"))
    res = run_tuning(
        config.constructor, config.space, config.budget, shards, w0, seed,
        fedpop=config.fedpop, sha=config.sha, selection_window=config.selection_window,
        eval_interval=config.eval_interval, weight_by_examples=config.weight_by_examples,
    )
    best = res.best
    g_acc, g_loss = evaluate_global(best.weights, shards)
    f_acc, f_loss, diverged = evaluate_finetuned(
        best.weights, best.beta0, shards, [streams.rng("finetune", client=k) for k in range(len(shards))]
    )
    num_alpha, num_beta = count_tried_vectors(res.traces)
    result = SeedResult(seed, g_acc, g_loss, f_acc, f_loss, diverged, best.pid, num_alpha, num_beta, len(res.traces))
    return result, res


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Run every seed of ``config`` and collect the per-seed results."""
    csv_data = _load_dataset(config, None) if config.dataset["kind"] == "csv" else None
    results, traces = [], []
    for seed in config.seeds:
        try:
            result, res = run_seed(config, seed, csv_data)
        except (ValueError, ArithmeticError) as exc:
            raise RunFailure(f"seed {seed}: {type(exc).__name__}: {exc}") from exc
        results.append(result)
        traces.append((seed, tuple(res.traces)))
    return RunReport(config.method, tuple(results), tuple(traces))


# -- reports ------------------------------------------------------------------


def trace_header(config: ExperimentConfig) -> list[str]:
    return (list(TRACE_COLUMNS)
            + [f"alpha.{s.name}" for s in config.space.server_specs]
            + [f"beta0.{s.name}" for s in config.space.client_specs])


def _hp_cell(value: Any) -> str:
    return fmt(value) if isinstance(value, float) else str(value)


def trace_rows(seed: int, traces: Sequence[RoundTrace]):
    for t in traces:
        row = [
            str(seed), str(t.round), str(t.process_id), fmt(t.score),
            fmt(min(t.client_scores)), fmt(max(t.client_scores)), fmt(t.global_accuracy),
            ";".join(t.events), str(t.alpha_id), ";".join(str(b) for b in t.beta_ids),
        ]
        row += [_hp_cell(v) for v in t.alpha.as_dict().values()]
        row += [_hp_cell(v) for v in t.beta0.as_dict().values()]
        yield row


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def emit_reports(report: RunReport, config: ExperimentConfig, outdir: str | Path) -> Path:
    """Write summary.json, trace.csv and config_echo.json into ``outdir``."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create {out}: {exc.strerror}") from None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header(config))
    for seed, traces in report.traces:
        writer.writerows(trace_rows(seed, traces))
    _write(out / "trace.csv", buf.getvalue())
    _write(out / "summary.json", json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    _write(out / "config_echo.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def _grid_points(grid: Any) -> list[dict]:
    b = _Block(grid, "grid")
    axes = []
    for key, values in b.data.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key}", "expected a non-empty list of values")
        axes.append([(key, v) for v in values])
    return [dict(combo) for combo in itertools.product(*axes)]


def run_sweep(config: ExperimentConfig, grid: Any, outdir: str | Path) -> list[dict]:
    """One run per grid point, each in its own directory, plus ``manifest.json``.

    Grid keys are dotted config paths mapped to lists of values; points are
    the cartesian product. For random-search methods ``budget.total_rounds``
    follows ``num_configs * rounds_per_config`` unless the grid sets it.
    """
    out = Path(outdir)
    points = _grid_points(grid)
    configs = []
    for i, overrides in enumerate(points):
        doc = apply_overrides(config.to_dict(), overrides)
        if "budget.total_rounds" not in overrides and not doc["tuner"]["method"].endswith("sha"):
            doc["budget"]["total_rounds"] = doc["budget"]["num_configs"] * doc["budget"]["rounds_per_config"]
        try:
            configs.append(ExperimentConfig.from_dict(doc))
        except ConfigError as exc:
            raise ConfigError(f"grid point {i} ({exc.path})", str(exc)) from None
    manifest = []
    for i, (overrides, cfg) in enumerate(zip(points, configs)):
        name = f"point_{i:03d}"
        report = run_experiment(cfg)
        emit_reports(report, cfg, out / name)
        mean, std = report.stat("global_accuracy")
        manifest.append({"point": name, "overrides": overrides,
                         "global_accuracy": {"mean": _json_num(mean), "std": _json_num(std)}})
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _cell(stat: dict) -> str:
    if stat.get("mean") is None:
        return "n/a"
    s = f"{100 * stat['mean']:.2f}"
    if stat.get("std") is not None:
        s += f" ± {100 * stat['std']:.2f}"
    return s


def format_report(run_dir: str | Path) -> str:
    """Summary table for a run directory or a sweep directory."""
    run_dir = Path(run_dir)
    if (run_dir / "manifest.json").exists():
        manifest = json.loads((run_dir / "manifest.json").read_text())
        lines = [f"{'point':<12} {'global acc %':>16}  overrides"]
        for entry in manifest:
            lines.append(f"{entry['point']:<12} {_cell(entry['global_accuracy']):>16}  {json.dumps(entry['overrides'], sort_keys=True)}")
        return "\n".join(lines)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"no summary.json or manifest.json in {run_dir}")
    summary = json.loads(summary_path.read_text())
    agg = summary["aggregate"]
    lines = [
        f"method: {summary['method']}   seeds: {summary['num_seeds']}",
        f"{'seed':>6} {'global acc':>11} {'finetuned acc':>14} {'best':>5} {'#alpha':>7} {'#beta':>7}",
    ]
    for s in summary["per_seed"]:
        ga = "n/a" if s["global_accuracy"] is None else f"{100 * s['global_accuracy']:.2f}"
        fa = "n/a" if s["finetuned_accuracy"] is None else f"{100 * s['finetuned_accuracy']:.2f}"
        lines.append(f"{s['seed']:>6} {ga:>11} {fa:>14} {s['best_process']:>5} {s['num_alpha']:>7} {s['num_beta']:>7}")
    lines.append(f"global accuracy %:    {_cell(agg['global_accuracy'])}")
    lines.append(f"finetuned accuracy %: {_cell(agg['finetuned_accuracy'])}")
    return "\n".join(lines)

"""Metrics and experiment drivers: AUC, CDF curves, degradation tables, sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .drl import CostParams, DRLController, TrainSchedule, train_agent
from .errors import ConfigError, DegenerateLabelsError, EmptyInputError
from .features import FeatureCatalog, StateBuilder
from .myopic import (MyopicController, PredictorModel, WindowPredictorConfig, predict_exceed_prob,
                     train_predictor, training_indices, window_labels)
from .sim import SimResult, baseline_all, baseline_best_channel, baseline_fixed, baseline_random, run_episode
from .trace import SyntheticConfig, TraceDataset, cdf_at, generate_synthetic, load_trace


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def auc(scores, labels, exact: bool = False):
    """Mann-Whitney AUC with average ranks, so tied scores count one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateLabelsError("AUC needs both classes")
    # doubled average ranks are integers
    r2 = np.rint(2.0 * rankdata(s)[y]).astype(np.int64).sum()
    value = Fraction(int(r2) - n1 * (n1 + 1), 2 * n1 * n0)
    return value if exact else float(value)


# ---------------------------------------------------------------------------
# CDF curves
# ---------------------------------------------------------------------------


def delay_series(trace: TraceDataset) -> dict[str, np.ndarray]:
    """Delay samples behind the usual CDF comparison of a trace.

    ``min`` is the best replica per task, ``server_n`` each pipeline alone,
    ``average`` all pipelines pooled and ``best_rssi`` the pipeline with the
    strongest signal at each task.
    """
    d = trace.delay
    out = {"min": d.min(axis=1)}
    for n in range(trace.n_servers):
        out[f"server_{n + 1}"] = d[:, n].copy()
    out["average"] = d.ravel().copy()
    best = np.argmax(trace.rssi, axis=1)
    out["best_rssi"] = d[np.arange(trace.n_tasks), best]
    return out


def cdf_compare(datasets: Mapping[str, Sequence[float]], grid=None, n_points: int | None = None):
    """CDF of every named sample set on a common grid.

    The grid defaults to the union of all sample values, which makes
    pointwise comparisons exact; ``n_points`` instead spaces that many
    points evenly between the overall min and max.
    """
    if not datasets:
        raise EmptyInputError("no datasets")
    arrays = {k: np.asarray(v, dtype=float) for k, v in datasets.items()}
    if any(a.size == 0 for a in arrays.values()):
        raise EmptyInputError("empty sample set")
    if grid is None:
        allv = np.concatenate(list(arrays.values()))
        grid = (np.linspace(allv.min(), allv.max(), n_points) if n_points
                else np.unique(allv))
    grid = np.asarray(grid, dtype=float)
    return grid, {k: cdf_at(a, grid) for k, a in arrays.items()}


def write_cdf_csv(grid, curves: Mapping[str, np.ndarray], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "x", "cdf"])
        for name, f in curves.items():
            for x, y in zip(grid, f):
                w.writerow([name, repr(float(x)), repr(float(y))])


def read_cdf_csv(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["curve", "x", "cdf"]:
        raise ValueError("unexpected CDF header")
    out: dict[str, list] = {}
    for name, x, y in rows[1:]:
        out.setdefault(name, []).append((float(x), float(y)))
    return {k: (np.array([p[0] for p in v]), np.array([p[1] for p in v])) for k, v in out.items()}


# ---------------------------------------------------------------------------
# Predictor degradation under missing recent samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradationRow:
    window: int
    missing: int
    server: str
    auc: float


def missing_sources(indices, history: int, missing: int) -> np.ndarray:
    """Last-observation indices when the newest ``missing`` tasks were not sent to the server."""
    idx = np.asarray(indices, dtype=np.int64)
    tasks = idx[:, None] + np.arange(1 - history, 1)
    if missing <= 0:
        return tasks
    return np.maximum(np.minimum(tasks, (idx - missing)[:, None]), -1)


def degradation_study(predictors: Mapping[int, PredictorModel], dataset: TraceDataset,
                      missing_recent: Sequence[int] = (0, 1, 2), servers: Sequence[int] | None = None
                      ) -> list[DegradationRow]:
    """AUC per (window, missing) when a server's most recent samples are hidden.

    ``predictors`` maps a window length W to a model trained for it. The
    same test indices are used for every ``missing`` value so rows are
    paired. Rows with ``server == "mean"`` average the per-server AUCs.
    """
    rows: list[DegradationRow] = []
    for w, model in sorted(predictors.items()):
        cfg = model.config
        builder = StateBuilder(dataset, model.catalog, cfg.history)
        idx = training_indices(dataset.n_tasks, cfg.history, cfg.window)
        idx = idx[idx >= cfg.history - 1 + max(missing_recent)]
        chosen = range(dataset.n_servers) if servers is None else servers
        for m in missing_recent:
            src = missing_sources(idx, cfg.history, m)
            per = []
            for n in chosen:
                labels = window_labels(dataset.delay[:, n], cfg.delta_star, cfg.window, cfg.min_exceed)[idx]
                p = predict_exceed_prob(model, builder.server_batch_from_sources(idx, n, src), n)
                a = auc(p, labels)
                per.append(a)
                rows.append(DegradationRow(w, m, str(n + 1), a))
            rows.append(DegradationRow(w, m, "mean", float(np.mean(per))))
    return rows


def write_degradation_csv(rows: Sequence[DegradationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "missing", "server", "auc"])
        for r in rows:
            w.writerow([r.window, r.missing, r.server, repr(r.auc)])


def read_degradation_csv(path) -> list[DegradationRow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["window", "missing", "server", "auc"]:
        raise ValueError("unexpected degradation header")
    return [DegradationRow(int(a), int(b), c, float(d)) for a, b, c, d in rows[1:]]


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

CONTROLLER_KINDS = ("all", "best-rssi", "random", "fixed", "myopic", "drl")
DEFAULT_DELTAS = (0.01, 0.05, 0.1, 0.2, 0.4)
DEFAULT_LAMBDAS = (0.05, 0.1, 0.2, 0.5)


@dataclass
class ControllerSpec:
    kind: str
    params: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller kind {self.kind!r}")
        if self.kind == "myopic" and not self.params:
            self.params = list(DEFAULT_DELTAS)
        if self.kind == "drl" and not self.params:
            self.params = list(DEFAULT_LAMBDAS)
        if self.kind == "fixed" and not self.params:
            raise ConfigError("fixed controller needs server ids")


@dataclass
class ExperimentSpec:
    """Everything a sweep needs; serialised as JSON.

    ``trace_path`` replays one recorded trace for every seed; otherwise
    ``synthetic`` (a :class:`SyntheticConfig` dict) is regenerated per seed
    with its seed replaced.
    """

    controllers: list
    seeds: list
    delta_star: float = 0.175
    output_dir: str = "results"
    trace_path: str | None = None
    synthetic: dict | None = None
    train_fraction: float = 0.8
    history: int = 3
    catalog: dict | None = None
    predictor: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)

    def __post_init__(self):
        self.controllers = [c if isinstance(c, ControllerSpec) else ControllerSpec(**c) for c in self.controllers]
        if not self.controllers:
            raise ConfigError("at least one controller is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if (self.trace_path is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of trace_path or synthetic")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"malformed experiment spec: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SweepRow:
    controller: str
    param: str
    seed: str
    avg_set_size: float
    fraction_below: float


def spec_trace(spec: ExperimentSpec, seed: int) -> TraceDataset:
    if spec.trace_path is not None:
        return load_trace(spec.trace_path)
    cfg = dict(spec.synthetic)
    cfg["seed"] = int(seed)
    return generate_synthetic(SyntheticConfig.from_dict(cfg))


def spec_catalog(spec: ExperimentSpec, train: TraceDataset) -> FeatureCatalog:
    base = FeatureCatalog.from_dict(spec.catalog) if spec.catalog else FeatureCatalog.default()
    return base.fit(train)


def run_cell(spec: ExperimentSpec, seed: int, on_result=None) -> list[SweepRow]:
    """Every controller and parameter for one seed; ``on_result`` sees each SimResult."""
    trace = spec_trace(spec, seed)
    train, test = trace.split(spec.train_fraction)
    catalog = spec_catalog(spec, train)
    builder = StateBuilder(test, catalog, spec.history)
    n = trace.n_servers
    rows = []
    predictor = None

    def play(controller, label, param):
        res = run_episode(test, controller, catalog, spec.delta_star, spec.history, builder)
        res.name = label if param == "" else f"{label}({param})"
        rows.append(SweepRow(label, param, str(seed), res.avg_set_size, res.fraction_below))
        if on_result is not None:
            on_result(seed, label, param, res)

    for c in spec.controllers:
        if c.kind == "all":
            play(baseline_all(n), "all-servers", "")
        elif c.kind == "best-rssi":
            play(baseline_best_channel(catalog), "best-rssi", "")
        elif c.kind == "random":
            play(baseline_random(n, seed), "random", "")
        elif c.kind == "fixed":
            for s in c.params:
                play(baseline_fixed(int(s), n), "fixed", str(int(s)))
        elif c.kind == "myopic":
            if predictor is None:
                cfg = WindowPredictorConfig(**{"delta_star": spec.delta_star, "history": spec.history,
                                               **spec.predictor, "seed": seed})
                predictor = train_predictor(train, catalog, cfg)
            for delta in c.params:
                play(MyopicController(predictor, float(delta)), "myopic", repr(float(delta)))
        elif c.kind == "drl":
            for lam in c.params:
                sched = TrainSchedule(**{"history": spec.history, **spec.agent, "seed": seed})
                params = CostParams.default(n, float(lam), spec.delta_star)
                trained = train_agent(train, catalog, params, sched)
                play(DRLController(trained.agent), "drl", repr(float(lam)))
    return rows


def seed_means(rows: Sequence[SweepRow]) -> list[SweepRow]:
    groups: dict[tuple, list[SweepRow]] = {}
    for r in rows:
        groups.setdefault((r.controller, r.param), []).append(r)
    return [SweepRow(k[0], k[1], "mean", float(np.mean([r.avg_set_size for r in g])),
                     float(np.mean([r.fraction_below for r in g]))) for k, g in groups.items()]


def tradeoff_sweep(spec: ExperimentSpec, on_result=None) -> list[SweepRow]:
    """Per-seed rows for every (controller, parameter), then seed-averaged rows."""
    rows: list[SweepRow] = []
    for seed in spec.seeds:
        rows += run_cell(spec, int(seed), on_result)
    return rows + seed_means(rows)


SWEEP_HEADER = ["controller", "param", "seed", "avg_set_size", "fraction_below"]


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r.controller, r.param, r.seed, repr(r.avg_set_size), repr(r.fraction_below)])


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != SWEEP_HEADER:
        raise ValueError("unexpected sweep header")
    return [SweepRow(a, b, c, float(d), float(e)) for a, b, c, d, e in rows[1:]]


# ---------------------------------------------------------------------------
# Decision traces
# ---------------------------------------------------------------------------


def decision_header(n_servers: int) -> list[str]:
    return (["task", "selection", "delta_min"] + [f"selected_{n + 1}" for n in range(n_servers)]
            + [f"hidden_{n + 1}" for n in range(n_servers)])


def decision_trace(result: SimResult) -> list[list[str]]:
    """Rows of selected and non-selected replica delays per task; blanks where absent."""
    n = result.n_servers
    rows = [decision_header(n)]
    for k in range(len(result)):
        mask = int(result.selection[k])
        sel = ["" for _ in range(n)]
        hid = ["" for _ in range(n)]
        members = []
        for s in range(n):
            v = repr(float(result.delays[k, s]))
            if mask >> s & 1:
                sel[s] = v
                members.append(str(s + 1))
            else:
                hid[s] = v
        rows.append([str(int(result.task_index[k])), "{" + ",".join(members) + "}",
                     repr(float(result.delta_min[k]))] + sel + hid)
    return rows


def write_decision_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(decision_trace(result))


def read_decision_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

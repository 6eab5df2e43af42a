"""Trace replay: controllers pick server sets, the trace supplies the delays."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ConfigError, ContractViolationError, EmptyInputError
from .features import FeatureCatalog, FeatureState, StateBuilder
from .serverset import ServerSet
from .trace import TraceDataset, empirical_cdf


@runtime_checkable
class Controller(Protocol):
    name: str

    def select(self, state: FeatureState) -> ServerSet: ...


class AllServers:
    def __init__(self, n_servers: int):
        self.n_servers = n_servers
        self.name = "all-servers"

    def select(self, state: FeatureState) -> ServerSet:
        return ServerSet.full(self.n_servers)


class FixedServer:
    def __init__(self, server: int, n_servers: int):
        self.choice = ServerSet.of([server], n_servers)
        self.name = f"fixed-{server}"

    def select(self, state: FeatureState) -> ServerSet:
        return self.choice


class RandomSingleton:
    def __init__(self, n_servers: int, seed: int = 0):
        self.n_servers = n_servers
        self.rng = np.random.default_rng(seed)
        self.name = "random"

    def select(self, state: FeatureState) -> ServerSet:
        return ServerSet.of([int(self.rng.integers(self.n_servers)) + 1], self.n_servers)


class BestChannel:
    """Server with the highest current RSSI; ties go to the lowest id."""

    def __init__(self, catalog: FeatureCatalog):
        if "rssi" not in catalog.names:
            raise ConfigError("best-channel baseline needs 'rssi' in the catalog")
        self.feature = catalog.index("rssi")
        self.name = "best-rssi"

    def select(self, state: FeatureState) -> ServerSet:
        # every server shares the same normalisation, so ranking is unchanged
        rssi = state.values[:, self.feature, -1]
        return ServerSet.of([int(np.argmax(rssi)) + 1], state.n_servers)


def baseline_all(n_servers: int) -> AllServers:
    return AllServers(n_servers)


def baseline_fixed(server: int, n_servers: int) -> FixedServer:
    return FixedServer(server, n_servers)


def baseline_random(n_servers: int, seed: int = 0) -> RandomSingleton:
    return RandomSingleton(n_servers, seed)


def baseline_best_channel(catalog: FeatureCatalog) -> BestChannel:
    return BestChannel(catalog)


@dataclass(frozen=True)
class TaskRecord:
    task_index: int
    selection: ServerSet
    delays: np.ndarray  # every server's delay, selected or not
    delta_min: float
    below: bool


@dataclass
class SimResult:
    """Per-task outcome arrays; ``delays`` keeps the replicas the controller never saw."""

    name: str
    n_servers: int
    delta_star: float
    task_index: np.ndarray
    selection: np.ndarray  # bitmasks
    delays: np.ndarray  # (M, N)
    delta_min: np.ndarray
    below: np.ndarray

    def __len__(self) -> int:
        return self.task_index.size

    @property
    def set_size(self) -> np.ndarray:
        bits = (self.selection[:, None] >> np.arange(self.n_servers)) & 1
        return bits.sum(axis=1)

    @property
    def fraction_below(self) -> float:
        if not len(self):
            raise EmptyInputError("empty result")
        return float(np.mean(self.below))

    @property
    def avg_set_size(self) -> float:
        if not len(self):
            raise EmptyInputError("empty result")
        return float(np.mean(self.set_size))

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        return empirical_cdf(self.delta_min)

    def records(self):
        for k in range(len(self)):
            yield TaskRecord(int(self.task_index[k]), ServerSet(int(self.selection[k]), self.n_servers),
                             self.delays[k].copy(), float(self.delta_min[k]), bool(self.below[k]))

    def summary(self) -> dict:
        return {"controller": self.name, "n_tasks": len(self), "delta_star": self.delta_star,
                "fraction_below": self.fraction_below, "avg_set_size": self.avg_set_size}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimResult):
            return NotImplemented
        return (self.name == other.name and self.n_servers == other.n_servers
                and self.delta_star == other.delta_star
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("task_index", "selection", "delays", "delta_min", "below")))


def _check_selection(sel, n_servers: int) -> ServerSet:
    if isinstance(sel, ServerSet):
        if sel.n_servers != n_servers:
            raise ContractViolationError("controller returned a set for the wrong server count")
        return sel
    try:
        return ServerSet(int(sel), n_servers)
    except (TypeError, ValueError, ContractViolationError) as exc:
        raise ContractViolationError(f"controller returned an invalid selection: {exc}") from None


def run_episode(trace: TraceDataset, controller, catalog: FeatureCatalog, delta_star: float = 0.175,
                history: int = 3, builder: StateBuilder | None = None) -> SimResult:
    """Replay ``trace`` under ``controller``.

    Tasks ``0..history-1`` go to every server to fill the history and are
    not scored. From then on the state after task t-1, built from the
    controller's own past selections, decides task t.
    """
    n = trace.n_servers
    if trace.n_tasks <= history:
        raise ConfigError("trace must be longer than the history length")
    if builder is None:
        builder = StateBuilder(trace, catalog, history)
    tracker = builder.tracker()
    full = ServerSet.full(n)
    for t in range(history):
        tracker.record(t, full)
    delays = trace.delay
    m = trace.n_tasks - history
    sel = np.empty(m, dtype=np.int64)
    dmin = np.empty(m)
    bits = 1 << np.arange(n)
    observe = getattr(controller, "observe", None)
    for k, t in enumerate(range(history, trace.n_tasks)):
        choice = _check_selection(controller.select(tracker.state()), n)
        chosen = (choice.mask & bits) > 0
        dmin[k] = delays[t, chosen].min()
        sel[k] = choice.mask
        tracker.record(t, choice)
        if observe is not None:
            observe(t, choice, np.where(chosen, delays[t], np.nan))
    return SimResult(getattr(controller, "name", type(controller).__name__), n, float(delta_star),
                     np.arange(history, trace.n_tasks), sel, delays[history:].copy(), dmin,
                     dmin <= delta_star)


@dataclass(frozen=True)
class RtopReport:
    delta: float
    violation_prob: float
    satisfied: bool
    expected_set_size: float
    n_tasks: int


def rtop_accounting(result: SimResult, delta: float) -> RtopReport:
    """Empirical objective and constraint of the offloading problem."""
    if not len(result):
        raise EmptyInputError("empty result")
    viol = float(np.mean(result.delta_min > result.delta_star))
    return RtopReport(delta, viol, viol < delta, result.avg_set_size, len(result))


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def result_header(n_servers: int) -> list[str]:
    return (["task", "selection", "set_size"] + [f"delay_{n + 1}" for n in range(n_servers)]
            + ["delta_min", "below"])


def write_result_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps({"controller": result.name, "n_servers": result.n_servers,
                                     "delta_star": result.delta_star}, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(result_header(result.n_servers))
        sizes = result.set_size
        for k in range(len(result)):
            w.writerow([int(result.task_index[k]), int(result.selection[k]), int(sizes[k])]
                       + [repr(float(x)) for x in result.delays[k]]
                       + [repr(float(result.delta_min[k])), int(result.below[k])])


def read_result_csv(path) -> SimResult:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError("missing result header line")
        meta = json.loads(first[2:])
        rows = list(csv.reader(fh))
    n = meta["n_servers"]
    if rows[0] != result_header(n):
        raise ValueError("unexpected result columns")
    body = rows[1:]
    return SimResult(
        meta["controller"], n, meta["delta_star"],
        np.array([int(r[0]) for r in body], dtype=np.int64),
        np.array([int(r[1]) for r in body], dtype=np.int64),
        np.array([[float(x) for x in r[3:3 + n]] for r in body]).reshape(len(body), n),
        np.array([float(r[3 + n]) for r in body]),
        np.array([r[4 + n] == "1" for r in body], dtype=bool),
    )


def write_summary_json(results, path) -> None:
    with open(path, "w") as fh:
        json.dump([r.summary() for r in results], fh, indent=2, sort_keys=True)
        fh.write("\n")

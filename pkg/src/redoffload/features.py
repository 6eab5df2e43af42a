"""State construction: per-server F x L feature matrices with observation masks.

Features of a pipeline (delays, transport statistics) are only observed for
tasks the server actually received. For every other task the matrix carries
the last observed value, a ``False`` mask bit and a staleness age counted in
tasks. Telemetry-derived features are always observed.

Flattening order of a :class:`FeatureState` is server-major, then feature,
then lag (oldest slot first).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractViolationError, InsufficientHistoryError
from .geo import EARTH_RADIUS_M
from .serverset import ServerSet
from .trace import TCP_FEATURES, TraceDataset

BLOCKS = ("application", "telemetry", "network", "latent")
AGE_HORIZON = 1000.0


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    block: str
    units: str
    mean: float = 0.0
    std: float = 1.0
    masked: bool = False
    lag: int = 0  # read the raw value ``lag`` tasks earlier

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise ConfigError(f"unknown block {self.block!r}")
        if not self.std > 0:
            raise ConfigError(f"feature {self.name}: normalisation std must be > 0")
        if self.lag < 0:
            raise ConfigError("feature lag must be >= 0")


# --- raw extractors: dataset -> (T, N) array ------------------------------


def _geometry(ds: TraceDataset):
    """Distance (m), azimuth drone->server (deg) and elevation (deg) per (task, server)."""
    lat = np.radians(ds.position[:, 0])[:, None]
    lon = np.radians(ds.position[:, 1])[:, None]
    slat = np.radians(ds.server_positions[:, 0])[None, :]
    slon = np.radians(ds.server_positions[:, 1])[None, :]
    dphi, dlmb = slat - lat, slon - lon
    a = np.sin(dphi / 2) ** 2 + np.cos(lat) * np.cos(slat) * np.sin(dlmb / 2) ** 2
    ground = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0, 1)))
    dalt = ds.position[:, 2][:, None] - ds.server_positions[:, 2][None, :]
    dist = np.hypot(ground, dalt)
    y = np.sin(dlmb) * np.cos(slat)
    x = np.cos(lat) * np.sin(slat) - np.sin(lat) * np.cos(slat) * np.cos(dlmb)
    az = np.where(ground > 0, np.degrees(np.arctan2(y, x)) % 360.0, 0.0)
    el = np.where(dist > 0, np.degrees(np.arctan2(dalt, ground)), 0.0)
    return dist, az, el


def _per_task(v: np.ndarray, ds: TraceDataset) -> np.ndarray:
    return np.repeat(np.asarray(v, dtype=float)[:, None], ds.n_servers, axis=1)


def _rel_heading(ds):
    _, az, _ = _geometry(ds)
    return np.radians(np.mod(az - ds.heading[:, None] + 180.0, 360.0) - 180.0)


def _radial_speed(ds):
    """Rate of approach to the server (positive when closing in), m/s."""
    _, az, el = _geometry(ds)
    azr, elr = np.radians(az), np.radians(el)
    # unit vector drone -> server in east/north/up
    ue = np.sin(azr) * np.cos(elr)
    un = np.cos(azr) * np.cos(elr)
    uu = -np.sin(elr)
    v = ds.velocity
    return v[:, 0:1] * ue + v[:, 1:2] * un + v[:, 2:3] * uu


def _inclination(ds):
    a = ds.acceleration
    return _per_task(np.degrees(np.arctan2(np.hypot(a[:, 0], a[:, 1]), 9.81 + a[:, 2])), ds)


EXTRACTORS: dict[str, Callable[[TraceDataset], np.ndarray]] = {
    "delay": lambda ds: ds.delay,
    "comm_delay": lambda ds: ds.comm_delay,
    "comp_delay": lambda ds: ds.comp_delay,
    "rssi": lambda ds: ds.rssi,
    "mcs_index": lambda ds: ds.mcs.astype(float),
    **{f"tcp_{name}": (lambda k: (lambda ds: ds.tcp[:, :, k]))(k) for k, name in enumerate(TCP_FEATURES)},
    "altitude": lambda ds: _per_task(ds.position[:, 2], ds),
    "speed": lambda ds: _per_task(np.linalg.norm(ds.velocity, axis=1), ds),
    "vertical_speed": lambda ds: _per_task(ds.velocity[:, 2], ds),
    "accel_norm": lambda ds: _per_task(np.linalg.norm(ds.acceleration, axis=1), ds),
    "gyro_norm": lambda ds: _per_task(np.linalg.norm(ds.gyroscope, axis=1), ds),
    "inclination": _inclination,
    "heading_sin": lambda ds: _per_task(np.sin(np.radians(ds.heading)), ds),
    "heading_cos": lambda ds: _per_task(np.cos(np.radians(ds.heading)), ds),
    "distance": lambda ds: _geometry(ds)[0],
    "azimuth_sin": lambda ds: np.sin(np.radians(_geometry(ds)[1])),
    "azimuth_cos": lambda ds: np.cos(np.radians(_geometry(ds)[1])),
    "elevation": lambda ds: _geometry(ds)[2],
    "rel_heading_sin": lambda ds: np.sin(_rel_heading(ds)),
    "rel_heading_cos": lambda ds: np.cos(_rel_heading(ds)),
    "radial_speed": _radial_speed,
    "cpu_util": lambda ds: _per_task(ds.onboard[:, 0], ds),
    "gpu_util": lambda ds: _per_task(ds.onboard[:, 1], ds),
    "ram_util": lambda ds: _per_task(ds.onboard[:, 2], ds),
}


def _regime(ds: TraceDataset) -> np.ndarray:
    if ds.regime is None:
        raise ConfigError("feature 'regime' needs a trace with ground-truth regimes")
    return ds.regime.astype(float)


EXTRACTORS["regime"] = _regime

_DEFAULTS = [
    ("delay", "application", "s", True),
    ("comm_delay", "application", "s", True),
    ("comp_delay", "application", "s", True),
    ("tcp_retransmissions", "network", "count", True),
    ("tcp_cwnd", "network", "segments", True),
    ("tcp_rtt_avg", "network", "s", True),
    ("tcp_timeouts", "network", "count", True),
    ("tcp_packets_received", "network", "count", True),
    ("mcs_index", "network", "index", True),
    # RSSI comes from beacons on every interface, so it is seen without sending
    ("rssi", "network", "dBm", False),
    ("altitude", "telemetry", "m", False),
    ("speed", "telemetry", "m/s", False),
    ("vertical_speed", "telemetry", "m/s", False),
    ("accel_norm", "telemetry", "m/s^2", False),
    ("gyro_norm", "telemetry", "rad/s", False),
    ("inclination", "telemetry", "deg", False),
    ("heading_sin", "telemetry", "1", False),
    ("heading_cos", "telemetry", "1", False),
    ("distance", "telemetry", "m", False),
    ("azimuth_sin", "telemetry", "1", False),
    ("azimuth_cos", "telemetry", "1", False),
    ("elevation", "telemetry", "deg", False),
    ("rel_heading_sin", "telemetry", "1", False),
    ("rel_heading_cos", "telemetry", "1", False),
    ("radial_speed", "telemetry", "m/s", False),
    ("cpu_util", "application", "fraction", False),
    ("gpu_util", "application", "fraction", False),
    ("ram_util", "application", "fraction", False),
]


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        unknown = [n for n in names if n not in EXTRACTORS]
        if unknown:
            raise ConfigError(f"no extractor for features {unknown}")
        if not self.entries:
            raise ConfigError("catalog is empty")

    @classmethod
    def default(cls) -> "FeatureCatalog":
        return cls(tuple(FeatureSpec(n, b, u, masked=m) for n, b, u, m in _DEFAULTS))

    @classmethod
    def of(cls, *names: str, masked: Sequence[str] | None = None) -> "FeatureCatalog":
        """Sub-catalog of default entries (``regime`` allowed as a latent feature)."""
        table = {n: (b, u, m) for n, b, u, m in _DEFAULTS}
        table["regime"] = ("latent", "index", False)
        entries = []
        for n in names:
            b, u, m = table[n]
            if masked is not None:
                m = n in masked
            entries.append(FeatureSpec(n, b, u, masked=m))
        return cls(tuple(entries))

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def masked(self) -> np.ndarray:
        return np.array([e.masked for e in self.entries], dtype=np.bool_)

    def __len__(self):
        return len(self.entries)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def raw(self, dataset: TraceDataset) -> np.ndarray:
        """Unnormalised feature tensor ``(T, N, F)``."""
        cols = []
        for e in self.entries:
            v = np.asarray(EXTRACTORS[e.name](dataset), dtype=float)
            if e.lag:
                v = np.concatenate([np.repeat(v[:1], e.lag, axis=0), v[:-e.lag]])[: dataset.n_tasks]
            cols.append(v)
        return np.ascontiguousarray(np.stack(cols, axis=2))

    def fit(self, dataset: TraceDataset) -> "FeatureCatalog":
        """Catalog with normalisation statistics estimated over ``dataset``."""
        x = self.raw(dataset).reshape(-1, len(self))
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        entries = tuple(
            replace(e, mean=float(m), std=float(s) if s > 1e-12 else 1.0)
            for e, m, s in zip(self.entries, mean, std)
        )
        return FeatureCatalog(entries)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        mean = np.array([e.mean for e in self.entries])
        std = np.array([e.std for e in self.entries])
        return (x - mean) / std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        mean = np.array([e.mean for e in self.entries])
        std = np.array([e.std for e in self.entries])
        return z * std + mean

    def tensor(self, dataset: TraceDataset) -> np.ndarray:
        """Normalised feature tensor ``(T, N, F)``."""
        return np.ascontiguousarray(self.normalize(self.raw(dataset)))

    def to_dict(self) -> dict:
        return {"entries": [asdict(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureCatalog":
        try:
            return cls(tuple(FeatureSpec(**e) for e in d["entries"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed catalog: {exc}") from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "FeatureCatalog":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class FeatureMatrix:
    server_id: int
    values: np.ndarray  # (F, L)
    mask: np.ndarray  # (F, L), True = observed
    staleness: np.ndarray  # (F,), tasks since the last observation at the newest slot


@dataclass(frozen=True)
class FeatureState:
    task_index: int
    values: np.ndarray  # (N, F, L)
    mask: np.ndarray  # (N, F, L)
    staleness: np.ndarray  # (N, F) int

    @property
    def n_servers(self) -> int:
        return self.values.shape[0]

    @property
    def per_server(self) -> list[FeatureMatrix]:
        return [FeatureMatrix(n + 1, self.values[n], self.mask[n], self.staleness[n])
                for n in range(self.n_servers)]

    @property
    def flattened(self) -> np.ndarray:
        return np.concatenate([self.values.ravel(), self.mask.ravel().astype(float),
                               self.staleness.ravel().astype(float)])


def _age_code(age: np.ndarray) -> np.ndarray:
    return np.minimum(np.log1p(age) / np.log1p(AGE_HORIZON), 1.0)


def encode_state(state: FeatureState, masked: np.ndarray | None = None) -> np.ndarray:
    """Network input for the whole state: values, then mask bits and log-scaled ages.

    Mask bits and ages are emitted only for ``masked`` features; for the rest
    they are constant (always observed, age 0) and carry no information.
    ``None`` keeps every feature.
    """
    sel = slice(None) if masked is None else np.asarray(masked, dtype=bool)
    return np.concatenate([state.values.ravel(), state.mask[:, sel, :].ravel().astype(float),
                           _age_code(state.staleness[:, sel].ravel().astype(float))])


def encode_server(state: FeatureState, server: int, masked: np.ndarray | None = None) -> np.ndarray:
    """Network input for one server's matrix (0-based ``server``), same layout as :func:`encode_state`."""
    sel = slice(None) if masked is None else np.asarray(masked, dtype=bool)
    return np.concatenate([state.values[server].ravel(), state.mask[server, sel, :].ravel().astype(float),
                           _age_code(state.staleness[server, sel].astype(float))])


def server_input_size(n_features: int, history: int, n_masked: int | None = None) -> int:
    n_masked = n_features if n_masked is None else n_masked
    return n_features * history + n_masked * (history + 1)


def state_size(n_servers: int, n_features: int, history: int, n_masked: int | None = None) -> int:
    return n_servers * server_input_size(n_features, history, n_masked)


def _as_masks(history) -> np.ndarray:
    if isinstance(history, np.ndarray) and history.dtype.kind in "iu":
        return history.astype(np.int64, copy=False)
    out = np.empty(len(history), dtype=np.int64)
    for k, h in enumerate(history):
        out[k] = h.mask if isinstance(h, ServerSet) else int(h)
    return out


def last_seen(selections, n_servers: int) -> np.ndarray:
    """``(T, N)`` index of the latest task <= t that server n received, or -1."""
    sel = _as_masks(selections)
    hit = ((sel[:, None] >> np.arange(n_servers)) & 1).astype(bool)
    idx = np.where(hit, np.arange(sel.shape[0])[:, None], -1)
    return np.maximum.accumulate(idx, axis=0) if sel.size else idx


class StateBuilder:
    """Precomputes the normalised feature tensor of a trace and cuts states from it."""

    def __init__(self, dataset: TraceDataset, catalog: FeatureCatalog, history: int = 3):
        if history < 1:
            raise ConfigError("history length must be >= 1")
        self.dataset = dataset
        self.catalog = catalog
        self.history = history
        self.values = catalog.tensor(dataset)
        self.masked = catalog.masked

    @property
    def n_servers(self) -> int:
        return self.dataset.n_servers

    def window(self, i: int) -> np.ndarray:
        return np.arange(i - self.history + 1, i + 1, dtype=np.int64)

    def build(self, i: int, selection_history) -> FeatureState:
        """State at task ``i``; ``selection_history[j]`` is the set used for task ``j``."""
        if i < self.history - 1:
            raise InsufficientHistoryError(f"task {i} has fewer than {self.history} predecessors")
        if i >= self.dataset.n_tasks:
            raise ContractViolationError(f"task {i} beyond trace end")
        sel = _as_masks(selection_history)
        if sel.shape[0] < i + 1:
            raise InsufficientHistoryError("selection history must cover tasks 0..i")
        tasks = self.window(i)
        last = _kernels.last_observed(sel, tasks, self.n_servers)
        return self.from_last_observed(i, last)

    def from_last_observed(self, i: int, last_obs: np.ndarray) -> FeatureState:
        vals, mask, age = _kernels.gather_window(self.values, self.masked, last_obs, self.window(i))
        return FeatureState(i, vals, mask, age)

    def tracker(self) -> "ObservationTracker":
        return ObservationTracker(self)

    def server_batch(self, indices, server: int, selections=None) -> np.ndarray:
        """Rows of ``encode_server(state, server, catalog.masked)`` for many task indices at once.

        ``selections`` is the per-task selection history; ``None`` means every
        server was used for every task (full observation).
        """
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and idx.min() < self.history - 1:
            raise InsufficientHistoryError("indices need a full history window")
        tasks = idx[:, None] + np.arange(1 - self.history, 1)  # (M, L)
        if selections is None:
            src = tasks
        else:
            last = last_seen(selections, self.n_servers)
            if last.shape[0] <= idx.max(initial=-1):
                raise InsufficientHistoryError("selection history must cover every index")
            src = last[tasks, server]
        return self.server_batch_from_sources(idx, server, src)

    def server_batch_from_sources(self, indices, server: int, src) -> np.ndarray:
        """Like :meth:`server_batch` with explicit last-observation indices ``src`` of shape (M, L)."""
        idx = np.asarray(indices, dtype=np.int64)
        tasks = idx[:, None] + np.arange(1 - self.history, 1)
        src = np.asarray(src, dtype=np.int64)
        v = self.values[:, server, :]  # (T, F)
        raw = v[tasks]
        stale = np.where((src >= 0)[..., None], v[np.maximum(src, 0)], 0.0)
        m = self.masked
        vals = np.where(m, stale, raw).transpose(0, 2, 1)
        mask = np.broadcast_to((src == tasks)[:, None, :], (idx.size, int(m.sum()), self.history))
        age = np.broadcast_to((idx - src[:, -1])[:, None], (idx.size, int(m.sum())))
        return np.concatenate([vals.reshape(idx.size, -1), mask.reshape(idx.size, -1).astype(float),
                               _age_code(age.astype(float))], axis=1)


class ObservationTracker:
    """Incremental state construction for a run that records one task at a time."""

    def __init__(self, builder: StateBuilder):
        self.builder = builder
        self._last = np.full(builder.n_servers, -1, dtype=np.int64)
        self._rows: list[np.ndarray] = []
        self._next = 0
        self._bits = 1 << np.arange(builder.n_servers)

    def record(self, task: int, selection) -> None:
        if task != self._next:
            raise ContractViolationError(f"expected task {self._next}, got {task}")
        mask = selection.mask if isinstance(selection, ServerSet) else int(selection)
        self._last = np.where(mask & self._bits, task, self._last)
        self._rows.append(self._last.copy())
        if len(self._rows) > self.builder.history:
            self._rows.pop(0)
        self._next += 1

    def state(self) -> FeatureState:
        """State at the most recently recorded task."""
        i = self._next - 1
        if i < self.builder.history - 1:
            raise InsufficientHistoryError("not enough recorded tasks")
        return self.builder.from_last_observed(i, np.stack(self._rows))


def build_state(dataset: TraceDataset, catalog: FeatureCatalog, i: int, history: int,
                selection_history) -> FeatureState:
    """Pure-function form of :meth:`StateBuilder.build`."""
    if i < history - 1:
        raise InsufficientHistoryError(f"task {i} has fewer than {history} predecessors")
    return StateBuilder(dataset.slice(0, i + 1), catalog, history).build(i, selection_history)


def recent_missing_state(builder: StateBuilder, i: int, server: int, missing: int) -> FeatureState:
    """State at ``i`` under full observation except that ``server`` (0-based) skipped its last ``missing`` tasks."""
    tasks = builder.window(i)
    last = np.repeat(tasks[:, None], builder.n_servers, axis=1)
    if missing > 0:
        last[:, server] = np.maximum(np.minimum(tasks, i - missing), -1)
    return builder.from_last_observed(i, last)

"""Trace data model, CSV ingestion, synthetic trace generation and statistics.

A trace records, for every task and every edge server, the delay the task
would have experienced on that pipeline together with the network
statistics of the link, plus the drone telemetry shared across servers.
Storage is columnar (numpy arrays indexed ``[task, server]``); the record
types below are views for code that prefers per-row access.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.signal import lfilter

from . import _kernels
from .errors import ConfigError, EmptyInputError, IntegrityError, SchemaError, TraceValueError
from .geo import enu_to_geodetic

TCP_FEATURES = ("retransmissions", "cwnd", "rtt_avg", "timeouts", "packets_received")
FORMAT_NAME = "redoffload-trace"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PipelineSample:
    task_index: int
    server_id: int
    comm_delay: float
    comp_delay: float
    rssi: float
    tcp_features: tuple[float, ...]
    mcs_index: int

    @property
    def delay(self) -> float:
        return self.comm_delay + self.comp_delay


@dataclass(frozen=True)
class TelemetrySample:
    task_index: int
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    acceleration: tuple[float, float, float]
    gyroscope: tuple[float, float, float]
    heading: float
    onboard_stats: tuple[float, float, float]


def _arr(x, dtype=np.float64):
    return np.ascontiguousarray(np.asarray(x, dtype=dtype))


@dataclass(eq=False)
class TraceDataset:
    """Replayable record of per-(task, server) delays and shared telemetry.

    Array shapes, with ``T`` tasks and ``N`` servers:

    * ``comm_delay``, ``comp_delay``, ``rssi``: ``(T, N)`` float, seconds / dBm
    * ``tcp``: ``(T, N, 5)`` in :data:`TCP_FEATURES` order
    * ``mcs``: ``(T, N)`` int
    * ``position``: ``(T, 3)`` latitude, longitude (degrees), altitude (m)
    * ``velocity``, ``acceleration``, ``gyroscope``: ``(T, 3)``, east/north/up
    * ``heading``: ``(T,)`` degrees clockwise from north
    * ``onboard``: ``(T, 3)`` CPU/GPU/RAM utilisation fractions
    * ``regime``: optional ``(T, N)`` int, ground-truth state of synthetic traces
    """

    n_servers: int
    inter_arrival: float
    server_positions: np.ndarray
    comm_delay: np.ndarray
    comp_delay: np.ndarray
    rssi: np.ndarray
    tcp: np.ndarray
    mcs: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    gyroscope: np.ndarray
    heading: np.ndarray
    onboard: np.ndarray
    regime: np.ndarray | None = None

    def __post_init__(self):
        self.server_positions = _arr(self.server_positions)
        for name in ("comm_delay", "comp_delay", "rssi", "tcp", "position", "velocity",
                     "acceleration", "gyroscope", "heading", "onboard"):
            setattr(self, name, _arr(getattr(self, name)))
        self.mcs = _arr(self.mcs, np.int64)
        if self.regime is not None:
            self.regime = _arr(self.regime, np.int64)
        self._validate()

    def _validate(self):
        n, t = self.n_servers, self.comm_delay.shape[0] if self.comm_delay.ndim == 2 else -1
        if n < 1:
            raise IntegrityError("n_servers must be >= 1")
        if not (self.inter_arrival > 0 and math.isfinite(self.inter_arrival)):
            raise TraceValueError("inter_arrival must be positive")
        expect = {
            "server_positions": (n, 3), "comm_delay": (t, n), "comp_delay": (t, n),
            "rssi": (t, n), "tcp": (t, n, len(TCP_FEATURES)), "mcs": (t, n),
            "position": (t, 3), "velocity": (t, 3), "acceleration": (t, 3),
            "gyroscope": (t, 3), "heading": (t,), "onboard": (t, 3),
        }
        if self.regime is not None:
            expect["regime"] = (t, n)
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise IntegrityError(f"{name} has shape {got}, expected {shape}")
        if t < 1:
            raise EmptyInputError("trace holds no tasks")
        if not np.all(np.isfinite(self.comm_delay)) or not np.all(np.isfinite(self.comp_delay)):
            raise IntegrityError("missing or non-finite delay")
        if (self.comm_delay < 0).any() or (self.comp_delay < 0).any():
            raise TraceValueError("delays must be nonnegative")
        lat, lon = self.position[:, 0], self.position[:, 1]
        if (np.abs(lat) > 90).any() or (np.abs(lon) > 180).any():
            raise TraceValueError("position outside valid latitude/longitude range")
        if ((self.onboard < 0) | (self.onboard > 1)).any():
            raise TraceValueError("onboard utilisation must lie in [0, 1]")
        if ((self.heading < 0) | (self.heading >= 360)).any():
            raise TraceValueError("heading must lie in [0, 360)")

    @property
    def n_tasks(self) -> int:
        return self.comm_delay.shape[0]

    @property
    def delay(self) -> np.ndarray:
        """Capture-to-output delay, ``(T, N)``."""
        return self.comm_delay + self.comp_delay

    def samples(self) -> Iterator[PipelineSample]:
        for i in range(self.n_tasks):
            for n in range(self.n_servers):
                yield PipelineSample(
                    i, n + 1, float(self.comm_delay[i, n]), float(self.comp_delay[i, n]),
                    float(self.rssi[i, n]), tuple(float(v) for v in self.tcp[i, n]),
                    int(self.mcs[i, n]),
                )

    def telemetry(self) -> Iterator[TelemetrySample]:
        for i in range(self.n_tasks):
            yield TelemetrySample(
                i, tuple(map(float, self.position[i])), tuple(map(float, self.velocity[i])),
                tuple(map(float, self.acceleration[i])), tuple(map(float, self.gyroscope[i])),
                float(self.heading[i]), tuple(map(float, self.onboard[i])),
            )

    def slice(self, start: int, stop: int | None = None) -> "TraceDataset":
        """Contiguous sub-trace re-indexed from task 0."""
        sl = slice(start, stop)
        return TraceDataset(
            self.n_servers, self.inter_arrival, self.server_positions.copy(),
            self.comm_delay[sl], self.comp_delay[sl], self.rssi[sl], self.tcp[sl], self.mcs[sl],
            self.position[sl], self.velocity[sl], self.acceleration[sl], self.gyroscope[sl],
            self.heading[sl], self.onboard[sl],
            None if self.regime is None else self.regime[sl],
        )

    def split(self, train_fraction: float = 0.8) -> tuple["TraceDataset", "TraceDataset"]:
        """Contiguous train/test split by time."""
        cut = int(round(self.n_tasks * train_fraction))
        if not 0 < cut < self.n_tasks:
            raise EmptyInputError("split leaves an empty part")
        return self.slice(0, cut), self.slice(cut)

    _ARRAYS = ("server_positions", "comm_delay", "comp_delay", "rssi", "tcp", "mcs", "position",
               "velocity", "acceleration", "gyroscope", "heading", "onboard")

    def __eq__(self, other):
        if not isinstance(other, TraceDataset):
            return NotImplemented
        if (self.n_servers, self.inter_arrival) != (other.n_servers, other.inter_arrival):
            return False
        if (self.regime is None) != (other.regime is None):
            return False
        if self.regime is not None and not np.array_equal(self.regime, other.regime):
            return False
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in self._ARRAYS)

    __hash__ = None


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------

PIPELINE_COLUMNS = ("comm_delay", "comp_delay", "rssi") + tuple(f"tcp_{f}" for f in TCP_FEATURES) + ("mcs_index",)
TELEMETRY_COLUMNS = (
    "lat", "lon", "alt", "vel_e", "vel_n", "vel_u", "acc_e", "acc_n", "acc_u",
    "gyro_x", "gyro_y", "gyro_z", "heading", "cpu_util", "gpu_util", "ram_util",
)
KEY_COLUMNS = ("task_index", "server_id")


@dataclass(frozen=True)
class TraceSchema:
    """Maps the canonical column names to the names used in a file.

    The default schema is the identity; a recorded dataset with different
    headers can be read by passing ``TraceSchema({"comm_delay": "tx_s", ...})``.
    """

    rename: dict = field(default_factory=dict)

    def column(self, canonical: str) -> str:
        return self.rename.get(canonical, canonical)


DEFAULT_SCHEMA = TraceSchema()


def _fmt(x: float) -> str:
    return repr(float(x))


def save_trace(dataset: TraceDataset, path) -> None:
    """Write ``dataset`` as a headered CSV; floats are written with ``repr`` so they round-trip."""
    columns = list(KEY_COLUMNS + PIPELINE_COLUMNS)
    if dataset.regime is not None:
        columns.append("regime")
    columns += TELEMETRY_COLUMNS
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_servers": dataset.n_servers,
        "inter_arrival": dataset.inter_arrival,
        "server_positions": dataset.server_positions.tolist(),
        "columns": columns,
    }
    with open(path, "w", newline="") as fh:
        fh.write("#" + json.dumps(header) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for i in range(dataset.n_tasks):
            telem = (
                list(dataset.position[i]) + list(dataset.velocity[i]) + list(dataset.acceleration[i])
                + list(dataset.gyroscope[i]) + [dataset.heading[i]] + list(dataset.onboard[i])
            )
            for n in range(dataset.n_servers):
                row = [str(i), str(n + 1), _fmt(dataset.comm_delay[i, n]), _fmt(dataset.comp_delay[i, n]),
                       _fmt(dataset.rssi[i, n])]
                row += [_fmt(v) for v in dataset.tcp[i, n]]
                row.append(str(int(dataset.mcs[i, n])))
                if dataset.regime is not None:
                    row.append(str(int(dataset.regime[i, n])))
                row += [_fmt(v) for v in telem] if n == 0 else [""] * len(TELEMETRY_COLUMNS)
                w.writerow(row)


def _parse_header(line: str) -> dict:
    if not line.startswith("#"):
        raise SchemaError("first line must be a '#'-prefixed JSON header")
    try:
        header = json.loads(line[1:])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed header: {exc}") from None
    if not isinstance(header, dict):
        raise SchemaError("header must be a JSON object")
    for key in ("n_servers", "inter_arrival", "columns"):
        if key not in header:
            raise SchemaError(f"header lacks '{key}'")
    if not isinstance(header["columns"], list):
        raise SchemaError("header 'columns' must be a list")
    return header


def _float(cell: str, what: str, lineno: int) -> float:
    if cell == "":
        raise IntegrityError(f"line {lineno}: missing {what}")
    try:
        return float(cell)
    except ValueError:
        raise SchemaError(f"line {lineno}: {what} is not a number: {cell!r}") from None


def load_trace(path, schema: TraceSchema = DEFAULT_SCHEMA) -> TraceDataset:
    """Read a trace CSV written by :func:`save_trace` (or mapped by ``schema``)."""
    with open(path, newline="") as fh:
        header = _parse_header(fh.readline().rstrip("\n"))
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise SchemaError("missing column row") from None
        if names != header["columns"]:
            raise SchemaError("column row disagrees with header 'columns'")
        col = {name: k for k, name in enumerate(names)}
        required = KEY_COLUMNS + PIPELINE_COLUMNS + TELEMETRY_COLUMNS
        missing = [c for c in required if schema.column(c) not in col]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        idx = {c: col[schema.column(c)] for c in required}
        has_regime = schema.column("regime") in col
        try:
            n = int(header["n_servers"])
            inter_arrival = float(header["inter_arrival"])
        except (TypeError, ValueError):
            raise SchemaError("n_servers / inter_arrival malformed") from None
        if n < 1:
            raise SchemaError("n_servers must be >= 1")

        pipe: dict[tuple[int, int], list] = {}
        telem: dict[int, list] = {}
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(names):
                raise SchemaError(f"line {lineno}: expected {len(names)} fields, got {len(row)}")
            try:
                task = int(row[idx["task_index"]])
                server = int(row[idx["server_id"]])
            except ValueError:
                raise SchemaError(f"line {lineno}: bad task/server key") from None
            if not 1 <= server <= n:
                raise IntegrityError(f"line {lineno}: server_id {server} outside 1..{n}")
            if (task, server) in pipe:
                raise IntegrityError(f"line {lineno}: duplicate row for task {task}, server {server}")
            vals = [_float(row[idx[c]], c, lineno) for c in PIPELINE_COLUMNS]
            if vals[0] < 0 or vals[1] < 0:
                raise TraceValueError(f"line {lineno}: negative delay")
            if has_regime:
                vals.append(int(row[col[schema.column("regime")]]))
            pipe[(task, server)] = vals
            if server == 1:
                telem[task] = [_float(row[idx[c]], c, lineno) for c in TELEMETRY_COLUMNS]

    if not pipe:
        raise EmptyInputError("trace file holds no rows")
    tasks = sorted({t for t, _ in pipe})
    if tasks[0] != 0 or tasks[-1] != len(tasks) - 1:
        raise IntegrityError("task indices are not contiguous from 0")
    t_count = len(tasks)
    for i in range(t_count):
        for s in range(1, n + 1):
            if (i, s) not in pipe:
                raise IntegrityError(f"task {i} lacks a row for server {s}")
    arr = np.array([pipe[(i, s)] for i in range(t_count) for s in range(1, n + 1)], dtype=np.float64)
    arr = arr.reshape(t_count, n, -1)
    tel = np.array([telem[i] for i in range(t_count)], dtype=np.float64)
    positions = header.get("server_positions")
    if positions is None:
        raise SchemaError("header lacks 'server_positions'")
    return TraceDataset(
        n_servers=n,
        inter_arrival=inter_arrival,
        server_positions=np.asarray(positions, dtype=float),
        comm_delay=arr[:, :, 0],
        comp_delay=arr[:, :, 1],
        rssi=arr[:, :, 2],
        tcp=arr[:, :, 3:3 + len(TCP_FEATURES)],
        mcs=arr[:, :, 3 + len(TCP_FEATURES)].astype(np.int64),
        position=tel[:, 0:3],
        velocity=tel[:, 3:6],
        acceleration=tel[:, 6:9],
        gyroscope=tel[:, 9:12],
        heading=tel[:, 12],
        onboard=tel[:, 13:16],
        regime=arr[:, :, -1].astype(np.int64) if has_regime else None,
    )


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WaypointModel:
    radius: float = 30.0
    altitude_range: tuple[float, float] = (5.0, 15.0)
    speed_range: tuple[float, float] = (1.0, 4.0)
    reach: float = 3.0
    smoothing: float = 1.0  # velocity time constant, seconds

    def __post_init__(self):
        # JSON hands ranges back as lists
        object.__setattr__(self, "altitude_range", tuple(float(v) for v in self.altitude_range))
        object.__setattr__(self, "speed_range", tuple(float(v) for v in self.speed_range))


@dataclass(frozen=True)
class RssiModel:
    path_loss_exponent: float = 2.2
    reference_power: float = -30.0  # dBm at 1 m
    shadowing_std: float = 4.0


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the Markov-modulated trace generator.

    Regimes are indexed in the order given; ``regime_delay_params[k]`` is the
    (mean, std) of the capture-to-output delay in regime ``k``. ``ar_coeff``
    adds short-term AR(1) correlation to the within-regime noise and
    ``heading_coupling`` tilts regime transitions toward slower regimes while
    a server sits behind the drone. Both default to 0, which gives i.i.d.
    draws from a time-homogeneous chain.
    """

    n_servers: int = 3
    n_tasks: int = 10_000
    regimes_per_server: int = 2
    regime_delay_params: tuple = ((0.15, 0.01), (0.30, 0.05))
    regime_transition: tuple = ((0.98, 0.02), (0.02, 0.98))
    telemetry_model: WaypointModel = WaypointModel()
    rssi_model: RssiModel = RssiModel()
    seed: int = 0
    inter_arrival: float = 1.0 / 15.0
    comp_delay: float = 0.010
    telemetry_rate: float = 5.0
    ar_coeff: float = 0.0
    heading_coupling: float = 0.0
    server_ring_radius: float = 15.0
    origin: tuple[float, float, float] = (33.6430, -117.8420, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "regime_delay_params",
                           tuple(tuple(map(float, r)) for r in self.regime_delay_params))
        object.__setattr__(self, "regime_transition",
                           tuple(tuple(map(float, r)) for r in self.regime_transition))
        self.validate()

    def validate(self):
        k = self.regimes_per_server
        if self.n_servers < 1 or self.n_tasks < 1:
            raise ConfigError("n_servers and n_tasks must be >= 1")
        if k < 1 or len(self.regime_delay_params) != k:
            raise ConfigError("regime_delay_params must hold one (mean, std) per regime")
        p = np.asarray(self.regime_transition, dtype=float)
        if p.shape != (k, k):
            raise ConfigError(f"regime_transition must be {k}x{k}")
        if (p < 0).any() or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("regime_transition must be row-stochastic")
        for mean, std in self.regime_delay_params:
            if not mean > 0 or std < 0:
                raise ConfigError("regime means must be > 0 and stds >= 0")
            if mean < self.comp_delay:
                raise ConfigError("regime mean below the computing delay")
        if not 0.0 <= self.ar_coeff < 1.0:
            raise ConfigError("ar_coeff must lie in [0, 1)")
        if not self.inter_arrival > 0 or not self.telemetry_rate > 0:
            raise ConfigError("inter_arrival and telemetry_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        if "telemetry_model" in d and isinstance(d["telemetry_model"], dict):
            d["telemetry_model"] = WaypointModel(**d["telemetry_model"])
        if "rssi_model" in d and isinstance(d["rssi_model"], dict):
            d["rssi_model"] = RssiModel(**d["rssi_model"])
        for key in ("origin",):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def stationary_distribution(transition) -> np.ndarray:
    p = np.asarray(transition, dtype=float)
    k = p.shape[0]
    a = np.vstack([p.T - np.eye(k), np.ones(k)])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def calibrated_config(n_tasks: int = 12_000, seed: int = 0, n_servers: int = 3, **overrides) -> SyntheticConfig:
    """Two sticky regimes tuned to a pooled delay mean of ~0.178 s and std of ~0.14 s."""
    params = dict(
        n_servers=n_servers,
        n_tasks=n_tasks,
        seed=seed,
        regimes_per_server=2,
        regime_delay_params=((0.125, 0.018), (0.32, 0.24)),
        regime_transition=((0.99, 0.01), (0.04, 0.96)),
        ar_coeff=0.6,
        heading_coupling=0.0,
    )
    params.update(overrides)
    return SyntheticConfig(**params)


_TRUNC_RETRIES = 16


def _heading_deg(ve, vn, fallback=0.0):
    out = np.empty_like(ve)
    last = fallback
    speed = np.hypot(ve, vn)
    raw = np.degrees(np.arctan2(ve, vn)) % 360.0
    for i in range(ve.shape[0]):
        if speed[i] > 1e-3:
            last = raw[i]
        out[i] = last
    out[out >= 360.0] = 0.0
    return out


def generate_synthetic(config: SyntheticConfig) -> TraceDataset:
    """Draw a trace from ``config``; the result is a pure function of the config (seed included)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    t_count, n = config.n_tasks, config.n_servers
    dt = config.inter_arrival
    wm = config.telemetry_model

    # flight path at task resolution, local east/north/up meters
    pool = rng.random((t_count // 4 + 16, 4))
    pos_enu, vel = _kernels.waypoint_path(
        t_count, dt, wm.radius, wm.altitude_range[0], wm.altitude_range[1],
        wm.speed_range[0], wm.speed_range[1], wm.reach, wm.smoothing, pool,
    )
    acc = np.vstack([np.zeros((1, 3)), np.diff(vel, axis=0) / dt])
    acc = acc + 0.05 * rng.standard_normal((t_count, 3))
    heading = _heading_deg(vel[:, 0], vel[:, 1])
    yaw_rate = np.radians(np.concatenate(([0.0], (np.diff(heading) + 180.0) % 360.0 - 180.0))) / dt
    gyro = 0.02 * rng.standard_normal((t_count, 3))
    gyro[:, 2] += yaw_rate
    gyro[:, 0] += 0.05 * acc[:, 1]
    gyro[:, 1] -= 0.05 * acc[:, 0]
    onboard_noise = rng.standard_normal((t_count, 3))
    onboard = np.empty((t_count, 3))
    for c, (level, spread) in enumerate(((0.45, 0.08), (0.35, 0.10), (0.60, 0.04))):
        ar = lfilter([math.sqrt(1 - 0.95 ** 2)], [1.0, -0.95], onboard_noise[:, c])
        onboard[:, c] = np.clip(level + spread * ar, 0.0, 1.0)

    # servers on a ring around the flight cylinder's axis, 1 m above ground
    angles = np.radians(90.0 + 360.0 * np.arange(n) / n)
    srv_enu = np.stack([config.server_ring_radius * np.cos(angles),
                        config.server_ring_radius * np.sin(angles), np.ones(n)], axis=1)
    if n == 1:
        srv_enu[0, :2] = 0.0
    rel = srv_enu[None, :, :] - pos_enu[:, None, :]
    dist3 = np.linalg.norm(rel, axis=2)
    bearing_to_srv = np.degrees(np.arctan2(rel[:, :, 0], rel[:, :, 1])) % 360.0
    rel_heading = np.mod(bearing_to_srv - heading[:, None] + 180.0, 360.0) - 180.0
    rear = -np.cos(np.radians(rel_heading))

    # Markov-modulated delays
    transition = np.asarray(config.regime_transition, dtype=float)
    means = np.array([m for m, _ in config.regime_delay_params])
    stds = np.array([s for _, s in config.regime_delay_params])
    rank = np.argsort(np.argsort(means, kind="stable"), kind="stable").astype(np.int64)
    pi = stationary_distribution(transition)
    init = np.minimum(np.searchsorted(np.cumsum(pi), rng.random(n), side="right"), len(pi) - 1)
    uniforms = rng.random((t_count, n))
    regimes = _kernels.markov_regimes(transition, rank, init.astype(np.int64), uniforms,
                                      np.ascontiguousarray(rear), float(config.heading_coupling))
    normals = rng.standard_normal((t_count, n, _TRUNC_RETRIES))
    comm = _kernels.ar_truncated(regimes, means, stds, float(config.ar_coeff), config.comp_delay, normals)
    comp = np.full((t_count, n), config.comp_delay)

    # channel and transport statistics
    rm = config.rssi_model
    rssi = (rm.reference_power - 10.0 * rm.path_loss_exponent * np.log10(np.maximum(dist3, 1.0))
            + rm.shadowing_std * rng.standard_normal((t_count, n)))
    span = means.max() - means.min()
    level = (means[regimes] - means.min()) / span if span > 0 else np.zeros((t_count, n))
    tcp = np.empty((t_count, n, len(TCP_FEATURES)))
    tcp[:, :, 0] = rng.poisson(0.2 + 3.0 * level)
    tcp[:, :, 1] = np.maximum(1.0, 40.0 * (1.0 - 0.6 * level) + 4.0 * rng.standard_normal((t_count, n)))
    tcp[:, :, 2] = np.maximum(0.0, 2.0 * comm * (1.0 + 0.15 * rng.standard_normal((t_count, n))))
    tcp[:, :, 3] = rng.poisson(0.05 + 0.5 * level)
    tcp[:, :, 4] = rng.poisson(30.0 * (1.0 - 0.4 * level))
    mcs = np.clip(np.floor((rssi + 90.0) / 6.0), 0, 7).astype(np.int64)

    # telemetry is recorded at a lower rate and held between samples
    ticks = np.floor(np.arange(t_count) * dt * config.telemetry_rate + 1e-9)
    hold = np.minimum(np.floor(ticks / (config.telemetry_rate * dt) + 1e-9).astype(np.int64), t_count - 1)
    lat, lon, alt = enu_to_geodetic(pos_enu[:, 0], pos_enu[:, 1], pos_enu[:, 2], config.origin)
    slat, slon, salt = enu_to_geodetic(srv_enu[:, 0], srv_enu[:, 1], srv_enu[:, 2], config.origin)

    return TraceDataset(
        n_servers=n,
        inter_arrival=dt,
        server_positions=np.stack([slat, slon, salt], axis=1),
        comm_delay=comm,
        comp_delay=comp,
        rssi=rssi,
        tcp=tcp,
        mcs=mcs,
        position=np.stack([lat, lon, alt], axis=1)[hold],
        velocity=vel[hold],
        acceleration=acc[hold],
        gyroscope=gyro[hold],
        heading=heading[hold],
        onboard=onboard[hold],
        regime=regimes,
    )


def save_config(config, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))


def load_synthetic_config(path) -> SyntheticConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return SyntheticConfig.from_dict(d)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def empirical_cdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted sample values and the fraction of samples <= each."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise EmptyInputError("no samples")
    xs, counts = np.unique(x, return_counts=True)
    return xs, np.cumsum(counts) / x.size


def cdf_at(samples, grid) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    return np.searchsorted(x, np.asarray(grid, dtype=float), side="right") / x.size


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


@dataclass
class ServerStats:
    server: str
    mean: float
    std: float
    peak_to_peak: float
    quantiles: dict
    cdf_x: np.ndarray
    cdf_p: np.ndarray


def _describe(label: str, d: np.ndarray) -> ServerStats:
    xs, ps = empirical_cdf(d)
    return ServerStats(
        server=label,
        mean=float(d.mean()),
        std=float(d.std()),  # population normalisation
        peak_to_peak=float(d.max() - d.min()),
        quantiles={q: float(np.quantile(d, q)) for q in QUANTILES},
        cdf_x=xs,
        cdf_p=ps,
    )


def trace_stats(dataset: TraceDataset) -> list[ServerStats]:
    """Per-server delay statistics followed by a pooled ``"all"`` entry."""
    if dataset is None or dataset.n_tasks == 0:
        raise EmptyInputError("empty dataset")
    d = dataset.delay
    out = [_describe(str(n + 1), d[:, n]) for n in range(dataset.n_servers)]
    out.append(_describe("all", d.ravel()))
    return out


def stats_rows(stats: Sequence[ServerStats]) -> list[tuple[str, str, float]]:
    rows = []
    for s in stats:
        rows += [("mean", s.server, s.mean), ("std", s.server, s.std),
                 ("peak_to_peak", s.server, s.peak_to_peak)]
        rows += [(f"q{int(round(q * 100)):02d}", s.server, v) for q, v in s.quantiles.items()]
    return rows


def write_stats_csv(stats: Sequence[ServerStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "server", "value"])
        for stat, server, value in stats_rows(stats):
            w.writerow([stat, server, repr(value)])


def read_stats_csv(path) -> list[tuple[str, str, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != ["statistic", "server", "value"]:
            raise SchemaError("unexpected stats header")
        return [(a, b, float(c)) for a, b, c in r]

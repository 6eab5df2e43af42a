"""Windowed exceedance predictors and the minimum-cardinality set selector.

For every server a small softmax network maps the server's feature matrix
to the probability that at least ``y`` of the next ``W`` tasks exceed the
delay threshold. The selector then picks the smallest set whose joint
failure probability (product of per-server probabilities) is below Delta.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DegenerateLabelsError, DimensionError
from .features import FeatureCatalog, FeatureState, StateBuilder, encode_server
from .nn import DenseNet, forward, load_checkpoint, save_checkpoint, train_classifier
from .serverset import ServerSet
from .trace import TraceDataset

C0 = 0
C1 = 1


@dataclass(frozen=True)
class WindowPredictorConfig:
    """``window`` is W and ``min_exceed`` is y; ``None`` means ceil(W / 2)."""

    window: int = 1
    min_exceed: int | None = None
    delta_star: float = 0.175
    hidden_sizes: tuple = (150, 50)
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    history: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.min_exceed is None:
            object.__setattr__(self, "min_exceed", math.ceil(self.window / 2))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not 1 <= self.min_exceed <= self.window:
            raise ConfigError("min_exceed must be in [1, window]")
        if not self.delta_star > 0:
            raise ConfigError("delta_star must be > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.history < 1:
            raise ConfigError("epochs, batch_size and history must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


def window_labels(delays, delta_star: float, window: int, min_exceed: int) -> np.ndarray:
    """Label of task i: at least ``min_exceed`` of tasks i+1..i+W exceed ``delta_star``.

    Defined for i in ``0 .. T-1-W``.
    """
    d = np.ascontiguousarray(delays, dtype=np.float64)
    counts = _kernels.window_counts(d, float(delta_star), int(window))
    return (counts >= min_exceed).astype(np.int64)


@dataclass
class PredictorModel:
    nets: list[DenseNet]
    catalog: FeatureCatalog
    config: WindowPredictorConfig
    train_loss: list[list[float]] = field(default_factory=list)

    @property
    def n_servers(self) -> int:
        return len(self.nets)

    def predict(self, state: FeatureState) -> np.ndarray:
        """Exceedance probability of every server."""
        return np.array([predict_exceed_prob(self, encode_server(state, n, self.catalog.masked), n)
                         for n in range(self.n_servers)])


def predict_exceed_prob(model: PredictorModel, x, server: int):
    """Class-1 probability for encoded input(s) of ``server`` (0-based)."""
    net = model.nets[server]
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_inputs:
        raise DimensionError(f"input width {x.shape[-1]} != {net.n_inputs}")
    out, _ = forward(net, x)
    return out[..., 1] if out.ndim > 1 else float(out[1])


def training_indices(n_tasks: int, history: int, window: int) -> np.ndarray:
    return np.arange(history - 1, n_tasks - window, dtype=np.int64)


def train_predictor(train: TraceDataset, catalog: FeatureCatalog, config: WindowPredictorConfig,
                    selections=None, allow_degenerate: bool = False) -> PredictorModel:
    """One predictor per server.

    ``selections`` is the data-collection policy that decides which
    pipeline features were observed; ``None`` is full observation.
    """
    builder = StateBuilder(train, catalog, config.history)
    idx = training_indices(train.n_tasks, config.history, config.window)
    if idx.size == 0:
        raise ConfigError("trace too short for the configured history and window")
    delay = train.delay
    nets, losses = [], []
    for n in range(train.n_servers):
        labels = window_labels(delay[:, n], config.delta_star, config.window, config.min_exceed)[idx]
        if not allow_degenerate and (labels.min() == labels.max()):
            raise DegenerateLabelsError(f"server {n + 1}: all labels equal {labels[0]}")
        x = builder.server_batch(idx, n, selections)
        net = DenseNet([x.shape[1], *config.hidden_sizes, 2], "softmax", seed=config.seed * 7919 + n)
        hist = train_classifier(net, x, labels, epochs=config.epochs, batch_size=config.batch_size,
                                learning_rate=config.learning_rate, seed=config.seed * 7919 + n)
        nets.append(net)
        losses.append(hist)
    return PredictorModel(nets, catalog, config, losses)


def classify_binary(p: float) -> int:
    """C1 iff p > 1/2; exactly 1/2 goes to C0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    return C1 if p > 0.5 else C0


def joint_failure(p, server_set: ServerSet) -> float:
    out = 1.0
    for m in server_set.members:
        out *= float(p[m - 1])
    return out


def select_min_cardinality(p, delta: float) -> ServerSet:
    """Smallest set with joint failure below ``delta``, else the full set.

    Ties in size go to the smaller joint failure, then to the lower bitmask.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("Delta must be in (0, 1)")
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise DimensionError("p must be a nonempty vector")
    if np.any(~(p >= 0.0)) or np.any(~(p <= 1.0)):
        raise ValueError("probabilities must be in [0, 1]")
    return ServerSet(int(_kernels.min_cardinality(p, float(delta))), p.size)


class MyopicController:
    """Selects the minimum-cardinality feasible set from predicted probabilities."""

    def __init__(self, model: PredictorModel, delta: float):
        if not 0.0 < delta < 1.0:
            raise ValueError("Delta must be in (0, 1)")
        self.model = model
        self.delta = delta
        self.name = f"myopic(delta={delta:g})"

    def select(self, state: FeatureState) -> ServerSet:
        return select_min_cardinality(self.model.predict(state), self.delta)


def save_predictor(path, model: PredictorModel) -> None:
    extra = {f"server{n + 1}": net for n, net in enumerate(model.nets[1:], start=1)}
    meta = {"kind": "window-predictor", "config": model.config.to_dict(),
            "catalog": model.catalog.to_dict(), "n_servers": model.n_servers}
    save_checkpoint(path, model.nets[0], catalog_digest=model.catalog.digest(), metadata=meta,
                    extra_nets=extra)


def load_predictor(path) -> PredictorModel:
    ckpt, extra = load_checkpoint(path)
    meta = ckpt.metadata
    if meta.get("kind") != "window-predictor":
        raise ConfigError(f"{path} is not a predictor checkpoint")
    catalog = FeatureCatalog.from_dict(meta["catalog"])
    if catalog.digest() != ckpt.catalog_digest:
        raise ConfigError("catalog hash mismatch in predictor checkpoint")
    nets = [ckpt.net] + [extra[f"server{n + 1}"] for n in range(1, meta["n_servers"])]
    return PredictorModel(nets, catalog, WindowPredictorConfig(**meta["config"]))

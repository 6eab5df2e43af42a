"""Double deep Q-learning controller.

Everything is expressed as a cost to minimise: actions are chosen by argmin
over Q and the bootstrap target uses the online network's argmin action
evaluated by the target network. Action index ``k`` is the server set with
bitmask ``k + 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BufferNotReadyError, ConfigError, DimensionError, TrainingDivergenceError
from .features import FeatureCatalog, FeatureState, StateBuilder, encode_state, state_size
from .nn import AdamState, DenseNet, adam_step, backward, forward, huber_loss, load_checkpoint, save_checkpoint
from .serverset import ServerSet, n_actions, set_sizes
from .trace import TraceDataset

ACTION_ENCODING_VERSION = 1


@dataclass(frozen=True)
class CostParams:
    lam: float
    alpha_delay: float
    kappa_delay: float
    alpha_set: float
    kappa_set: float
    delta_star: float = 0.175

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must be in [0, 1]")
        if not self.alpha_delay > 0 or not self.alpha_set > 0:
            raise ConfigError("alpha_delay and alpha_set must be > 0")
        if not self.delta_star > 0:
            raise ConfigError("delta_star must be > 0")

    @classmethod
    def default(cls, n_servers: int, lam: float, delta_star: float = 0.175,
                alpha_delay: float = 20.0) -> "CostParams":
        """Sigmoid centred on the threshold; set cost zero for a single server."""
        return cls(lam, alpha_delay, alpha_delay * delta_star, 1.0 / n_servers, 1.0 / n_servers, delta_star)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def cost(delta_min: float, set_size: int, params: CostParams) -> float:
    if delta_min < 0:
        raise ValueError("delta_min must be >= 0")
    if set_size < 1:
        raise ValueError("set_size must be >= 1")
    delay = 0.0
    if delta_min > params.delta_star:
        delay = _sigmoid(params.alpha_delay * delta_min - params.kappa_delay)
    return params.lam * delay + (1.0 - params.lam) * (params.alpha_set * set_size - params.kappa_set)


@dataclass
class Experience:
    state: np.ndarray
    action: int
    cost: float
    next_state: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of experiences with FIFO eviction."""

    def __init__(self, capacity: int, state_dim: int, seed: int = 0):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.costs = np.zeros(capacity)
        self.size = 0
        self._pos = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def store(self, exp: Experience) -> None:
        self.store_arrays(exp.state, exp.action, exp.cost, exp.next_state)

    def store_arrays(self, state, action: int, cost_value: float, next_state) -> None:
        state = np.asarray(state, dtype=float)
        next_state = np.asarray(next_state, dtype=float)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise DimensionError(f"experience states must have length {self.state_dim}")
        k = self._pos
        self.states[k] = state
        self.next_states[k] = next_state
        self.actions[k] = action
        self.costs[k] = cost_value
        self._pos = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ready(self, batch_size: int) -> bool:
        return self.size >= batch_size

    def _slot(self, age_order: int) -> int:
        """Physical slot of the ``age_order``-th oldest entry."""
        start = self._pos if self.size == self.capacity else 0
        return (start + age_order) % self.capacity

    def contents(self) -> list[Experience]:
        """All stored experiences, oldest first."""
        return [self._get(self._slot(k)) for k in range(self.size)]

    def _get(self, k: int) -> Experience:
        return Experience(self.states[k].copy(), int(self.actions[k]), float(self.costs[k]),
                          self.next_states[k].copy())

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if not self.ready(batch_size):
            raise BufferNotReadyError(f"buffer holds {self.size} < {batch_size} experiences")
        return self.rng.choice(self.size, size=batch_size, replace=False)

    def sample_arrays(self, batch_size: int):
        k = self.sample_indices(batch_size)
        return self.states[k], self.actions[k], self.costs[k], self.next_states[k]

    def sample_batch(self, batch_size: int) -> list[Experience]:
        return [self._get(int(k)) for k in self.sample_indices(batch_size)]


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 20_000

    def value(self, step: int) -> float:
        if self.decay_steps <= 0:
            return self.end
        frac = min(step / self.decay_steps, 1.0)
        return self.start + frac * (self.end - self.start)


class QAgent:
    def __init__(self, n_servers: int, input_size: int, hidden_sizes=(200, 100, 50), gamma: float = 0.9,
                 learning_rate: float = 1e-3, epsilon: EpsilonSchedule = EpsilonSchedule(),
                 sync_period: int = 500, batch_size: int = 64, huber_kappa: float = 1.0, seed: int = 0,
                 masked=None):
        if not 0.0 <= gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        self.n_servers = n_servers
        self.gamma = gamma
        self.epsilon = epsilon
        self.sync_period = sync_period
        self.batch_size = batch_size
        self.huber_kappa = huber_kappa
        # which catalog features carry mask/age channels in the encoded state
        self.masked = None if masked is None else np.asarray(masked, dtype=bool)
        self.online = DenseNet([input_size, *hidden_sizes, n_actions(n_servers)], "identity", seed=seed)
        self.target = self.online.copy()
        self.adam = AdamState.for_net(self.online, learning_rate)
        self.rng = np.random.default_rng([seed, 1])
        self.train_steps = 0

    @property
    def input_size(self) -> int:
        return self.online.n_inputs

    def encode(self, x) -> np.ndarray:
        return encode_state(x, self.masked) if isinstance(x, FeatureState) else np.asarray(x, dtype=float)

    def q_values(self, x) -> np.ndarray:
        return forward(self.online, self.encode(x))[0]


def select_action(agent: QAgent, state, epsilon: float) -> ServerSet:
    """Epsilon-greedy; the greedy branch takes the lowest index among tied minima."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and agent.rng.random() < epsilon:
        return ServerSet.from_action(int(agent.rng.integers(n_actions(agent.n_servers))), agent.n_servers)
    return ServerSet.from_action(int(np.argmin(agent.q_values(state))), agent.n_servers)


def double_q_targets(agent: QAgent, costs, next_states) -> np.ndarray:
    q_next_online = forward(agent.online, next_states)[0]
    best = np.argmin(q_next_online, axis=1)
    q_next_target = forward(agent.target, next_states)[0]
    return np.asarray(costs, dtype=float) + agent.gamma * q_next_target[np.arange(best.size), best]


def train_step(agent: QAgent, batch) -> float:
    """One Adam step on the online net; ``batch`` is a list of experiences or arrays."""
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Experience):
        s = np.stack([e.state for e in batch])
        a = np.array([e.action for e in batch], dtype=np.int64)
        c = np.array([e.cost for e in batch])
        s2 = np.stack([e.next_state for e in batch])
    else:
        s, a, c, s2 = batch
    if len(a) == 0:
        raise ValueError("empty batch")
    b = len(a)
    # one online pass over [s; s'] serves both the prediction and the argmin
    q_all, cache = forward(agent.online, np.concatenate([s, s2]))
    best = np.argmin(q_all[b:], axis=1)
    q_next = forward(agent.target, s2)[0]
    rows = np.arange(b)
    tgt = np.asarray(c, dtype=float) + agent.gamma * q_next[rows, best]
    loss, g = huber_loss(q_all[rows, a], tgt, agent.huber_kappa)
    mean_loss = float(np.mean(loss))
    if not math.isfinite(mean_loss):
        raise TrainingDivergenceError("non-finite loss")
    grad = np.zeros_like(q_all)
    grad[rows, a] = g / b
    adam_step(agent.online, backward(agent.online, cache, grad), agent.adam)
    agent.train_steps += 1
    return mean_loss


def sync_target(agent: QAgent) -> None:
    agent.target.load_parameters(agent.online)


@dataclass(frozen=True)
class TrainSchedule:
    n_steps: int = 20_000
    history: int = 3
    hidden_sizes: tuple = (200, 100, 50)
    gamma: float = 0.9
    learning_rate: float = 1e-3
    buffer_capacity: int = 10_000
    batch_size: int = 64
    sync_period: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 20_000
    huber_kappa: float = 1.0
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.n_steps < 1 or self.history < 1 or self.batch_size < 1 or self.sync_period < 1:
            raise ConfigError("n_steps, history, batch_size and sync_period must be >= 1")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    @property
    def epsilon(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


@dataclass
class LogRow:
    step: int
    epsilon: float
    loss: float
    mean_cost: float


@dataclass
class TrainedAgent:
    agent: QAgent
    catalog: FeatureCatalog
    params: CostParams
    schedule: TrainSchedule
    log: list[LogRow] = field(default_factory=list)


def make_agent(n_servers: int, catalog: FeatureCatalog, schedule: TrainSchedule) -> QAgent:
    masked = catalog.masked
    size = state_size(n_servers, len(catalog), schedule.history, int(masked.sum()))
    return QAgent(n_servers, size, schedule.hidden_sizes, schedule.gamma, schedule.learning_rate,
                  schedule.epsilon, schedule.sync_period, schedule.batch_size, schedule.huber_kappa,
                  schedule.seed, masked)


def train_agent(trace: TraceDataset, catalog: FeatureCatalog, params: CostParams,
                schedule: TrainSchedule = TrainSchedule()) -> TrainedAgent:
    """Online training on a trace, replaying it from the start when it runs out.

    Each pass begins with ``history`` all-server warm-up tasks; the state
    after task t-1 chooses the set for task t.
    """
    n = trace.n_servers
    L = schedule.history
    if trace.n_tasks <= L + 1:
        raise ConfigError("trace too short for one interaction")
    builder = StateBuilder(trace, catalog, L)
    agent = make_agent(n, catalog, schedule)
    buffer = ReplayBuffer(schedule.buffer_capacity, agent.input_size, seed=schedule.seed)
    delay = trace.delay
    sizes = np.array(set_sizes(n))
    full = ServerSet.full(n)
    log: list[LogRow] = []
    costs_acc, loss_acc = [], []
    step = 0
    while step < schedule.n_steps:
        tracker = builder.tracker()
        for t in range(L):
            tracker.record(t, full)
        s = agent.encode(tracker.state())
        for t in range(L, trace.n_tasks):
            if step >= schedule.n_steps:
                break
            eps = schedule.epsilon.value(step)
            act = select_action(agent, s, eps)
            members = np.array(act.members) - 1
            c = cost(float(delay[t, members].min()), int(sizes[act.action]), params)
            tracker.record(t, act)
            s2 = agent.encode(tracker.state())
            buffer.store_arrays(s, act.action, c, s2)
            if buffer.ready(schedule.batch_size):
                loss_acc.append(train_step(agent, buffer.sample_arrays(schedule.batch_size)))
                if agent.train_steps % schedule.sync_period == 0:
                    sync_target(agent)
            costs_acc.append(c)
            s = s2
            step += 1
            if step % schedule.log_every == 0:
                log.append(LogRow(step, eps, float(np.mean(loss_acc)) if loss_acc else float("nan"),
                                  float(np.mean(costs_acc))))
                costs_acc, loss_acc = [], []
    return TrainedAgent(agent, catalog, params, schedule, log)


def write_log_csv(log: list[LogRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "epsilon", "loss", "mean_cost"])
        for r in log:
            w.writerow([r.step, repr(r.epsilon), repr(r.loss), repr(r.mean_cost)])


def read_log_csv(path) -> list[LogRow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["step", "epsilon", "loss", "mean_cost"]:
        raise ValueError("unexpected training-log header")
    return [LogRow(int(a), float(b), float(c), float(d)) for a, b, c, d in rows[1:]]


class DRLController:
    """Greedy (or fixed-epsilon) policy of a trained agent."""

    def __init__(self, agent: QAgent, epsilon: float = 0.0, name: str = "drl"):
        self.agent = agent
        self.epsilon = epsilon
        self.name = name

    def select(self, state: FeatureState) -> ServerSet:
        return select_action(self.agent, state, self.epsilon)


def save_agent(path, trained: TrainedAgent) -> None:
    a = trained.agent
    meta = {
        "kind": "ddqn-agent",
        "action_encoding_version": ACTION_ENCODING_VERSION,
        "n_servers": a.n_servers,
        "train_steps": a.train_steps,
        "cost_params": asdict(trained.params),
        "schedule": trained.schedule.to_dict(),
        "catalog": trained.catalog.to_dict(),
    }
    save_checkpoint(path, a.online, a.adam, trained.catalog.digest(), meta, {"target": a.target})


def load_agent(path) -> TrainedAgent:
    ckpt, extra = load_checkpoint(path)
    meta = ckpt.metadata
    if meta.get("kind") != "ddqn-agent":
        raise ConfigError(f"{path} is not an agent checkpoint")
    if meta["action_encoding_version"] != ACTION_ENCODING_VERSION:
        raise ConfigError("unsupported action encoding")
    catalog = FeatureCatalog.from_dict(meta["catalog"])
    if catalog.digest() != ckpt.catalog_digest:
        raise ConfigError("catalog hash mismatch in agent checkpoint")
    schedule = TrainSchedule(**meta["schedule"])
    agent = make_agent(meta["n_servers"], catalog, schedule)
    agent.online = ckpt.net
    agent.target = extra["target"]
    agent.adam = ckpt.adam
    agent.train_steps = meta["train_steps"]
    return TrainedAgent(agent, catalog, CostParams(**meta["cost_params"]), schedule)

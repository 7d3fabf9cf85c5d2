"""History-state encoding, experience replay, and the Q-learning agents.

The agent's state is the last M slots of its own interaction, one
length-N vector per slot: +obs at the chosen channel(s) (+1 good, -1
busy), zeros elsewhere. Fresh episodes start from an all-zero window.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, DivergenceError
from .nn import MLP, Adam, q_loss_and_gradients

CHECKPOINT_FORMAT = 1

PRESETS = {
    "wide2": {"hidden": (200, 200), "lr": 1e-4},
    "deep3": {"hidden": (50, 50, 50), "lr": 1e-5},
}


def encode_slot(action, obs, n: int) -> np.ndarray:
    """Slot feature vector: +1 at the sensed channel when good, -1 when
    busy, zeros elsewhere. Accepts one (action, obs) pair or aligned
    sequences for multi-user slots."""
    out = np.zeros(n)
    if np.isscalar(action):
        action, obs = (action,), (obs,)
    for a, o in zip(action, obs):
        if not 0 <= a < n:
            raise ConfigError(f"channel {a} outside 0..{n - 1}")
        out[a] = 1.0 if o else -1.0
    return out


def decode_slot(vec) -> list:
    """Recover [(channel, obs), ...] from a slot encoding; empty for the
    all-zero warm-up rows."""
    vec = np.asarray(vec)
    return [(int(k), 1 if vec[k] > 0 else 0) for k in np.nonzero(vec)[0]]


class History:
    """Sliding window of the last M slot vectors, oldest first."""

    def __init__(self, m: int, n: int):
        self.m = int(m)
        self.n = int(n)
        self.window = np.zeros((self.m, self.n))

    def reset(self):
        self.window[:] = 0.0

    def push(self, slot_vec: np.ndarray):
        self.window[:-1] = self.window[1:]
        self.window[-1] = slot_vec

    def flat(self) -> np.ndarray:
        return self.window.reshape(-1).copy()


class ReplayBuffer:
    """Ring buffer of (x, a, r, x') records; states stored as int8 (the
    encodings take values in {-1, 0, +1})."""

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = int(capacity)
        self._size = 0
        self._cursor = 0
        self._x = None
        self._a = None
        self._r = None
        self._xn = None

    def __len__(self) -> int:
        return self._size

    def _ensure_room(self, dim: int):
        if self._x is None:
            n = min(self.capacity, 4096)
            self._x = np.empty((n, dim), dtype=np.int8)
            self._xn = np.empty((n, dim), dtype=np.int8)
            self._a = np.empty(n, dtype=np.int64)
            self._r = np.empty(n, dtype=np.float64)
        elif self._size == self._x.shape[0] and self._size < self.capacity:
            n = min(self.capacity, 2 * self._x.shape[0])
            for name in ("_x", "_xn", "_a", "_r"):
                old = getattr(self, name)
                grown = np.empty((n,) + old.shape[1:], dtype=old.dtype)
                grown[: self._size] = old[: self._size]
                setattr(self, name, grown)

    def add(self, x, action, reward, x_next):
        x = np.asarray(x)
        self._ensure_room(x.shape[0])
        if self._size < self.capacity:
            i = self._size
            self._size += 1
        else:
            i = self._cursor
            self._cursor = (self._cursor + 1) % self.capacity
        self._x[i] = x
        self._xn[i] = x_next
        self._a[i] = action
        self._r[i] = reward

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform minibatch (with replacement); None if not enough data."""
        if self._size < batch_size:
            return None
        idx = rng.integers(0, self._size, size=batch_size)
        xs = self._x[idx].astype(np.float64)
        acts = self._a[idx].copy()
        rws = self._r[idx].copy()
        nxt = self._xn[idx].astype(np.float64)
        return xs, acts, rws, nxt


class DQNAgent:
    """Q-network over history states with one optimizer step per call.

    Targets r + gamma max_a' Q(x'; theta) are computed with the parameters
    as they stand at the start of the step, i.e. one update stale by the
    time the loss gradient is applied. An optional periodically synced
    frozen target copy is available behind target_sync (an extension, off
    by default)."""

    def __init__(self, input_dim: int, n_actions: int, hidden, lr: float,
                 rng: np.random.Generator, target_sync: int = 0, q_bound: float = 20.0):
        self.input_dim = int(input_dim)
        self.n_actions = int(n_actions)
        self.hidden = tuple(int(h) for h in hidden)
        self.lr = float(lr)
        self.mlp = MLP([self.input_dim, *self.hidden, self.n_actions], rng)
        self.adam = Adam(self.mlp.parameters())
        self.target_sync = int(target_sync)
        self._target = self.mlp.copy() if self.target_sync > 0 else None
        self.q_bound = float(q_bound)
        self.train_steps = 0

    def q_values(self, x: np.ndarray) -> np.ndarray:
        return self.mlp.forward(x)

    def reinitialize(self, rng: np.random.Generator):
        """Fresh weights and optimizer state (cold restart)."""
        self.mlp = MLP(self.mlp.layer_sizes, rng)
        self.adam = Adam(self.mlp.parameters())
        self._target = self.mlp.copy() if self.target_sync > 0 else None
        self.train_steps = 0

    def act(self, history_flat: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
        if epsilon > 0.0 and rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return int(np.argmax(self.mlp.forward(history_flat)))

    def train_step(self, replay: ReplayBuffer, gamma: float, rng: np.random.Generator,
                   batch_size: int = 32):
        """One minibatch update; returns the loss, or None when the replay
        cannot fill a minibatch yet."""
        batch = replay.sample(rng, batch_size)
        if batch is None:
            return None
        xs, acts, rws, nxt = batch
        target_net = self._target if self._target is not None else self.mlp
        q_next = target_net.forward(nxt)
        targets = rws + gamma * q_next.max(axis=1)
        loss, grads, q_batch = q_loss_and_gradients(self.mlp, xs, acts, targets)
        worst = max(np.abs(q_batch).max(), np.abs(q_next).max())
        if worst > self.q_bound:
            raise DivergenceError(f"|Q| reached {worst:.3f}, beyond the divergence bound {self.q_bound}")
        self.adam.update(self.mlp.parameters(), grads, self.lr)
        self.train_steps += 1
        if self._target is not None and self.train_steps % self.target_sync == 0:
            self._target = self.mlp.copy()
        return loss


def build_agent(preset: str, input_dim: int, n_actions: int, rng: np.random.Generator,
                lr: float = None, hidden=None, target_sync: int = 0, q_bound: float = 20.0) -> DQNAgent:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    conf = PRESETS[preset]
    return DQNAgent(
        input_dim=input_dim,
        n_actions=n_actions,
        hidden=conf["hidden"] if hidden is None else hidden,
        lr=conf["lr"] if lr is None else lr,
        rng=rng,
        target_sync=target_sync,
        q_bound=q_bound,
    )


def tabular_q_update(table: dict, x_key, action: int, reward: float, next_key,
                     n_actions: int, alpha: float, gamma: float) -> float:
    """In-place tabular update Q += alpha (r + gamma max Q' - Q); missing
    rows default to zeros. Returns the updated entry."""
    row = table.get(x_key)
    if row is None:
        row = np.zeros(n_actions)
        table[x_key] = row
    nxt = table.get(next_key)
    best_next = 0.0 if nxt is None else float(nxt.max())
    row[action] += alpha * (reward + gamma * best_next - row[action])
    return float(row[action])


class TabularQAgent:
    """Q-table over exact history keys; online updates, no replay."""

    def __init__(self, n_actions: int, alpha: float = 0.1):
        self.n_actions = int(n_actions)
        self.alpha = float(alpha)
        self.table = {}

    @staticmethod
    def key(history_flat: np.ndarray) -> bytes:
        return np.asarray(history_flat, dtype=np.int8).tobytes()

    def q_values(self, history_flat: np.ndarray) -> np.ndarray:
        row = self.table.get(self.key(history_flat))
        return np.zeros(self.n_actions) if row is None else row.copy()

    def act(self, history_flat: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
        if epsilon > 0.0 and rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return int(np.argmax(self.q_values(history_flat)))

    def update(self, x, action, reward, x_next, gamma: float) -> float:
        return tabular_q_update(self.table, self.key(x), action, reward, self.key(x_next),
                                self.n_actions, self.alpha, gamma)


def track_max_q(agent, probes: np.ndarray) -> float:
    """Average over probe states of max_a Q(probe, a)."""
    if probes.ndim != 2:
        raise ConfigError("probes must be a (count, input_dim) array")
    if isinstance(agent, TabularQAgent):
        return float(np.mean([agent.q_values(p).max() for p in probes]))
    return float(agent.q_values(probes).max(axis=1).mean())


@dataclass
class TrainConfig:
    iterations: int = 200
    steps_per_iteration: int = 1000
    episode_length: int = 100
    epsilon: float = 0.1
    gamma: float = 0.9
    batch_size: int = 32
    min_replay: int = 1000
    replay_capacity: int = 1_000_000
    history: int = None          # window length M; defaults to N
    train_per_step: int = 1


@dataclass
class TrainResult:
    curve: list = field(default_factory=list)   # (iteration, env_steps, mean_return, avg_max_q)
    env_steps: int = 0
    probe_seed: int = None


class EpisodicDriver:
    """Steps an action adapter through fixed-length episodes, maintaining
    the agent-side history window."""

    def __init__(self, adapter, history: History, episode_length: int):
        self.adapter = adapter
        self.history = history
        self.episode_length = episode_length
        self._slot = 0
        self._episode = 0

    def begin_if_needed(self, rng_factory):
        if self._slot % self.episode_length == 0:
            self.adapter.begin_episode(rng_factory(self._episode), self._episode, self.episode_length)
            self.history.reset()
            self._episode += 1

    def step(self, action: int):
        slot_vec, reward = self.adapter.step(action)
        self.history.push(slot_vec)
        self._slot += 1
        return reward


def collect_probes(adapter, history_m: int, seed: int, count: int = 64,
                   episode_length: int = 100, steps: int = 1000):
    """Probe histories harvested from a uniformly random rollout (the
    untrained policy), used to track avg max-Q across training."""
    from .seeding import PROBE_STREAM, spawn_rng

    rng = spawn_rng(seed, PROBE_STREAM, 0)
    hist = History(history_m, adapter.slot_dim)
    driver = EpisodicDriver(adapter, hist, episode_length)
    seen = []
    for _ in range(steps):
        driver.begin_if_needed(lambda ep: spawn_rng(seed, PROBE_STREAM, 1, ep))
        a = int(rng.integers(adapter.n_actions))
        driver.step(a)
        seen.append(hist.flat())
    idx = rng.choice(len(seen), size=min(count, len(seen)), replace=False)
    return np.stack([seen[i] for i in sorted(idx)])


def train_dqn(agent: DQNAgent, adapter_factory, cfg: TrainConfig, seed: int,
              evaluator=None, probes: np.ndarray = None, stop=None) -> TrainResult:
    """Iterated training: each iteration runs steps_per_iteration env
    slots, one train step per slot once the replay holds min_replay
    records, then records an evaluation point.

    `adapter_factory()` builds the action adapter; `evaluator(agent)`
    returns the mean evaluated return for curve points (None skips
    evaluation); `stop(iteration, mean_return)` may end training early."""
    from .seeding import AGENT_STREAM, ENV_STREAM, spawn_rng

    agent_rng = spawn_rng(seed, AGENT_STREAM)
    adapter = adapter_factory()
    m = cfg.history if cfg.history is not None else adapter.slot_dim
    history = History(m, adapter.slot_dim)
    if agent.input_dim != m * adapter.slot_dim:
        raise ConfigError(
            f"agent input dim {agent.input_dim} does not match history {m} x {adapter.slot_dim}"
        )
    replay = ReplayBuffer(cfg.replay_capacity)
    driver = EpisodicDriver(adapter, history, cfg.episode_length)
    result = TrainResult()
    for it in range(1, cfg.iterations + 1):
        for _ in range(cfg.steps_per_iteration):
            driver.begin_if_needed(lambda ep: spawn_rng(seed, ENV_STREAM, ep))
            x = history.flat()
            a = agent.act(x, cfg.epsilon, agent_rng)
            r = driver.step(a)
            replay.add(x, a, r, history.flat())
            result.env_steps += 1
            if len(replay) >= cfg.min_replay:
                for _ in range(cfg.train_per_step):
                    agent.train_step(replay, cfg.gamma, agent_rng, cfg.batch_size)
        mean_return = float("nan") if evaluator is None else float(evaluator(agent))
        avg_q = float("nan") if probes is None else track_max_q(agent, probes)
        result.curve.append((it, result.env_steps, mean_return, avg_q))
        if stop is not None and stop(it, mean_return):
            break
    return result


def train_tabular(agent: TabularQAgent, adapter_factory, cfg: TrainConfig, seed: int,
                  evaluator=None) -> TrainResult:
    """Same schedule as train_dqn but with online tabular updates."""
    from .seeding import AGENT_STREAM, ENV_STREAM, spawn_rng

    agent_rng = spawn_rng(seed, AGENT_STREAM)
    adapter = adapter_factory()
    m = cfg.history if cfg.history is not None else adapter.slot_dim
    history = History(m, adapter.slot_dim)
    driver = EpisodicDriver(adapter, history, cfg.episode_length)
    result = TrainResult()
    for it in range(1, cfg.iterations + 1):
        for _ in range(cfg.steps_per_iteration):
            driver.begin_if_needed(lambda ep: spawn_rng(seed, ENV_STREAM, ep))
            x = history.flat()
            a = agent.act(x, cfg.epsilon, agent_rng)
            r = driver.step(a)
            agent.update(x, a, r, history.flat(), cfg.gamma)
            result.env_steps += 1
        mean_return = float("nan") if evaluator is None else float(evaluator(agent))
        result.curve.append((it, result.env_steps, mean_return, float("nan")))
    return result


def save_checkpoint(path, agent: DQNAgent, extra: dict = None):
    """Versioned container with layer sizes, weights, Adam state, step
    counter, and any caller metadata; loading restores bit-identical
    behavior (all arrays are float64 and stored exactly)."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "layer_sizes": agent.mlp.layer_sizes,
        "hidden": list(agent.hidden),
        "lr": agent.lr,
        "n_actions": agent.n_actions,
        "input_dim": agent.input_dim,
        "target_sync": agent.target_sync,
        "q_bound": agent.q_bound,
        "train_steps": agent.train_steps,
        "adam_t": agent.adam.t,
        "extra": extra or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(agent.mlp.weights, agent.mlp.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    for i, (m, v) in enumerate(zip(agent.adam.m, agent.adam.v)):
        arrays[f"adam_m{i}"] = m
        arrays[f"adam_v{i}"] = v
    if agent._target is not None:
        for i, (w, b) in enumerate(zip(agent._target.weights, agent._target.biases)):
            arrays[f"tw{i}"] = w
            arrays[f"tb{i}"] = b
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (agent, extra_metadata)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {meta.get('format')!r}")
        agent = DQNAgent(
            input_dim=meta["input_dim"],
            n_actions=meta["n_actions"],
            hidden=meta["hidden"],
            lr=meta["lr"],
            rng=np.random.default_rng(0),
            target_sync=meta["target_sync"],
            q_bound=meta["q_bound"],
        )
        n_layers = agent.mlp.n_layers
        for i in range(n_layers):
            agent.mlp.weights[i][:] = data[f"w{i}"]
            agent.mlp.biases[i][:] = data[f"b{i}"]
        params = 2 * n_layers
        for i in range(params):
            agent.adam.m[i][:] = data[f"adam_m{i}"]
            agent.adam.v[i][:] = data[f"adam_v{i}"]
        agent.adam.t = meta["adam_t"]
        agent.train_steps = meta["train_steps"]
        if agent._target is not None:
            for i in range(n_layers):
                agent._target.weights[i][:] = data[f"tw{i}"]
                agent._target.biases[i][:] = data[f"tb{i}"]
        return agent, meta["extra"]

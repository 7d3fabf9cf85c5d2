"""Slot-level sensing environment built on a channel model."""

import numpy as np

from .errors import ConfigError
from .models import ChannelModel, TraceModel


class ChannelEnv:
    """Holds the latent model state, a slot counter, and the env RNG.

    Each step senses one channel of the current state, pays +1 if it was
    good and -1 if busy, then advances the latent state one slot.
    """

    def __init__(self, model: ChannelModel, rng: np.random.Generator, initial_state=None):
        self.model = model
        self.rng = rng
        self._state = model.initial_state(rng) if initial_state is None else initial_state
        self.slot = 0

    @property
    def n_channels(self) -> int:
        return self.model.n_channels

    @property
    def state(self):
        return self._state

    @property
    def full_state(self) -> np.ndarray:
        return self.model.channel_states(self._state)

    def step(self, action: int):
        """Sense `action`; returns (observation, reward)."""
        obs = self.model.channel_state(self._state, action)
        self._state = self.model.next_state(self._state, self.rng)
        self.slot += 1
        return obs, 1.0 if obs else -1.0

    def step_multi(self, actions):
        """Sense several distinct channels in one slot; returns
        (observations, rewards) tuples aligned with `actions`."""
        if len(set(actions)) != len(actions):
            raise ConfigError(f"users must sense distinct channels, got {list(actions)}")
        if len(actions) > self.n_channels:
            raise ConfigError("more users than channels")
        obs = tuple(self.model.channel_state(self._state, a) for a in actions)
        self._state = self.model.next_state(self._state, self.rng)
        self.slot += 1
        return obs, tuple(1.0 if o else -1.0 for o in obs)


def multi_user_step(env: ChannelEnv, actions):
    """One centralized multi-user slot: distinct channels, one per user.
    Returns (observations, summed reward)."""
    obs, rewards = env.step_multi(actions)
    return obs, float(sum(rewards))


class EnvSpec:
    """Factory binding a model to an episode start convention.

    start: "first" pins the model's canonical start (fixed-pattern: first
    subset active; trace: row 0), "stationary" samples the initial state.
    Trace models are windowed: eval episodes use consecutive disjoint
    windows and raise if the trace is too short, train episodes cycle.
    """

    def __init__(self, model: ChannelModel, start: str = None, trace_split: int = None):
        if start is None:
            start = "first" if model.first_state() is not None else "stationary"
        if start not in ("first", "stationary"):
            raise ConfigError(f"start must be 'first' or 'stationary', got {start!r}")
        if start == "first" and model.first_state() is None:
            raise ConfigError(f"{type(model).__name__} has no canonical first state")
        self.model = model
        self.start = start
        # Trace slots [0, trace_split) feed training, [trace_split, end) evaluation.
        self.trace_split = trace_split
        if trace_split is not None:
            if not isinstance(model, TraceModel):
                raise ConfigError("trace_split only applies to trace models")
            if not 0 < trace_split < model.n_slots:
                raise ConfigError(f"trace_split must lie inside the trace, got {trace_split}")

    @property
    def n_channels(self) -> int:
        return self.model.n_channels

    def make_env(self, rng, episode_index: int = 0, episode_length: int = None, purpose: str = "eval") -> ChannelEnv:
        if isinstance(self.model, TraceModel):
            if episode_length is None:
                raise ConfigError("trace episodes need an explicit length")
            split = self.trace_split
            if purpose == "train":
                lo, hi = 0, (split if split is not None else self.model.n_slots)
            else:
                lo, hi = (split if split is not None else 0), self.model.n_slots
            span = hi - lo
            if span < episode_length:
                raise ConfigError(f"trace segment [{lo}, {hi}) too short for {episode_length}-slot episodes")
            if purpose == "train":
                n_windows = span // episode_length
                start = lo + (episode_index % n_windows) * episode_length
            else:
                start = lo + episode_index * episode_length
                if start + episode_length > hi:
                    raise ConfigError(
                        f"trace segment [{lo}, {hi}) supports only {span // episode_length} "
                        f"evaluation episodes of {episode_length} slots"
                    )
            return ChannelEnv(self.model, rng, initial_state=start)
        initial = self.model.first_state() if self.start == "first" else None
        return ChannelEnv(self.model, rng, initial_state=initial)

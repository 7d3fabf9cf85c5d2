"""Monte Carlo policy evaluation and the env adapters used for training.

The protocol is fixed across the package: E fresh episodes of L slots,
returns discounted at gamma from the first slot (weight 1), greedy action
selection for learned policies. Reported statistics are the mean return,
its standard error, and per-channel utilization fractions.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .agents import History, encode_slot
from .beliefs import discounted_return
from .env import EnvSpec, multi_user_step
from .errors import CapacityError, ConfigError
from .seeding import ENV_STREAM, EVAL_STREAM, POLICY_STREAM, spawn_rng

MAX_COMBO_ACTIONS = 512


@dataclass
class EvaluationReport:
    mean_return: float
    stderr: float
    returns: np.ndarray
    utilization: np.ndarray
    episodes: int
    length: int
    gamma: float
    seed: int

    def summary(self) -> str:
        return (f"mean return {self.mean_return:.4f} +/- {self.stderr:.4f} "
                f"({self.episodes} episodes x {self.length} slots, gamma {self.gamma})")


def _finish_report(returns, counts, length, gamma, seed):
    returns = np.asarray(returns)
    bound = (1.0 - gamma ** length) / (1.0 - gamma) if gamma < 1.0 else float(length)
    if np.abs(returns).max() > bound + 1e-9:
        raise ConfigError("episode return outside the attainable range; reward convention violated")
    stderr = float(returns.std(ddof=1) / np.sqrt(returns.size)) if returns.size > 1 else 0.0
    total = counts.sum()
    return EvaluationReport(
        mean_return=float(returns.mean()),
        stderr=stderr,
        returns=returns,
        utilization=counts / total if total else counts,
        episodes=returns.size,
        length=length,
        gamma=gamma,
        seed=seed,
    )


def evaluate_policy(policy, env_spec: EnvSpec, episodes: int, length: int,
                    gamma: float, seed: int) -> EvaluationReport:
    """Evaluate a single-user policy on fresh episodes.

    Environment and policy randomness come from separate per-episode
    streams, so two policies evaluated under the same seed face identical
    channel realizations wherever their action sequences agree."""
    if episodes < 1 or length < 1:
        raise ConfigError("episodes and length must be positive")
    n = env_spec.n_channels
    counts = np.zeros(n)
    returns = np.empty(episodes)
    for ep in range(episodes):
        env = env_spec.make_env(spawn_rng(seed, EVAL_STREAM, ENV_STREAM, ep), ep, length, purpose="eval")
        policy.reset(spawn_rng(seed, EVAL_STREAM, POLICY_STREAM, ep))
        ret = 0.0
        disc = 1.0
        for _ in range(length):
            a = policy.act()
            obs, r = env.step(a)
            policy.observe(a, obs)
            counts[a] += 1
            ret += disc * r
            disc *= gamma
        returns[ep] = ret
    return _finish_report(returns, counts, length, gamma, seed)


class AgentPolicy:
    """Adapts a trained agent (DQN or tabular) to the policy protocol;
    epsilon defaults to greedy for evaluation."""

    def __init__(self, agent, n: int, history_m: int = None, epsilon: float = 0.0):
        self.agent = agent
        self.n = int(n)
        self.history = History(history_m if history_m is not None else n, n)
        self.epsilon = float(epsilon)
        self.rng = None

    def reset(self, rng=None):
        self.history.reset()
        self.rng = rng

    def act(self) -> int:
        return self.agent.act(self.history.flat(), self.epsilon, self.rng)

    def observe(self, action: int, obs: int):
        self.history.push(encode_slot(action, obs, self.n))


class SingleUserAdapter:
    """Training-side view of an EnvSpec: actions are channels, the slot
    feature is the single-channel encoding."""

    def __init__(self, env_spec: EnvSpec):
        self.env_spec = env_spec
        self.n_actions = env_spec.n_channels
        self.slot_dim = env_spec.n_channels
        self.env = None

    def begin_episode(self, rng, episode_index: int, episode_length: int):
        self.env = self.env_spec.make_env(rng, episode_index, episode_length, purpose="train")

    def step(self, action: int):
        obs, reward = self.env.step(action)
        return encode_slot(action, obs, self.slot_dim), reward


def combo_actions(n: int, users: int):
    """Deterministically ordered centralized action space: all size-U
    channel subsets in lexicographic order."""
    if not 1 <= users <= n:
        raise ConfigError(f"users must lie in 1..{n}, got {users}")
    combos = list(combinations(range(n), users))
    if len(combos) > MAX_COMBO_ACTIONS:
        raise CapacityError(
            f"centralized action space has {len(combos)} subsets, beyond the cap {MAX_COMBO_ACTIONS}"
        )
    return combos


class MultiUserAdapter:
    """Centralized multi-user view: one action picks a subset of U distinct
    channels; the reward is the per-user sum; the slot feature carries all
    U observations."""

    def __init__(self, env_spec: EnvSpec, users: int):
        self.env_spec = env_spec
        self.users = int(users)
        self.combos = combo_actions(env_spec.n_channels, users)
        self.n_actions = len(self.combos)
        self.slot_dim = env_spec.n_channels
        self.env = None

    def begin_episode(self, rng, episode_index: int, episode_length: int):
        self.env = self.env_spec.make_env(rng, episode_index, episode_length, purpose="train")

    def step(self, action: int):
        channels = self.combos[action]
        obs, reward = multi_user_step(self.env, channels)
        return encode_slot(channels, obs, self.slot_dim), reward


class ComboAgentPolicy:
    """Multi-user counterpart of AgentPolicy: actions index channel subsets."""

    def __init__(self, agent, combos, n: int, history_m: int = None, epsilon: float = 0.0):
        self.agent = agent
        self.combos = combos
        self.n = int(n)
        self.history = History(history_m if history_m is not None else n, n)
        self.epsilon = float(epsilon)
        self.rng = None

    def reset(self, rng=None):
        self.history.reset()
        self.rng = rng

    def act(self) -> int:
        return self.agent.act(self.history.flat(), self.epsilon, self.rng)

    def observe(self, action: int, obs):
        self.history.push(encode_slot(self.combos[action], obs, self.n))


class RandomComboPolicy:
    """Random-assignment baseline: a uniformly random channel subset."""

    def __init__(self, n_combos: int):
        self.n_combos = int(n_combos)
        self.rng = None

    def reset(self, rng):
        self.rng = rng

    def act(self) -> int:
        return int(self.rng.integers(self.n_combos))

    def observe(self, action, obs):
        pass


def evaluate_multi_user(policy, env_spec: EnvSpec, users: int, episodes: int,
                        length: int, gamma: float, seed: int) -> EvaluationReport:
    """Evaluate a centralized multi-user policy; the per-episode return
    discounts the summed per-user rewards. Utilization counts every user's
    channel selection."""
    combos = combo_actions(env_spec.n_channels, users)
    counts = np.zeros(env_spec.n_channels)
    returns = np.empty(episodes)
    for ep in range(episodes):
        env = env_spec.make_env(spawn_rng(seed, EVAL_STREAM, ENV_STREAM, ep), ep, length, purpose="eval")
        policy.reset(spawn_rng(seed, EVAL_STREAM, POLICY_STREAM, ep))
        rewards = np.empty(length)
        for t in range(length):
            a = policy.act()
            channels = combos[a]
            obs, r = multi_user_step(env, channels)
            policy.observe(a, obs)
            for c in channels:
                counts[c] += 1
            rewards[t] = r
        returns[ep] = discounted_return(rewards, gamma)
    returns = np.asarray(returns)
    stderr = float(returns.std(ddof=1) / np.sqrt(returns.size)) if returns.size > 1 else 0.0
    total = counts.sum()
    return EvaluationReport(
        mean_return=float(returns.mean()),
        stderr=stderr,
        returns=returns,
        utilization=counts / total if total else counts,
        episodes=episodes,
        length=length,
        gamma=gamma,
        seed=seed,
    )


def make_training_evaluator(env_spec: EnvSpec, n: int, history_m: int, episodes: int,
                            length: int, gamma: float, seed: int):
    """Cheap fixed-seed evaluator used for learning-curve points."""

    def _eval(agent) -> float:
        policy = AgentPolicy(agent, n, history_m)
        return evaluate_policy(policy, env_spec, episodes, length, gamma, seed).mean_return

    return _eval

"""POMDP belief machinery over joint channel states.

A belief is a dense probability vector over all 2^N joint states, indexed
with the same bit convention as the models (bit k = channel k). The slot
order is: sense a channel, fold the observation into the belief, then push
the belief through the transition matrix for the next slot.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CapacityError, ConfigError, ImpossibleObservation, NumericError
from .models import JointMarkovModel, bits_table, expand_to_joint

EXPECTIMAX_MAX_CHANNELS = 4
EXPECTIMAX_MAX_HORIZON = 10
BELIEF_QUANTUM_DECIMALS = 12


@lru_cache(maxsize=32)
def _bits(n: int) -> np.ndarray:
    table = bits_table(n)
    table.setflags(write=False)
    return table


def _n_from_belief(belief) -> int:
    size = belief.shape[0]
    n = size.bit_length() - 1
    if (1 << n) != size or n < 1:
        raise ConfigError(f"belief length must be 2^N, got {size}")
    return n


def uniform_belief(n: int) -> np.ndarray:
    return np.full(1 << n, 1.0 / (1 << n))


def belief_from_state(index: int, n: int) -> np.ndarray:
    b = np.zeros(1 << n)
    b[index] = 1.0
    return b


def validate_belief(belief, tol: float = 1e-9) -> np.ndarray:
    belief = np.asarray(belief, dtype=np.float64)
    _n_from_belief(belief)
    if belief.min() < -tol:
        raise ConfigError("belief entries must be nonnegative")
    if abs(belief.sum() - 1.0) > tol:
        raise ConfigError(f"belief must sum to 1, got {belief.sum()!r}")
    return belief


def channel_marginals(belief: np.ndarray) -> np.ndarray:
    """Per-channel probability of being good: gamma_k = sum_i w_i s_ik."""
    n = _n_from_belief(belief)
    return belief @ _bits(n)


def observation_update(belief: np.ndarray, action: int, obs: int) -> np.ndarray:
    """Condition the belief on observing channel `action` in state `obs`.

    States inconsistent with the observation get zero mass; the rest are
    renormalized. Raises ImpossibleObservation when the observation has
    zero probability under the belief.
    """
    n = _n_from_belief(belief)
    if not 0 <= action < n:
        raise ConfigError(f"action {action} outside 0..{n - 1}")
    idx = np.arange(belief.shape[0])
    consistent = ((idx >> action) & 1) == (1 if obs else 0)
    masked = np.where(consistent, belief, 0.0)
    mass = masked.sum()
    if mass <= 0.0:
        raise ImpossibleObservation(
            f"observing channel {action} as {'good' if obs else 'bad'} has zero probability under the belief"
        )
    return masked / mass


def transition_update(belief: np.ndarray, model) -> np.ndarray:
    """Push the belief one slot forward: w' = w P, renormalized to unit sum
    so repeated application cannot drift."""
    P = model.transition if hasattr(model, "transition") else model
    out = belief @ P
    return out / out.sum()


def belief_step(belief, model, action, obs) -> np.ndarray:
    """Full slot update: fold in the observation, then advance one slot."""
    return transition_update(observation_update(belief, action, obs), model)


def marginal_channel_chain(model: JointMarkovModel, k: int) -> np.ndarray:
    """Per-channel 2x2 chain of channel k under the stationary law of the
    joint chain: row s is P(next state of k | current state of k = s),
    with s = 0 bad, s = 1 good."""
    if not 0 <= k < model.n_channels:
        raise ConfigError(f"channel {k} outside 0..{model.n_channels - 1}")
    pi = model.stationary()
    good = _bits(model.n_channels)[:, k].astype(bool)
    chain = np.empty((2, 2))
    for s, mask in ((0, ~good), (1, good)):
        denom = pi[mask].sum()
        if denom <= 1e-15:
            raise ConfigError(
                f"channel {k} is never {'good' if s else 'bad'} under the stationary distribution"
            )
        flow = (pi * mask) @ model.transition
        chain[s, 0] = flow[~good].sum() / denom
        chain[s, 1] = flow[good].sum() / denom
        chain[s] /= chain[s].sum()
    return chain


def _action_values(belief, joint, gamma, continuation):
    """Q(belief, a) for every channel under expected reward 2 gamma_a - 1.

    The +1/-1 expected reward equals 2 P(success) - 1; using the success
    probability alone shifts every action's value by the same constant and
    leaves the argmax unchanged.
    """
    g = channel_marginals(belief)
    n = g.shape[0]
    values = np.empty(n)
    for a in range(n):
        v = 2.0 * g[a] - 1.0
        if gamma > 0.0 and continuation is not None:
            if g[a] > 0.0:
                v += gamma * g[a] * continuation(belief_step(belief, joint, a, 1))
            if g[a] < 1.0:
                v += gamma * (1.0 - g[a]) * continuation(belief_step(belief, joint, a, 0))
        values[a] = v
    return values


def bellman_backup(belief, model, gamma, continuation=None):
    """One Bellman backup; returns (value, action), ties to the lowest
    channel index. `continuation` maps a successor belief to its value
    (None means a zero continuation)."""
    joint = expand_to_joint(model)
    values = _action_values(np.asarray(belief, dtype=np.float64), joint, gamma, continuation)
    action = int(np.argmax(values))
    return float(values[action]), action


class FiniteHorizonSolver:
    """Exact expectimax over the belief tree, memoized on beliefs quantized
    at 1e-12. Limited to N <= 4 channels and horizon <= 10."""

    def __init__(self, model, gamma: float):
        self.joint = expand_to_joint(model)
        if self.joint.n_channels > EXPECTIMAX_MAX_CHANNELS:
            raise CapacityError(
                f"exact solver limited to {EXPECTIMAX_MAX_CHANNELS} channels, got {self.joint.n_channels}"
            )
        if not 0.0 <= gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {gamma}")
        self.gamma = gamma
        self._memo = {}

    def solve(self, belief, horizon: int):
        """Optimal (value, first action) for `horizon` remaining slots."""
        if not 1 <= horizon <= EXPECTIMAX_MAX_HORIZON:
            raise CapacityError(f"horizon must lie in 1..{EXPECTIMAX_MAX_HORIZON}, got {horizon}")
        belief = validate_belief(belief)
        return self._solve(belief, horizon)

    def _solve(self, belief, h: int):
        key = (h, np.round(belief, BELIEF_QUANTUM_DECIMALS).tobytes())
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        values = self._values(belief, h)
        action = int(np.argmax(values))
        result = (float(values[action]), action)
        self._memo[key] = result
        return result

    def _values(self, belief, h: int):
        continuation = None
        if h > 1:
            continuation = lambda b: self._solve(b, h - 1)[0]
        return _action_values(belief, self.joint, self.gamma if h > 1 else 0.0, continuation)

    def action_values(self, belief, horizon: int) -> np.ndarray:
        """Per-channel optimal values at the root (for tie-aware checks)."""
        if not 1 <= horizon <= EXPECTIMAX_MAX_HORIZON:
            raise CapacityError(f"horizon must lie in 1..{EXPECTIMAX_MAX_HORIZON}, got {horizon}")
        return self._values(validate_belief(belief), horizon)


def exact_finite_horizon_solve(model, gamma: float, horizon: int, belief):
    """Exact finite-horizon POMDP solve; returns (value, first action)."""
    return FiniteHorizonSolver(model, gamma).solve(belief, horizon)


@dataclass
class FixedPatternQTable:
    """Optimal Q-values of the M-state fully observable fixed-pattern MDP.

    State i means subset C_i was the active subset in the previous slot.
    Actions fall into three classes: a channel of C_{i+1} (pays off when
    the pattern advances), a channel of C_i (pays off when it holds), and
    any other channel (never good next slot).
    """

    subsets: tuple
    p: float
    gamma: float
    values: np.ndarray      # V*(S_i)
    cont: np.ndarray        # c_i = gamma (p V*(S_{i+1}) + (1-p) V*(S_i))
    q_next: np.ndarray
    q_same: np.ndarray
    q_other: np.ndarray     # NaN when M < 3
    q: np.ndarray           # (M, N) per-channel Q

    @property
    def n_subsets(self) -> int:
        return len(self.subsets)

    def argmax_channels(self, state: int):
        """All channels achieving the optimal Q at `state` (exact ties)."""
        row = self.q[state]
        best = row.max()
        return tuple(int(k) for k in np.nonzero(row == best)[0])

    def greedy_action(self, state: int) -> int:
        return self.argmax_channels(state)[0]


def fixed_pattern_q(subsets, p: float, gamma: float, tol: float = 1e-10, max_iters: int = 1_000_000) -> FixedPatternQTable:
    """Solve the fixed-pattern MDP by value iteration on the M subset
    states (sup-norm tolerance `tol`).

    The reward of an action depends on where the pattern lands this slot:
    a channel of C_{i+1} earns 2p-1 in expectation, a channel of C_i earns
    1-2p, anything else earns -1, each plus the shared continuation c_i.
    """
    from .models import FixedPatternModel

    model = subsets if isinstance(subsets, FixedPatternModel) else FixedPatternModel(subsets, p)
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must lie in [0, 1), got {gamma}")
    m = model.n_subsets
    n = model.n_channels
    p = model.p
    values = np.zeros(m)
    for _ in range(max_iters):
        cont = gamma * (p * np.roll(values, -1) + (1.0 - p) * values)
        if m == 1:
            new = 1.0 + cont
        else:
            q_next = 2.0 * p - 1.0 + cont
            q_same = 1.0 - 2.0 * p + cont
            new = np.maximum(q_next, q_same)
            if m > 2:
                new = np.maximum(new, -1.0 + cont)
        if np.abs(new - values).max() < tol:
            values = new
            break
        values = new
    else:
        raise NumericError(f"value iteration did not converge within {max_iters} iterations")

    cont = gamma * (p * np.roll(values, -1) + (1.0 - p) * values)
    if m == 1:
        q_next = 1.0 + cont
        q_same = q_next.copy()
        q_other = np.full(m, np.nan)
    else:
        q_next = 2.0 * p - 1.0 + cont
        q_same = 1.0 - 2.0 * p + cont
        q_other = (-1.0 + cont) if m > 2 else np.full(m, np.nan)
    q = np.empty((m, n))
    for i in range(m):
        for k in range(n):
            s = model.subset_of[k]
            if s == (i + 1) % m:
                q[i, k] = q_next[i]
            elif s == i:
                q[i, k] = q_same[i]
            else:
                q[i, k] = -1.0 + cont[i]
    return FixedPatternQTable(
        subsets=model.subsets, p=p, gamma=gamma, values=values, cont=cont,
        q_next=q_next, q_same=q_same, q_other=q_other, q=q,
    )


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma^(t-1) r_t with the first slot at weight 1."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        return 0.0
    return float(rewards @ (gamma ** np.arange(rewards.size)))


def truncation_error_bound(gamma: float, length: int) -> float:
    """Worst-case gap between an L-slot return and its infinite-horizon
    value: gamma^L / (1 - gamma) for rewards bounded by 1."""
    return gamma ** length / (1.0 - gamma)

"""Sensing policies: random, belief-greedy (myopic), the pattern-tracking
policy that is optimal for fixed-pattern models, and the Whittle index
heuristic with its numeric index computation.

All policies share the episode protocol: reset(rng) at episode start,
act() -> channel, observe(action, obs) after each sensed slot.
"""

import bisect
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ImpossibleObservation, NumericError
from .models import FixedPatternModel, bits_table, expand_to_joint

logger = logging.getLogger(__name__)

WHITTLE_GRID = 1001
WHITTLE_VI_TOL = 1e-8
WHITTLE_BISECT_TOL = 1e-4
OMEGA_KEY_DECIMALS = 12


@dataclass(frozen=True)
class GilbertElliotChain:
    """Two-state channel chain; state 0 is bad, state 1 is good."""

    p00: float
    p01: float
    p10: float
    p11: float

    def __post_init__(self):
        for name in ("p00", "p01", "p10", "p11"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if abs(self.p00 + self.p01 - 1.0) > 1e-12 or abs(self.p10 + self.p11 - 1.0) > 1e-12:
            raise ConfigError("chain rows must sum to 1")

    @classmethod
    def from_matrix(cls, mat) -> "GilbertElliotChain":
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != (2, 2):
            raise ConfigError(f"chain matrix must be 2x2, got {mat.shape}")
        return cls(float(mat[0, 0]), float(mat[0, 1]), float(mat[1, 0]), float(mat[1, 1]))

    @classmethod
    def from_good_transitions(cls, p11: float, p01: float) -> "GilbertElliotChain":
        return cls(1.0 - p01, p01, 1.0 - p11, p11)

    def matrix(self) -> np.ndarray:
        return np.array([[self.p00, self.p01], [self.p10, self.p11]])

    @property
    def stationary_good(self) -> float:
        denom = self.p01 + self.p10
        if denom == 0.0:
            return 0.5  # identity chain: any distribution is stationary
        return self.p01 / denom

    @property
    def positively_correlated(self) -> bool:
        return self.p11 >= self.p01

    def key(self):
        return (round(self.p01, 15), round(self.p11, 15))


def per_channel_belief_step(omega: float, chain: GilbertElliotChain, sensed=None) -> float:
    """One-slot update of a single channel's good-probability.

    If the channel was sensed this slot, the belief first collapses to the
    observation; either way it is pushed one step through the chain.
    """
    base = float(sensed) if sensed is not None else float(omega)
    return chain.p11 * base + chain.p01 * (1.0 - base)


def mle_estimate_chain(observations) -> GilbertElliotChain:
    """Maximum-likelihood 2x2 chain from a fully observed 0/1 state
    sequence. A state that never occurs as a transition source gets the
    uninformed row [0.5, 0.5]."""
    obs = np.asarray(observations, dtype=np.int64)
    if obs.ndim != 1 or obs.size < 2:
        raise ConfigError("need a 1-d sequence of at least two observations")
    if not np.isin(obs, (0, 1)).all():
        raise ConfigError("observations must be 0 or 1")
    counts = np.bincount(2 * obs[:-1] + obs[1:], minlength=4)
    rows = np.empty((2, 2))
    for s in (0, 1):
        total = counts[2 * s] + counts[2 * s + 1]
        if total == 0:
            logger.warning("state %d never observed as a transition source; using [0.5, 0.5]", s)
            rows[s] = (0.5, 0.5)
        else:
            rows[s] = (counts[2 * s] / total, counts[2 * s + 1] / total)
    return GilbertElliotChain.from_matrix(rows)


def random_action(n: int, rng: np.random.Generator) -> int:
    return int(rng.integers(n))


class RandomPolicy:
    def __init__(self, n: int):
        self.n = int(n)
        self.rng = None

    def reset(self, rng: np.random.Generator):
        self.rng = rng

    def act(self) -> int:
        return random_action(self.n, self.rng)

    def observe(self, action: int, obs: int):
        pass


def myopic_action(belief) -> int:
    """Channel with the largest marginal good-probability, lowest index on ties."""
    from .beliefs import channel_marginals

    return int(np.argmax(channel_marginals(np.asarray(belief, dtype=np.float64))))


class MyopicPolicy:
    """Belief-greedy policy with access to the true joint chain.

    Tracks the exact joint belief, restricted to the set of states
    reachable from the initial belief's support (the restriction is exact:
    observation and transition updates never leave it).
    """

    def __init__(self, model, initial_belief=None):
        joint = expand_to_joint(model)
        n = joint.n_channels
        init = joint.stationary() if initial_belief is None else np.asarray(initial_belief, dtype=np.float64)
        if init.shape[0] != joint.n_states:
            raise ConfigError(f"belief length {init.shape[0]} does not match {joint.n_states} joint states")
        support = self._closure(joint.transition, np.nonzero(init > 0.0)[0])
        self._sup = np.array(sorted(support), dtype=np.int64)
        sub = joint.transition[self._sup][:, self._sup]
        self._P = sub.toarray() if len(self._sup) <= 1024 else sub
        row_sums = np.asarray(self._P.sum(axis=1)).ravel()
        if np.abs(row_sums - 1.0).max() > 1e-9:
            raise NumericError("reachable-state restriction is not closed under the transition matrix")
        self._bits = bits_table(n)[self._sup]
        self._init = init[self._sup] / init[self._sup].sum()
        self.n = n
        self.belief = None

    @staticmethod
    def _closure(P, seeds):
        seen = set(int(s) for s in seeds)
        frontier = list(seen)
        while frontier:
            nxt = []
            for s in frontier:
                lo, hi = P.indptr[s], P.indptr[s + 1]
                for c, v in zip(P.indices[lo:hi], P.data[lo:hi]):
                    if v > 0.0 and int(c) not in seen:
                        seen.add(int(c))
                        nxt.append(int(c))
            frontier = nxt
        return seen

    def reset(self, rng=None):
        self.belief = self._init.copy()

    def act(self) -> int:
        return int(np.argmax(self.belief @ self._bits))

    def observe(self, action: int, obs: int):
        mask = self._bits[:, action] == (1.0 if obs else 0.0)
        masked = np.where(mask, self.belief, 0.0)
        mass = masked.sum()
        if mass <= 0.0:
            raise ImpossibleObservation(
                f"channel {action} observed {'good' if obs else 'bad'} has zero probability under the tracked belief"
            )
        out = (masked / mass) @ self._P
        self.belief = np.asarray(out).ravel()
        self.belief /= self.belief.sum()


class GenieFixedPatternPolicy:
    """Pattern-tracking policy for fixed-pattern models (optimal given the
    subset order and switch probability).

    First slot: the lowest channel of the first subset. Afterwards, for
    p >= 0.5 a good observation means advance to the next subset and a bad
    one means stay; for p < 0.5 the rule flips.
    """

    def __init__(self, model_or_subsets, p: float = None):
        if isinstance(model_or_subsets, FixedPatternModel):
            model = model_or_subsets
        else:
            model = FixedPatternModel(model_or_subsets, p)
        self.subsets = model.subsets
        self.subset_of = model.subset_of
        self.p = model.p
        self.advance_on_good = model.p >= 0.5
        self._last = None

    def reset(self, rng=None):
        self._last = None

    def act(self) -> int:
        if self._last is None:
            return self.subsets[0][0]
        action, obs = self._last
        if bool(obs) == self.advance_on_good:
            m = (self.subset_of[action] + 1) % len(self.subsets)
            return self.subsets[m][0]
        return action

    def observe(self, action: int, obs: int):
        self._last = (action, obs)


# ---------------------------------------------------------------------------
# Whittle index
# ---------------------------------------------------------------------------

def _subsidy_value_iteration(chain, gamma, lam, grid, tol, max_iters, v_init=None):
    """Value function of the single-channel subsidy problem on a uniform
    belief grid with linear interpolation.

    Active: expected reward 2w - 1, belief resolves to p11 or p01.
    Passive: subsidy lam, belief propagates one chain step.
    """
    xs = np.linspace(0.0, 1.0, grid)
    v = np.zeros(grid) if v_init is None else v_init.copy()
    passive_next = xs * chain.p11 + (1.0 - xs) * chain.p01
    active_base = 2.0 * xs - 1.0
    for _ in range(max_iters):
        v_good = np.interp(chain.p11, xs, v)
        v_bad = np.interp(chain.p01, xs, v)
        qa = active_base + gamma * (xs * v_good + (1.0 - xs) * v_bad)
        qp = lam + gamma * np.interp(passive_next, xs, v)
        new = np.maximum(qa, qp)
        if np.abs(new - v).max() < tol:
            return new
        v = new
    raise NumericError(f"subsidy value iteration did not converge (lam={lam})")


def _active_passive_gap(chain, omega, gamma, lam, v, xs):
    v_good = np.interp(chain.p11, xs, v)
    v_bad = np.interp(chain.p01, xs, v)
    qa = 2.0 * omega - 1.0 + gamma * (omega * v_good + (1.0 - omega) * v_bad)
    qp = lam + gamma * np.interp(omega * chain.p11 + (1.0 - omega) * chain.p01, xs, v)
    return qa - qp


def whittle_index(chain: GilbertElliotChain, omega: float, gamma: float,
                  grid: int = WHITTLE_GRID, vi_tol: float = WHITTLE_VI_TOL,
                  bisect_tol: float = WHITTLE_BISECT_TOL, max_iters: int = 100_000) -> float:
    """Whittle index of a channel at belief `omega`: the passive subsidy
    that makes sensing and idling equally attractive, found by bisection
    over [-1, 1].

    The active-minus-passive value gap is nonincreasing in the subsidy, so
    a sign test at each bisection midpoint suffices. A gap that is already
    nonpositive at -1 (or nonnegative at +1) clamps to that endpoint.
    """
    if not 0.0 <= omega <= 1.0:
        raise ConfigError(f"belief must lie in [0, 1], got {omega}")
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must lie in [0, 1), got {gamma}")
    xs = np.linspace(0.0, 1.0, grid)
    lo, hi = -1.0, 1.0
    v = _subsidy_value_iteration(chain, gamma, lo, grid, vi_tol, max_iters)
    if _active_passive_gap(chain, omega, gamma, lo, v, xs) <= 0.0:
        return lo
    v = _subsidy_value_iteration(chain, gamma, hi, grid, vi_tol, max_iters, v_init=v)
    if _active_passive_gap(chain, omega, gamma, hi, v, xs) >= 0.0:
        return hi
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        v = _subsidy_value_iteration(chain, gamma, mid, grid, vi_tol, max_iters, v_init=v)
        if _active_passive_gap(chain, omega, gamma, mid, v, xs) >= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class WhittleIndexCache:
    """Memoizes whittle_index per belief for one chain.

    New values are clamped between the cached values of the neighbouring
    beliefs. The true index is monotone in the belief for positively
    correlated chains, so clamping only removes bisection noise; it keeps
    the cached index map monotone, which keeps argmax-by-index consistent
    with argmax-by-belief for identical chains.
    """

    def __init__(self, chain: GilbertElliotChain, gamma: float, **kwargs):
        self.chain = chain
        self.gamma = gamma
        self.kwargs = kwargs
        self._omegas = []
        self._indices = []

    def get(self, omega: float) -> float:
        key = round(float(omega), OMEGA_KEY_DECIMALS)
        pos = bisect.bisect_left(self._omegas, key)
        if pos < len(self._omegas) and self._omegas[pos] == key:
            return self._indices[pos]
        value = whittle_index(self.chain, key, self.gamma, **self.kwargs)
        if self.chain.positively_correlated:
            if pos > 0:
                value = max(value, self._indices[pos - 1])
            if pos < len(self._indices):
                value = min(value, self._indices[pos])
        self._omegas.insert(pos, key)
        self._indices.insert(pos, value)
        return value


def whittle_policy_action(beliefs, chains, gamma: float, caches=None) -> int:
    """Index-greedy action. Ties on the index fall back to the higher
    current belief, then the lowest channel index (for exact ties this is
    the plain lowest-index rule)."""
    if caches is None:
        caches = {}
        for c in chains:
            caches.setdefault(c.key(), WhittleIndexCache(c, gamma))
    indices = [caches[c.key()].get(w) for w, c in zip(beliefs, chains)]
    n = len(chains)
    return max(range(n), key=lambda k: (indices[k], beliefs[k], -k))


class WhittleIndexPolicy:
    """Whittle heuristic: per-channel beliefs under per-channel chains,
    sense the channel with the largest index."""

    def __init__(self, chains, gamma: float, **index_kwargs):
        self.chains = list(chains)
        self.gamma = float(gamma)
        self._caches = {}
        for c in self.chains:
            self._caches.setdefault(c.key(), WhittleIndexCache(c, gamma, **index_kwargs))
        self.beliefs = None

    def reset(self, rng=None):
        self.beliefs = [c.stationary_good for c in self.chains]

    def act(self) -> int:
        return whittle_policy_action(self.beliefs, self.chains, self.gamma, self._caches)

    def observe(self, action: int, obs: int):
        self.beliefs = [
            per_channel_belief_step(w, c, sensed=obs if k == action else None)
            for k, (w, c) in enumerate(zip(self.beliefs, self.chains))
        ]

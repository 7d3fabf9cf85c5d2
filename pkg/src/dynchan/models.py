"""Generative models of correlated multichannel state processes.

Every model exposes the same stateless interface: an opaque latent state,
`initial_state` / `next_state` to sample its evolution, and `channel_states`
to read the length-N vector of 0/1 channel conditions. Joint-state indices
use the little-endian convention: bit k of the index is channel k.
"""

import numpy as np
from scipy import sparse

from .errors import CapacityError, ConfigError, NumericError, TraceExhausted, TraceFormatError

MAX_JOINT_CHANNELS = 20
MAX_DENSE_CHANNELS = 10
ROW_SUM_TOL = 1e-12


def state_to_index(bits) -> int:
    """Pack a 0/1 channel-state vector into a joint-state index (bit k = channel k)."""
    idx = 0
    for k, b in enumerate(bits):
        if b not in (0, 1):
            raise ConfigError(f"channel states must be 0 or 1, got {b!r}")
        idx |= int(b) << k
    return idx


def index_to_state(index: int, n: int) -> np.ndarray:
    """Unpack a joint-state index into its length-n 0/1 channel vector."""
    return np.array([(index >> k) & 1 for k in range(n)], dtype=np.int8)


def bits_table(n: int) -> np.ndarray:
    """(2^n, n) matrix whose row i is index_to_state(i, n), as float64."""
    idx = np.arange(1 << n)
    return ((idx[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)


def _validate_chain(chain, what="chain") -> np.ndarray:
    chain = np.asarray(chain, dtype=np.float64)
    if chain.shape != (2, 2):
        raise ConfigError(f"{what} must be 2x2, got shape {chain.shape}")
    if np.any(chain < 0.0) or np.any(chain > 1.0):
        raise ConfigError(f"{what} entries must lie in [0, 1]")
    if np.any(np.abs(chain.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ConfigError(f"{what} rows must sum to 1")
    return chain


class ChannelModel:
    """Base interface; states are opaque and owned by the caller."""

    n_channels: int

    def initial_state(self, rng):
        raise NotImplementedError

    def first_state(self):
        """Canonical pinned start, or None when the model has no natural one."""
        return None

    def next_state(self, state, rng):
        raise NotImplementedError

    def channel_states(self, state) -> np.ndarray:
        raise NotImplementedError

    def channel_state(self, state, k: int) -> int:
        return int(self.channel_states(state)[k])


class PhaseCycleModel(ChannelModel):
    """Cyclic phases, each with an arbitrary set of good channels.

    The phase index advances by one (circularly) with probability p each
    slot and holds otherwise. Generalizes the partitioned fixed-pattern
    model to good-sets that may overlap or leave channels always-bad.
    """

    def __init__(self, n_channels: int, phases, p: float):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"switch probability must lie in [0, 1], got {p}")
        if n_channels < 1:
            raise ConfigError("need at least one channel")
        phases = tuple(tuple(sorted(int(c) for c in ph)) for ph in phases)
        if not phases:
            raise ConfigError("need at least one phase")
        for ph in phases:
            if not ph:
                raise ConfigError("phases must have at least one good channel")
            if len(set(ph)) != len(ph):
                raise ConfigError(f"duplicate channel in phase {ph}")
            if min(ph) < 0 or max(ph) >= n_channels:
                raise ConfigError(f"phase {ph} references channels outside 0..{n_channels - 1}")
        self.n_channels = int(n_channels)
        self.phases = phases
        self.p = float(p)

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    def initial_state(self, rng):
        # Uniform over phases; stationary for the circulant phase chain.
        return int(rng.integers(self.n_phases))

    def first_state(self):
        return 0

    def next_state(self, state, rng):
        if rng.random() < self.p:
            return (state + 1) % self.n_phases
        return state

    def channel_states(self, state) -> np.ndarray:
        out = np.zeros(self.n_channels, dtype=np.int8)
        out[list(self.phases[state])] = 1
        return out

    def channel_state(self, state, k: int) -> int:
        return 1 if k in self._good_sets[state] else 0

    @property
    def _good_sets(self):
        sets = getattr(self, "_good_sets_cache", None)
        if sets is None:
            sets = [frozenset(ph) for ph in self.phases]
            self._good_sets_cache = sets
        return sets

    def to_joint(self):
        """Expand to the joint 2^N chain. Phase good-sets must be distinct."""
        n = self.n_channels
        if n > MAX_JOINT_CHANNELS:
            raise CapacityError(f"joint expansion limited to {MAX_JOINT_CHANNELS} channels, got {n}")
        pattern = [state_to_index(self.channel_states(m)) for m in range(self.n_phases)]
        if len(set(pattern)) != len(pattern):
            raise ConfigError("phases with identical good-sets cannot be expanded to a joint chain")
        size = 1 << n
        rows, cols, vals = [], [], []
        covered = set(pattern)
        for m, s in enumerate(pattern):
            s_next = pattern[(m + 1) % self.n_phases]
            if self.p > 0.0:
                rows.append(s)
                cols.append(s_next)
                vals.append(self.p)
            if self.p < 1.0:
                rows.append(s)
                cols.append(s)
                vals.append(1.0 - self.p)
        for s in range(size):
            if s not in covered:
                rows.append(s)
                cols.append(s)
                vals.append(1.0)
        mat = sparse.csr_array((vals, (rows, cols)), shape=(size, size))
        return JointMarkovModel(mat, support=sorted(covered))


class FixedPatternModel(PhaseCycleModel):
    """Ordered partition C_0..C_{M-1} of the channels; exactly one subset is
    good at a time and the active subset advances circularly with
    probability p each slot."""

    def __init__(self, subsets, p: float):
        subsets = tuple(tuple(sorted(int(c) for c in ss)) for ss in subsets)
        seen = set()
        for ss in subsets:
            if not ss:
                raise ConfigError("subsets must be nonempty")
            overlap = seen.intersection(ss)
            if overlap:
                raise ConfigError(f"subsets overlap on channels {sorted(overlap)}")
            seen.update(ss)
        n = len(seen)
        if seen != set(range(n)):
            raise ConfigError(f"subsets must cover channels 0..{n - 1} exactly")
        super().__init__(n, subsets, p)
        self.subsets = self.phases
        self.subset_of = np.empty(n, dtype=np.int64)
        for m, ss in enumerate(self.subsets):
            self.subset_of[list(ss)] = m

    @property
    def n_subsets(self) -> int:
        return self.n_phases

    def channel_state(self, state, k: int) -> int:
        return 1 if self.subset_of[k] == state else 0


def build_fixed_pattern(subsets, p: float) -> FixedPatternModel:
    return FixedPatternModel(subsets, p)


def even_partition(n: int, subset_size: int, order=None):
    """Partition channels (optionally permuted by `order`) into consecutive
    subsets of equal size."""
    if n < 1 or subset_size < 1 or n % subset_size != 0:
        raise ConfigError(f"cannot split {n} channels into subsets of {subset_size}")
    chans = list(range(n)) if order is None else [int(c) for c in order]
    if sorted(chans) != list(range(n)):
        raise ConfigError("order must be a permutation of all channels")
    return tuple(tuple(chans[i: i + subset_size]) for i in range(0, n, subset_size))


class CorrelatedChannelModel(ChannelModel):
    """Independent channels sharing one 2-state chain, plus channels that
    copy (rho = +1) or invert (rho = -1) an independent source channel."""

    def __init__(self, n_channels: int, chain, independent, mapping):
        self.n_channels = int(n_channels)
        self.chain = _validate_chain(chain)
        self.independent = tuple(sorted(int(c) for c in independent))
        self.mapping = {int(k): (int(src), int(rho)) for k, (src, rho) in dict(mapping).items()}
        declared = set(self.independent) | set(self.mapping)
        if declared != set(range(self.n_channels)):
            raise ConfigError("independent channels plus mapped channels must cover every channel exactly once")
        if set(self.independent) & set(self.mapping):
            raise ConfigError("a channel cannot be both independent and mapped")
        for dep, (src, rho) in self.mapping.items():
            if src not in self.independent:
                raise ConfigError(f"channel {dep} maps to {src}, which is not independent")
            if rho not in (1, -1):
                raise ConfigError(f"correlation sign for channel {dep} must be +1 or -1, got {rho}")
        self._pos = {c: i for i, c in enumerate(self.independent)}

    @property
    def stationary_good(self) -> float:
        p01, p10 = self.chain[0, 1], self.chain[1, 0]
        if p01 + p10 == 0.0:
            return 0.5
        return p01 / (p01 + p10)

    def initial_state(self, rng):
        # Each independent channel drawn from the chain's stationary point.
        bits = (rng.random(len(self.independent)) < self.stationary_good).astype(np.int8)
        return state_to_index(bits)

    def next_state(self, state, rng):
        k = len(self.independent)
        out = 0
        for i in range(k):
            b = (state >> i) & 1
            if rng.random() < self.chain[b, 1]:
                out |= 1 << i
        return out

    def channel_states(self, state) -> np.ndarray:
        out = np.empty(self.n_channels, dtype=np.int8)
        for i, c in enumerate(self.independent):
            out[c] = (state >> i) & 1
        for dep, (src, rho) in self.mapping.items():
            b = (state >> self._pos[src]) & 1
            out[dep] = b if rho == 1 else 1 - b
        return out

    def channel_state(self, state, k: int) -> int:
        if k in self._pos:
            return (state >> self._pos[k]) & 1
        src, rho = self.mapping[k]
        b = (state >> self._pos[src]) & 1
        return b if rho == 1 else 1 - b

    def to_joint(self):
        n = self.n_channels
        if n > MAX_JOINT_CHANNELS:
            raise CapacityError(f"joint expansion limited to {MAX_JOINT_CHANNELS} channels, got {n}")
        k = len(self.independent)
        full = [state_to_index(self.channel_states(s)) for s in range(1 << k)]
        size = 1 << n
        rows, cols, vals = [], [], []
        for a in range(1 << k):
            for b in range(1 << k):
                pr = 1.0
                for i in range(k):
                    pr *= self.chain[(a >> i) & 1, (b >> i) & 1]
                if pr > 0.0:
                    rows.append(full[a])
                    cols.append(full[b])
                    vals.append(pr)
        consistent = set(full)
        for s in range(size):
            if s not in consistent:
                rows.append(s)
                cols.append(s)
                vals.append(1.0)
        mat = sparse.csr_array((vals, (rows, cols)), shape=(size, size))
        mat.sum_duplicates()
        return JointMarkovModel(mat, support=sorted(consistent))


class TraceModel(ChannelModel):
    """Replays recorded channel states; the latent state is a row cursor."""

    def __init__(self, slots):
        slots = np.asarray(slots, dtype=np.int8)
        if slots.ndim != 2 or slots.shape[0] < 1 or slots.shape[1] < 1:
            raise ConfigError("trace must be a nonempty (slots, channels) array")
        if not np.isin(slots, (0, 1)).all():
            raise ConfigError("trace entries must be 0 or 1")
        self.slots = slots
        self.n_channels = slots.shape[1]

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]

    def initial_state(self, rng):
        return 0

    def first_state(self):
        return 0

    def next_state(self, state, rng):
        return state + 1

    def channel_states(self, state) -> np.ndarray:
        if state >= self.n_slots:
            raise TraceExhausted(f"trace has {self.n_slots} slots, cursor at {state}")
        return self.slots[state]

    def channel_state(self, state, k: int) -> int:
        if state >= self.n_slots:
            raise TraceExhausted(f"trace has {self.n_slots} slots, cursor at {state}")
        return int(self.slots[state, k])


class NonstationaryModel(ChannelModel):
    """Behaves like phase_a before switch_slot and phase_b from then on.

    The latent state carries the slot count; phase_b's state is drawn fresh
    at the switch. Slot t senses the phase active at t (0-based), so
    switch_slot is the first slot governed by phase_b.
    """

    def __init__(self, phase_a: ChannelModel, phase_b: ChannelModel, switch_slot: int):
        if phase_a.n_channels != phase_b.n_channels:
            raise ConfigError("both phases must have the same channel count")
        if switch_slot < 1:
            raise ConfigError("switch_slot must be at least 1")
        self.phase_a = phase_a
        self.phase_b = phase_b
        self.switch_slot = int(switch_slot)
        self.n_channels = phase_a.n_channels

    def phase_at(self, slot: int) -> ChannelModel:
        return self.phase_a if slot < self.switch_slot else self.phase_b

    def initial_state(self, rng):
        return (0, self.phase_a.initial_state(rng))

    def first_state(self):
        inner = self.phase_a.first_state()
        return None if inner is None else (0, inner)

    def next_state(self, state, rng):
        t, inner = state
        nt = t + 1
        if nt < self.switch_slot:
            return (nt, self.phase_a.next_state(inner, rng))
        if nt == self.switch_slot:
            return (nt, self.phase_b.initial_state(rng))
        return (nt, self.phase_b.next_state(inner, rng))

    def channel_states(self, state) -> np.ndarray:
        t, inner = state
        return self.phase_at(t).channel_states(inner)

    def channel_state(self, state, k: int) -> int:
        t, inner = state
        return self.phase_at(t).channel_state(inner, k)


class JointMarkovModel(ChannelModel):
    """Explicit Markov chain over all 2^N joint channel states.

    The transition matrix is stored sparse (csr). `support`, when given,
    lists the reachable states; it seeds stationary-distribution iteration
    and initial-state sampling.
    """

    def __init__(self, transition, support=None):
        if sparse.issparse(transition):
            mat = sparse.csr_array(transition)
        else:
            mat = sparse.csr_array(np.asarray(transition, dtype=np.float64))
        size = mat.shape[0]
        if mat.shape[0] != mat.shape[1]:
            raise ConfigError(f"transition matrix must be square, got {mat.shape}")
        n = size.bit_length() - 1
        if (1 << n) != size or n < 1:
            raise ConfigError(f"matrix size must be 2^N with N >= 1, got {size}")
        if n > MAX_JOINT_CHANNELS:
            raise CapacityError(f"joint models limited to {MAX_JOINT_CHANNELS} channels, got {n}")
        if mat.nnz and mat.data.min() < -ROW_SUM_TOL:
            raise ConfigError("transition probabilities must be nonnegative")
        sums = np.asarray(mat.sum(axis=1)).ravel()
        bad = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
        if bad.size:
            raise ConfigError(f"transition rows must sum to 1 (first offender: row {bad[0]}, sum {sums[bad[0]]!r})")
        self.transition = mat
        self.n_channels = n
        self.support = None if support is None else sorted(int(s) for s in support)
        self._stationary = None

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def stationary(self) -> np.ndarray:
        if self._stationary is None:
            self._stationary = stationary_distribution(self)
        return self._stationary

    def initial_state(self, rng):
        pi = self.stationary()
        return int(rng.choice(self.n_states, p=pi))

    def next_state(self, state, rng):
        lo, hi = self.transition.indptr[state], self.transition.indptr[state + 1]
        cols = self.transition.indices[lo:hi]
        probs = self.transition.data[lo:hi]
        probs = probs / probs.sum()
        return int(rng.choice(cols, p=probs))

    def channel_states(self, state) -> np.ndarray:
        return index_to_state(state, self.n_channels)

    def channel_state(self, state, k: int) -> int:
        return (state >> k) & 1


def expand_to_joint(model: ChannelModel) -> JointMarkovModel:
    """Joint 2^N chain of a structured model (fixed-pattern, phase-cycle,
    or correlated). Rows of unreachable states are self-loops."""
    if isinstance(model, JointMarkovModel):
        return model
    if not hasattr(model, "to_joint"):
        raise ConfigError(f"{type(model).__name__} has no joint-chain expansion")
    return model.to_joint()


def build_joint_from_marginals(chains) -> JointMarkovModel:
    """Product chain of independent per-channel 2x2 chains (dense Kronecker
    construction, capped at {MAX_DENSE_CHANNELS} channels)."""
    chains = [_validate_chain(c, f"chain {i}") for i, c in enumerate(chains)]
    n = len(chains)
    if n < 1:
        raise ConfigError("need at least one chain")
    if n > MAX_DENSE_CHANNELS:
        raise CapacityError(f"dense product construction limited to {MAX_DENSE_CHANNELS} channels, got {n}")
    # Index bit k is channel k, so channel n-1 is the outermost Kronecker factor.
    mat = chains[-1]
    for c in reversed(chains[:-1]):
        mat = np.kron(mat, c)
    if n == 1:
        mat = chains[0]
    return JointMarkovModel(mat)


def stationary_distribution(model: JointMarkovModel, tol: float = 1e-10, max_iters: int = 200_000) -> np.ndarray:
    """Stationary distribution by power iteration from the uniform
    distribution over the model's support.

    Also monitors the Cesaro average of the iterates (using the identity
    mean_t @ P - mean_t = (v_t - v_0)/t), which converges for periodic
    chains where the plain iterates cycle.
    """
    P = model.transition
    size = P.shape[0]
    if model.support is None:
        v0 = np.full(size, 1.0 / size)
    else:
        v0 = np.zeros(size)
        v0[model.support] = 1.0 / len(model.support)
    v = v0
    total = np.zeros(size)
    for t in range(1, max_iters + 1):
        w = v @ P
        if np.abs(w - v).max() < tol:
            return w / w.sum()
        total += v
        if np.abs(w - v0).max() / t < tol:
            mean = total / t
            return mean / mean.sum()
        v = w
    raise NumericError(
        f"stationary distribution power iteration did not converge within {max_iters} iterations "
        f"(last residual {np.abs(w - v).max():.3e})"
    )


def load_trace(path) -> TraceModel:
    """Parse a trace file: one slot per line, N space-separated 0/1 tokens,
    lines starting with '#' are comments, blank lines are skipped."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if any(t not in ("0", "1") for t in tokens):
                bad = next(t for t in tokens if t not in ("0", "1"))
                raise TraceFormatError(f"{path}: line {lineno}: invalid token {bad!r} (expected 0 or 1)")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise TraceFormatError(f"{path}: line {lineno}: expected {width} tokens, found {len(tokens)}")
            rows.append([int(t) for t in tokens])
    if not rows:
        raise TraceFormatError(f"{path}: no data rows")
    return TraceModel(np.array(rows, dtype=np.int8))


def save_trace(path, slots) -> None:
    slots = np.asarray(slots)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in slots:
            fh.write(" ".join(str(int(b)) for b in row) + "\n")

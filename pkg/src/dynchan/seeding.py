"""Deterministic RNG derivation.

Every stochastic component gets its own generator derived from the run seed
and a structural key, so adding draws to one component never shifts another.
"""

import numpy as np

# Stream ids used as the leading spawn-key element.
ENV_STREAM = 0
POLICY_STREAM = 1
AGENT_STREAM = 2
EVAL_STREAM = 3
PROBE_STREAM = 4
DATA_STREAM = 5


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for stream `key` of the run identified by `seed`."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))

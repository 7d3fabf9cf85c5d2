"""Degradation-triggered retraining loop.

A pretrained agent acts greedily while its frozen policy is evaluated
every `period` environment slots. When the evaluated return falls far
enough below the rolling best, training resumes on a fresh replay buffer
(weights warm-start by default) until the return stops improving or the
retraining budget runs out.

"Far enough" is measured against the attainable span rather than as a
plain ratio: returns here can be negative, so a relative drop in the
usual sense is ill-defined. With floor = -(1 - gamma^L)/(1 - gamma),
retraining triggers when best - ret >= threshold * (best - floor). A
threshold near 1 therefore only fires when the policy is close to the
worst attainable return.

The environment's phase schedule is read from its global slot clock:
each period advances the clock by `period` slots, interaction inside a
retraining period uses the phase active at the period's first slot, and
evaluation uses the phase active at its last. Frozen periods advance the
clock without simulating slots (nothing observes them).
"""

from dataclasses import dataclass, field

from .agents import History, ReplayBuffer, TrainConfig
from .env import EnvSpec
from .errors import ConfigError
from .evaluation import AgentPolicy, SingleUserAdapter, evaluate_policy
from .seeding import AGENT_STREAM, ENV_STREAM, spawn_rng


@dataclass
class AdaptiveConfig:
    period: int = 1000             # env slots between frozen-policy evaluations
    threshold: float = 0.3         # span-normalized drop that triggers retraining
    budget: int = 100              # max retraining periods per trigger
    total_periods: int = 50
    cold_start: bool = False       # reinitialize weights instead of warm-starting
    stabilize_tol: float = 0.1     # improvement below this does not reset patience
    stabilize_patience: int = 5    # non-improving evals that end retraining

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError("adaptive period must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("adaptive threshold must lie strictly between 0 and 1")
        if self.budget < 1 or self.total_periods < 1:
            raise ConfigError("adaptive budget and total_periods must be positive")
        if self.stabilize_patience < 1:
            raise ConfigError("stabilize_patience must be positive")


@dataclass
class AdaptiveLogRow:
    period: int
    env_steps: int
    phase: int
    mean_return: float
    event: str        # idle | trigger | retrain | stable | budget
    best: float


@dataclass
class AdaptiveResult:
    rows: list = field(default_factory=list)
    retrain_periods: int = 0

    @property
    def events(self):
        return [r.event for r in self.rows]

    def triggers(self):
        return [r.period for r in self.rows if r.event == "trigger"]


def _phase_of(model, slot: int):
    phase_at = getattr(model, "phase_at", None)
    if phase_at is None:
        return model, 0
    phase = phase_at(slot)
    return phase, (0 if slot < model.switch_slot else 1)


def adaptive_dqn_run(agent, env_spec: EnvSpec, acfg: AdaptiveConfig, tcfg: TrainConfig,
                     seed: int, eval_episodes: int = 50) -> AdaptiveResult:
    """Run the monitor/retrain loop and return its per-period log.

    The agent is expected to arrive pretrained on the environment's
    initial phase. `tcfg` supplies the training mechanics (epsilon,
    batch size, replay sizing, episode length, gamma) used whenever
    retraining is active.
    """
    n = env_spec.n_channels
    m = tcfg.history if tcfg.history is not None else n
    if agent.input_dim != m * n:
        raise ConfigError(f"agent input dim {agent.input_dim} does not match history {m} x {n}")
    gamma = tcfg.gamma
    length = tcfg.episode_length
    floor = -(1.0 - gamma ** length) / (1.0 - gamma) if gamma < 1.0 else -float(length)

    agent_rng = spawn_rng(seed, AGENT_STREAM, 1)
    history = History(m, n)
    replay = None
    retraining = False
    retrain_left = 0
    no_improve = 0
    best = float("-inf")
    global_steps = 0
    global_episode = 0
    result = AdaptiveResult()

    for period in range(1, acfg.total_periods + 1):
        if retraining:
            phase, _ = _phase_of(env_spec.model, global_steps)
            spec = EnvSpec(phase, start=env_spec.start, trace_split=env_spec.trace_split)
            adapter = SingleUserAdapter(spec)
            slot_in_episode = 0
            for _ in range(acfg.period):
                if slot_in_episode % length == 0:
                    ep = global_episode
                    adapter.begin_episode(spawn_rng(seed, ENV_STREAM, 1, ep), ep, length)
                    history.reset()
                    global_episode += 1
                x = history.flat()
                a = agent.act(x, tcfg.epsilon, agent_rng)
                slot_vec, r = adapter.step(a)
                history.push(slot_vec)
                replay.add(x, a, r, history.flat())
                slot_in_episode += 1
                if len(replay) >= tcfg.min_replay:
                    agent.train_step(replay, gamma, agent_rng, tcfg.batch_size)
            result.retrain_periods += 1
        global_steps += acfg.period

        phase, phase_id = _phase_of(env_spec.model, global_steps - 1)
        spec = EnvSpec(phase, start=env_spec.start, trace_split=env_spec.trace_split)
        policy = AgentPolicy(agent, n, history_m=m)
        report = evaluate_policy(policy, spec, eval_episodes, length, gamma, seed)
        ret = report.mean_return

        if retraining:
            event = "retrain"
            if ret > best + acfg.stabilize_tol:
                no_improve = 0
            else:
                no_improve += 1
            best = max(best, ret)
            retrain_left -= 1
            if retrain_left <= 0:
                retraining = False
                event = "budget"
            elif no_improve >= acfg.stabilize_patience:
                retraining = False
                event = "stable"
        else:
            best = max(best, ret)
            event = "idle"
            # span 0 means best sits on the attainable floor; a zero drop
            # over a zero span is not degradation, so never fire there
            if best - floor > 0.0 and best - ret >= acfg.threshold * (best - floor):
                event = "trigger"
                retraining = True
                retrain_left = acfg.budget
                no_improve = 0
                best = float("-inf")
                replay = ReplayBuffer(tcfg.replay_capacity)
                history.reset()
                if acfg.cold_start:
                    agent.reinitialize(spawn_rng(seed, AGENT_STREAM, 2, period))

        result.rows.append(AdaptiveLogRow(period, global_steps, phase_id, ret, event,
                                          best if best > float("-inf") else ret))
    return result

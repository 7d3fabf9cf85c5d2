"""Named experiment bundles and their CSV artifacts.

Every bundle writes some subset of three deterministic CSV families into
the output directory:

  comparison.csv          case_id, policy, seed, mean_return, stderr, config_hash
  curve_<case>.csv        iteration, env_steps, mean_return, avg_max_q, seed, config_hash
  utilization_<case>.csv  policy, channel, fraction, seed, config_hash

Floats are written with repr(), so reruns with the same config and seed
are byte-identical.
"""

import os
from dataclasses import dataclass

import numpy as np

from .adaptive import AdaptiveConfig, adaptive_dqn_run
from .agents import TrainConfig, build_agent, collect_probes, train_dqn
from .config import (
    get_bool,
    get_float,
    get_float_list,
    get_int,
    get_int_list,
    get_str,
    get_str_list,
    config_hash,
)
from .env import EnvSpec
from .errors import ConfigError
from .evaluation import (
    AgentPolicy,
    ComboAgentPolicy,
    MultiUserAdapter,
    RandomComboPolicy,
    SingleUserAdapter,
    combo_actions,
    evaluate_multi_user,
    evaluate_policy,
    make_training_evaluator,
)
from .models import (
    FixedPatternModel,
    NonstationaryModel,
    PhaseCycleModel,
    TraceModel,
    build_fixed_pattern,
    even_partition,
    expand_to_joint,
    save_trace,
)
from .beliefs import marginal_channel_chain
from .policies import (
    GenieFixedPatternPolicy,
    GilbertElliotChain,
    MyopicPolicy,
    RandomPolicy,
    WhittleIndexPolicy,
    mle_estimate_chain,
)
from .seeding import AGENT_STREAM, DATA_STREAM, spawn_rng

DEFAULT_MLE_SLOTS = 10_000


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    # np.float64 subclasses float; coerce so repr never carries the type name
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def make_bursty_trace(n_slots: int, seed: int, n_channels: int = 8, band_split: int = 4,
                      switch_p: float = 0.05, noise: float = 0.02) -> np.ndarray:
    """Synthetic interference trace: one of two channel bands is clear at a
    time, the active band persists for geometric dwell times, and a small
    independent flip noise roughens the edges."""
    if not 0 < band_split < n_channels:
        raise ConfigError("band_split must split the channels into two nonempty bands")
    rng = spawn_rng(seed, DATA_STREAM)
    slots = np.zeros((n_slots, n_channels), dtype=np.int8)
    phase = 0
    for t in range(n_slots):
        if t > 0 and rng.random() < switch_p:
            phase ^= 1
        if phase == 0:
            slots[t, :band_split] = 1
        else:
            slots[t, band_split:] = 1
        flips = rng.random(n_channels) < noise
        slots[t, flips] ^= 1
    return slots


def whittle_chains_for(model, gamma: float, fit: str = "auto",
                       mle_slots: int = DEFAULT_MLE_SLOTS, trace_split=None):
    """Per-channel 2-state chains for the index policy.

    Markov models expose their exact per-channel marginals; traces get
    maximum-likelihood fits from (at most) the first mle_slots slots of
    the training split.
    """
    if fit not in ("auto", "marginal", "mle"):
        raise ConfigError(f"whittle.fit must be auto, marginal or mle, got {fit!r}")
    if isinstance(model, TraceModel) or fit == "mle":
        if not isinstance(model, TraceModel):
            raise ConfigError("mle chain fitting needs a trace environment")
        end = model.n_slots if trace_split is None else min(trace_split, model.n_slots)
        end = min(end, mle_slots)
        return [mle_estimate_chain(model.slots[:end, k]) for k in range(model.n_channels)]
    joint = expand_to_joint(model)
    return [GilbertElliotChain.from_matrix(marginal_channel_chain(joint, k))
            for k in range(model.n_channels)]


def make_policy(name: str, env_spec: EnvSpec, gamma: float, agent=None,
                whittle_fit: str = "auto", mle_slots: int = DEFAULT_MLE_SLOTS):
    model = env_spec.model
    n = env_spec.n_channels
    if name == "random":
        return RandomPolicy(n)
    if name == "genie":
        if not isinstance(model, FixedPatternModel):
            raise ConfigError("the genie policy needs a fixed-pattern environment")
        return GenieFixedPatternPolicy(model)
    if name == "myopic":
        return MyopicPolicy(model)
    if name == "whittle":
        chains = whittle_chains_for(model, gamma, fit=whittle_fit,
                                    mle_slots=mle_slots, trace_split=env_spec.trace_split)
        return WhittleIndexPolicy(chains, gamma)
    if name == "dqn":
        if agent is None:
            raise ConfigError("dqn policy needs a trained agent")
        return AgentPolicy(agent, n)
    raise ConfigError(f"unknown policy {name!r}")


@dataclass
class ExperimentContext:
    cfg: dict
    seeds: list
    out_dir: str
    hash: str

    def f(self, key, default=None, **kw):
        return get_float(self.cfg, key, default=default, **kw)

    def i(self, key, default=None, **kw):
        return get_int(self.cfg, key, default=default, **kw)

    def s(self, key, default=None, **kw):
        return get_str(self.cfg, key, default=default, **kw)


def _eval_params(ctx):
    episodes = ctx.i("experiment.episodes", default=1000, lo=1)
    length = ctx.i("eval.length", default=100, lo=1)
    gamma = ctx.f("eval.gamma", default=ctx.f("train.gamma", default=0.9), lo=0.0, hi=1.0)
    return episodes, length, gamma


def _train_config(ctx, length, gamma):
    return TrainConfig(
        iterations=ctx.i("experiment.iterations", default=60, lo=1),
        episode_length=length,
        gamma=gamma,
        epsilon=ctx.f("train.epsilon", default=0.1, lo=0.0, hi=1.0),
    )


def _train_dqn_for(ctx, env_spec, seed, tcfg, curve_rows):
    """Fresh agent trained on env_spec; curve points appended to curve_rows."""
    n = env_spec.n_channels
    m = tcfg.history if tcfg.history is not None else n
    preset = ctx.s("agent.preset", default="wide2")
    agent = build_agent(preset, m * n, n, spawn_rng(seed, AGENT_STREAM, 0))
    evaluator = make_training_evaluator(env_spec, n, m, episodes=20,
                                        length=tcfg.episode_length, gamma=tcfg.gamma, seed=seed)
    probes = collect_probes(SingleUserAdapter(env_spec), m, seed)
    result = train_dqn(agent, lambda: SingleUserAdapter(env_spec), tcfg, seed,
                       evaluator=evaluator, probes=probes)
    for it, steps, ret, avg_q in result.curve:
        curve_rows.append((it, steps, ret, avg_q, seed, ctx.hash))
    return agent


def _compare_cases(ctx, cases, policies, episodes_override=None):
    """Evaluate every policy on every case for every seed; write the three
    CSV families and return the written paths."""
    episodes, length, gamma = _eval_params(ctx)
    if episodes_override is not None:
        episodes = episodes_override
    tcfg = _train_config(ctx, length, gamma)
    mle_slots = ctx.i("whittle.mle_slots", default=DEFAULT_MLE_SLOTS, lo=1)
    fit = ctx.s("whittle.fit", default="auto")
    comparison, paths = [], []
    for case_id, env_spec in cases:
        curve_rows, util_rows = [], []
        for name in policies:
            for seed in ctx.seeds:
                agent = None
                if name == "dqn":
                    agent = _train_dqn_for(ctx, env_spec, seed, tcfg, curve_rows)
                policy = make_policy(name, env_spec, gamma, agent=agent,
                                     whittle_fit=fit, mle_slots=mle_slots)
                report = evaluate_policy(policy, env_spec, episodes, length, gamma, seed)
                comparison.append((case_id, name, seed, report.mean_return, report.stderr, ctx.hash))
                for ch, frac in enumerate(report.utilization):
                    util_rows.append((name, ch, frac, seed, ctx.hash))
        paths.append(write_csv(os.path.join(ctx.out_dir, f"utilization_{case_id}.csv"),
                               ("policy", "channel", "fraction", "seed", "config_hash"), util_rows))
        if curve_rows:
            paths.append(write_csv(os.path.join(ctx.out_dir, f"curve_{case_id}.csv"),
                                   ("iteration", "env_steps", "mean_return", "avg_max_q",
                                    "seed", "config_hash"), curve_rows))
    paths.insert(0, write_csv(os.path.join(ctx.out_dir, "comparison.csv"),
                              ("case_id", "policy", "seed", "mean_return", "stderr",
                               "config_hash"), comparison))
    return paths


def _policies(ctx, default):
    return get_str_list(ctx.cfg, "experiment.policies", default=list(default))


def round_robin_sweep(ctx: ExperimentContext):
    """Singleton round-robin over 16 channels, sweeping the advance
    probability; the clairvoyant return has a closed form per p."""
    n = ctx.i("env.channels", default=16, lo=2)
    ps = get_float_list(ctx.cfg, "experiment.p_values", default=[0.5, 0.6, 0.7, 0.8, 0.9])
    cases = [(f"p{p}", EnvSpec(build_fixed_pattern(even_partition(n, 1), p), start="first"))
             for p in ps]
    return _compare_cases(ctx, cases, _policies(ctx, ("genie", "dqn", "whittle", "random")))


def switching_order(ctx: ExperimentContext):
    """Same chain, different channel visiting orders."""
    n = ctx.i("env.channels", default=16, lo=2)
    p = ctx.f("env.p", default=0.9, lo=0.0, hi=1.0)
    orders_raw = ctx.s("experiment.orders", default=None)
    if orders_raw is None:
        half = n // 2
        interleaved = [c for pair in zip(range(half), range(half, n)) for c in pair]
        named = [("consecutive", None), ("interleaved", interleaved)]
    else:
        named = []
        for i, part in enumerate(orders_raw.split(";")):
            order = [int(tok) for tok in part.split(",") if tok.strip() != ""]
            named.append((f"order{i}", order))
    cases = [(case_id, EnvSpec(build_fixed_pattern(even_partition(n, 1, order), p), start="first"))
             for case_id, order in named]
    return _compare_cases(ctx, cases, _policies(ctx, ("genie", "dqn", "whittle", "random")))


def multiple_good(ctx: ExperimentContext):
    """Partition sizes 1..8: the clairvoyant return does not depend on the
    subset size, only on p."""
    n = ctx.i("env.channels", default=16, lo=2)
    p = ctx.f("env.p", default=0.9, lo=0.0, hi=1.0)
    sizes = get_int_list(ctx.cfg, "experiment.subset_sizes", default=[1, 2, 4, 8])
    cases = [(f"good{size}", EnvSpec(build_fixed_pattern(even_partition(n, size, None), p), start="first"))
             for size in sizes]
    return _compare_cases(ctx, cases, _policies(ctx, ("genie", "whittle", "random")))


def correlated_pairs(ctx: ExperimentContext):
    """Half the channels copy (or invert) an independent partner."""
    from .models import CorrelatedChannelModel

    n = ctx.i("env.channels", default=8, lo=2)
    p01 = ctx.f("env.p01", default=0.3, lo=0.0, hi=1.0)
    p11 = ctx.f("env.p11", default=0.8, lo=0.0, hi=1.0)
    chain = [[1.0 - p01, p01], [1.0 - p11, p11]]
    if n % 2 != 0:
        raise ConfigError("correlated_pairs needs an even channel count")
    independent = list(range(0, n, 2))
    cases = []
    for case_id, rho in (("copy", 1), ("invert", -1)):
        mapping = {c + 1: (c, rho) for c in independent}
        model = CorrelatedChannelModel(n, chain, independent, mapping)
        cases.append((case_id, EnvSpec(model, start="stationary")))
    return _compare_cases(ctx, cases, _policies(ctx, ("myopic", "whittle", "random")))


def trace_ordering(ctx: ExperimentContext):
    """Synthetic bursty trace; the expected outcome is the strict ordering
    dqn > whittle > random on evaluated return."""
    n_slots = ctx.i("experiment.trace_slots", default=60_000, lo=2_000)
    seed0 = ctx.seeds[0]
    slots = make_bursty_trace(n_slots, seed0)
    trace_path = os.path.join(ctx.out_dir, "trace.txt")
    save_trace(trace_path, slots)
    split = ctx.i("env.trace_split", default=n_slots // 3, lo=1)
    env_spec = EnvSpec(TraceModel(slots), trace_split=split)
    episodes, length, gamma = _eval_params(ctx)
    max_eval = (n_slots - split) // length
    if "experiment.episodes" in ctx.cfg and episodes > max_eval:
        raise ConfigError(
            f"experiment.episodes {episodes} exceeds the {max_eval} disjoint eval windows")
    paths = _compare_cases(ctx, [("trace", env_spec)],
                           _policies(ctx, ("dqn", "whittle", "random")),
                           episodes_override=min(episodes, max_eval))
    paths.append(trace_path)
    return paths


def adaptive_switch(ctx: ExperimentContext):
    """Pattern change mid-run: pretrain on the first phase, monitor, and
    retrain when the evaluated return collapses."""
    n = ctx.i("env.channels", default=16, lo=2)
    p = ctx.f("env.p", default=0.9, lo=0.0, hi=1.0)
    episodes, length, gamma = _eval_params(ctx)
    acfg = AdaptiveConfig(
        period=ctx.i("adaptive.period", default=1000, lo=1),
        threshold=ctx.f("adaptive.threshold", default=0.3),
        budget=ctx.i("adaptive.budget", default=80, lo=1),
        total_periods=ctx.i("adaptive.total_periods", default=60, lo=1),
        cold_start=get_bool(ctx.cfg, "adaptive.cold_start", default=False),
    )
    phase_a = build_fixed_pattern(even_partition(n, n // 2), p)
    phase_b = build_fixed_pattern(even_partition(n, 1), p)
    switch = ctx.i("env.switch_slot", default=5 * acfg.period, lo=1)
    model = NonstationaryModel(phase_a, phase_b, switch)
    env_spec = EnvSpec(model, start="first")
    tcfg = _train_config(ctx, length, gamma)
    pre_iters = ctx.i("adaptive.pretrain_iterations", default=40, lo=1)
    pre_cfg = TrainConfig(iterations=pre_iters, episode_length=length, gamma=gamma,
                          epsilon=tcfg.epsilon)
    spec_a = EnvSpec(phase_a, start="first")

    log_rows, comparison = [], []
    for seed in ctx.seeds:
        agent = build_agent(ctx.s("agent.preset", default="wide2"),
                            n * n, n, spawn_rng(seed, AGENT_STREAM, 0))
        train_dqn(agent, lambda: SingleUserAdapter(spec_a), pre_cfg, seed)
        result = adaptive_dqn_run(agent, env_spec, acfg, tcfg, seed,
                                  eval_episodes=min(episodes, 100))
        for row in result.rows:
            log_rows.append((row.period, row.env_steps, row.phase, row.mean_return,
                             row.event, row.best, seed, ctx.hash))
        comparison.append(("post_switch", "dqn", seed, result.rows[-1].mean_return, 0.0, ctx.hash))
    spec_b = EnvSpec(phase_b, start="first")
    for seed in ctx.seeds:
        genie = GenieFixedPatternPolicy(phase_b)
        report = evaluate_policy(genie, spec_b, min(episodes, 1000), length, gamma, seed)
        comparison.append(("post_switch", "genie", seed, report.mean_return, report.stderr, ctx.hash))
    paths = [
        write_csv(os.path.join(ctx.out_dir, "adaptive_log.csv"),
                  ("period", "env_steps", "phase", "mean_return", "event", "best",
                   "seed", "config_hash"), log_rows),
        write_csv(os.path.join(ctx.out_dir, "comparison.csv"),
                  ("case_id", "policy", "seed", "mean_return", "stderr", "config_hash"),
                  comparison),
    ]
    return paths


def multi_user(ctx: ExperimentContext):
    """Centralized control of several users on a cycle with more good
    channels than users; actions enumerate channel subsets."""
    n = ctx.i("env.channels", default=8, lo=2)
    p = ctx.f("env.p", default=0.9, lo=0.0, hi=1.0)
    users_list = get_int_list(ctx.cfg, "experiment.users", default=[2])
    phases = [[(i + j) % n for j in range(n - 2)] for i in range(n)]
    model = PhaseCycleModel(n, phases, p)
    env_spec = EnvSpec(model, start="first")
    episodes, length, gamma = _eval_params(ctx)
    tcfg = _train_config(ctx, length, gamma)
    comparison, paths = [], []
    for users in users_list:
        combos = combo_actions(n, users)
        case_id = f"users{users}"
        curve_rows, util_rows = [], []
        for seed in ctx.seeds:
            agent = build_agent(ctx.s("agent.preset", default="wide2"),
                                n * n, len(combos), spawn_rng(seed, AGENT_STREAM, 0))
            result = train_dqn(agent, lambda: MultiUserAdapter(env_spec, users), tcfg, seed)
            for it, steps, ret, avg_q in result.curve:
                curve_rows.append((it, steps, ret, avg_q, seed, ctx.hash))
            for name, policy in (("dqn", ComboAgentPolicy(agent, combos, n)),
                                 ("random", RandomComboPolicy(len(combos)))):
                report = evaluate_multi_user(policy, env_spec, users, episodes, length, gamma, seed)
                comparison.append((case_id, name, seed, report.mean_return, report.stderr, ctx.hash))
                for ch, frac in enumerate(report.utilization):
                    util_rows.append((name, ch, frac, seed, ctx.hash))
        paths.append(write_csv(os.path.join(ctx.out_dir, f"curve_{case_id}.csv"),
                               ("iteration", "env_steps", "mean_return", "avg_max_q",
                                "seed", "config_hash"), curve_rows))
        paths.append(write_csv(os.path.join(ctx.out_dir, f"utilization_{case_id}.csv"),
                               ("policy", "channel", "fraction", "seed", "config_hash"), util_rows))
    paths.insert(0, write_csv(os.path.join(ctx.out_dir, "comparison.csv"),
                              ("case_id", "policy", "seed", "mean_return", "stderr",
                               "config_hash"), comparison))
    return paths


EXPERIMENTS = {
    "round_robin_sweep": round_robin_sweep,
    "switching_order": switching_order,
    "multiple_good": multiple_good,
    "correlated_pairs": correlated_pairs,
    "trace_ordering": trace_ordering,
    "adaptive_switch": adaptive_switch,
    "multi_user": multi_user,
}


def run_experiment(cfg: dict, out_dir, seeds=None) -> list:
    """Dispatch a named bundle; returns the paths it wrote."""
    name = get_str(cfg, "experiment.name", choices=tuple(EXPERIMENTS))
    if seeds is None:
        seeds = get_int_list(cfg, "experiment.seeds", default=[0])
    if not seeds:
        raise ConfigError("experiment.seeds must name at least one seed")
    os.makedirs(out_dir, exist_ok=True)
    ctx = ExperimentContext(cfg=cfg, seeds=list(seeds), out_dir=str(out_dir),
                            hash=config_hash(cfg))
    return EXPERIMENTS[name](ctx)

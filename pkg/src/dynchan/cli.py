"""Command line front end.

Exit codes: 0 success, 2 configuration problems (bad keys, bad values,
malformed trace files), 3 numeric failures (divergence, impossible
observations, non-convergence), 4 capacity limits.
"""

import argparse
import os
import sys

from .adaptive import AdaptiveConfig, adaptive_dqn_run
from .agents import (
    TabularQAgent,
    TrainConfig,
    build_agent,
    collect_probes,
    load_checkpoint,
    save_checkpoint,
    train_dqn,
    train_tabular,
)
from .beliefs import EXPECTIMAX_MAX_CHANNELS, exact_finite_horizon_solve, fixed_pattern_q
from .config import (
    build_env_spec,
    build_model,
    config_hash,
    get_bool,
    get_float,
    get_int,
    get_int_list,
    get_str,
    load_config,
)
from .env import EnvSpec
from .errors import CapacityError, ConfigError, NumericError
from .evaluation import AgentPolicy, SingleUserAdapter, evaluate_policy, make_training_evaluator
from .experiments import DEFAULT_MLE_SLOTS, make_policy, run_experiment, write_csv
from .models import FixedPatternModel, TraceModel, expand_to_joint
from .seeding import AGENT_STREAM, spawn_rng

POLICY_CHOICES = ("random", "genie", "myopic", "whittle", "dqn")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynchan",
        description="Simulate, solve, train and evaluate policies for "
                    "opportunistic multichannel access.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="directory for CSV / checkpoint output")
        p.add_argument("--preset", choices=("wide2", "deep3"), default=None,
                       help="override agent.preset")
        return p

    add("simulate", "run an environment under a fixed policy")
    add("solve", "exact values: pattern Q-table or finite-horizon expectimax")
    add("train", "train a DQN or tabular agent; writes curve + checkpoint")
    p = add("eval", "evaluate a trained checkpoint")
    p.add_argument("--checkpoint", default=None, help="overrides eval.checkpoint")
    add("adaptive", "pretrain, monitor, retrain on degradation")
    add("trace", "validate a channel trace file and report statistics")
    add("experiment", "run a named experiment bundle")
    return parser


def _eval_params(cfg):
    episodes = get_int(cfg, "eval.episodes", default=1000, lo=1)
    length = get_int(cfg, "eval.length", default=100, lo=1)
    gamma = get_float(cfg, "eval.gamma", default=get_float(cfg, "train.gamma", default=0.9),
                      lo=0.0, hi=1.0)
    return episodes, length, gamma


def _train_params(cfg):
    return TrainConfig(
        iterations=get_int(cfg, "train.iterations", default=200, lo=1),
        steps_per_iteration=get_int(cfg, "train.steps_per_iteration", default=1000, lo=1),
        episode_length=get_int(cfg, "train.episode_length", default=100, lo=1),
        epsilon=get_float(cfg, "train.epsilon", default=0.1, lo=0.0, hi=1.0),
        gamma=get_float(cfg, "train.gamma", default=0.9, lo=0.0, hi=1.0),
        batch_size=get_int(cfg, "train.batch_size", default=32, lo=1),
        min_replay=get_int(cfg, "train.min_replay", default=1000, lo=1),
        replay_capacity=get_int(cfg, "train.replay_capacity", default=1_000_000, lo=1),
        history=get_int(cfg, "agent.history", default=None, lo=1),
    )


def _build_dqn(cfg, n: int, m: int, seed: int):
    preset = get_str(cfg, "agent.preset", default="wide2", choices=("wide2", "deep3"))
    return build_agent(
        preset, m * n, n,
        spawn_rng(seed, AGENT_STREAM, 0),
        lr=get_float(cfg, "agent.lr", default=None, lo=0.0),
        hidden=get_int_list(cfg, "agent.hidden", default=None),
        target_sync=get_int(cfg, "agent.target_sync", default=0, lo=0),
        q_bound=get_float(cfg, "agent.q_bound", default=20.0, lo=0.0),
    )


def _load_agent(cfg, args):
    path = getattr(args, "checkpoint", None) or get_str(cfg, "eval.checkpoint", default=None)
    if path is None:
        raise ConfigError("a checkpoint is required (--checkpoint or eval.checkpoint)")
    return load_checkpoint(path)


def _write_report(out_dir, case_id, policy_name, report, h):
    os.makedirs(out_dir, exist_ok=True)
    paths = [
        write_csv(os.path.join(out_dir, "comparison.csv"),
                  ("case_id", "policy", "seed", "mean_return", "stderr", "config_hash"),
                  [(case_id, policy_name, report.seed, report.mean_return, report.stderr, h)]),
        write_csv(os.path.join(out_dir, f"utilization_{case_id}.csv"),
                  ("policy", "channel", "fraction", "seed", "config_hash"),
                  [(policy_name, ch, frac, report.seed, h)
                   for ch, frac in enumerate(report.utilization)]),
    ]
    return paths


def cmd_simulate(cfg, args):
    spec = build_env_spec(cfg)
    episodes, length, gamma = _eval_params(cfg)
    name = get_str(cfg, "eval.policy", default="random", choices=POLICY_CHOICES)
    agent = None
    if name == "dqn":
        agent, extra = _load_agent(cfg, args)
        del extra
    policy = make_policy(name, spec, gamma, agent=agent,
                         whittle_fit=get_str(cfg, "whittle.fit", default="auto"),
                         mle_slots=get_int(cfg, "whittle.mle_slots", default=DEFAULT_MLE_SLOTS, lo=1))
    report = evaluate_policy(policy, spec, episodes, length, gamma, args.seed)
    print(f"{name}: {report.summary()}")
    if args.out:
        for path in _write_report(args.out, "simulate", name, report, config_hash(cfg)):
            print(f"wrote {path}")


def cmd_solve(cfg, args):
    model = build_model(cfg)
    gamma = get_float(cfg, "eval.gamma", default=0.9, lo=0.0, hi=1.0)
    h = config_hash(cfg)
    if isinstance(model, FixedPatternModel):
        table = fixed_pattern_q(model, model.p, gamma)
        for i, subset in enumerate(table.subsets):
            print(f"state {i} (subset {list(subset)}): value {table.values[i]:.6f} "
                  f"greedy channel {table.greedy_action(i)}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            rows = [(i, k, table.q[i, k], h)
                    for i in range(len(table.subsets)) for k in range(table.q.shape[1])]
            path = write_csv(os.path.join(args.out, "solve_q.csv"),
                             ("state", "channel", "q", "config_hash"), rows)
            print(f"wrote {path}")
        return
    if model.n_channels > EXPECTIMAX_MAX_CHANNELS:
        raise ConfigError(
            f"exact solving covers fixed patterns and up to "
            f"{EXPECTIMAX_MAX_CHANNELS} channels, got {model.n_channels}")
    horizon = get_int(cfg, "eval.horizon", default=8, lo=1)
    belief = expand_to_joint(model).stationary()
    value, action = exact_finite_horizon_solve(model, gamma, horizon, belief)
    print(f"horizon {horizon} value {value:.6f}, first action channel {action}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = write_csv(os.path.join(args.out, "solve_expectimax.csv"),
                         ("horizon", "value", "first_action", "config_hash"),
                         [(horizon, value, action, h)])
        print(f"wrote {path}")


def cmd_train(cfg, args):
    spec = build_env_spec(cfg)
    n = spec.n_channels
    tcfg = _train_params(cfg)
    m = tcfg.history if tcfg.history is not None else n
    kind = get_str(cfg, "agent.kind", default="dqn", choices=("dqn", "tabular"))
    eval_eps = get_int(cfg, "train.eval_episodes", default=20, lo=0)
    evaluator = None
    if eval_eps:
        evaluator = make_training_evaluator(spec, n, m, eval_eps,
                                            tcfg.episode_length, tcfg.gamma, args.seed)
    h = config_hash(cfg)
    if kind == "tabular":
        agent = TabularQAgent(n, alpha=get_float(cfg, "agent.alpha", default=0.1, lo=0.0, hi=1.0))
        result = train_tabular(agent, lambda: SingleUserAdapter(spec), tcfg, args.seed,
                               evaluator=evaluator)
    else:
        agent = _build_dqn(cfg, n, m, args.seed)
        n_probes = get_int(cfg, "train.probes", default=64, lo=0)
        probes = None
        if n_probes:
            probes = collect_probes(SingleUserAdapter(spec), m, args.seed, count=n_probes,
                                    episode_length=tcfg.episode_length)
        result = train_dqn(agent, lambda: SingleUserAdapter(spec), tcfg, args.seed,
                           evaluator=evaluator, probes=probes)
    last = result.curve[-1]
    print(f"trained {kind}: {last[1]} env steps, final return "
          f"{last[2]:.4f}, avg max Q {last[3]:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rows = [(it, steps, ret, q, args.seed, h) for it, steps, ret, q in result.curve]
        path = write_csv(os.path.join(args.out, "curve.csv"),
                         ("iteration", "env_steps", "mean_return", "avg_max_q",
                          "seed", "config_hash"), rows)
        print(f"wrote {path}")
        if kind == "dqn":
            ck = os.path.join(args.out, "checkpoint.npz")
            save_checkpoint(ck, agent, extra={"seed": args.seed, "config_hash": h, "history": m})
            print(f"wrote {ck}")


def cmd_eval(cfg, args):
    spec = build_env_spec(cfg)
    episodes, length, gamma = _eval_params(cfg)
    agent, extra = _load_agent(cfg, args)
    m = extra.get("history") if isinstance(extra, dict) else None
    policy = AgentPolicy(agent, spec.n_channels, history_m=m)
    report = evaluate_policy(policy, spec, episodes, length, gamma, args.seed)
    print(f"dqn: {report.summary()}")
    if args.out:
        for path in _write_report(args.out, "eval", "dqn", report, config_hash(cfg)):
            print(f"wrote {path}")


def cmd_adaptive(cfg, args):
    spec = build_env_spec(cfg)
    n = spec.n_channels
    tcfg = _train_params(cfg)
    m = tcfg.history if tcfg.history is not None else n
    acfg = AdaptiveConfig(
        period=get_int(cfg, "adaptive.period", default=1000, lo=1),
        threshold=get_float(cfg, "adaptive.threshold", default=0.3),
        budget=get_int(cfg, "adaptive.budget", default=80, lo=1),
        total_periods=get_int(cfg, "adaptive.total_periods", default=50, lo=1),
        cold_start=get_bool(cfg, "adaptive.cold_start", default=False),
        stabilize_tol=get_float(cfg, "adaptive.stabilize_tol", default=0.1, lo=0.0),
        stabilize_patience=get_int(cfg, "adaptive.stabilize_patience", default=5, lo=1),
    )
    phase_a = spec.model.phase_at(0) if hasattr(spec.model, "phase_at") else spec.model
    pre_cfg = TrainConfig(
        iterations=get_int(cfg, "adaptive.pretrain_iterations", default=40, lo=1),
        steps_per_iteration=tcfg.steps_per_iteration, episode_length=tcfg.episode_length,
        epsilon=tcfg.epsilon, gamma=tcfg.gamma, batch_size=tcfg.batch_size,
        min_replay=tcfg.min_replay, replay_capacity=tcfg.replay_capacity, history=tcfg.history)
    agent = _build_dqn(cfg, n, m, args.seed)
    train_dqn(agent, lambda: SingleUserAdapter(EnvSpec(phase_a, start=spec.start)),
              pre_cfg, args.seed)
    episodes, length, gamma = _eval_params(cfg)
    del length, gamma
    result = adaptive_dqn_run(agent, spec, acfg, tcfg, args.seed,
                              eval_episodes=min(episodes, 100))
    for row in result.rows:
        if row.event != "idle":
            print(f"period {row.period}: {row.event} (return {row.mean_return:.4f})")
    print(f"final return {result.rows[-1].mean_return:.4f} after "
          f"{result.retrain_periods} retraining periods")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        h = config_hash(cfg)
        rows = [(r.period, r.env_steps, r.phase, r.mean_return, r.event, r.best,
                 args.seed, h) for r in result.rows]
        path = write_csv(os.path.join(args.out, "adaptive_log.csv"),
                         ("period", "env_steps", "phase", "mean_return", "event",
                          "best", "seed", "config_hash"), rows)
        print(f"wrote {path}")
        ck = os.path.join(args.out, "checkpoint.npz")
        save_checkpoint(ck, agent, extra={"seed": args.seed, "config_hash": h, "history": m})
        print(f"wrote {ck}")


def cmd_trace(cfg, args):
    model = build_model(cfg)
    if not isinstance(model, TraceModel):
        raise ConfigError("the trace command needs env.kind = trace")
    fractions = model.slots.mean(axis=0)
    print(f"trace ok: {model.n_slots} slots x {model.n_channels} channels")
    for ch, frac in enumerate(fractions):
        print(f"channel {ch}: good fraction {frac:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        h = config_hash(cfg)
        path = write_csv(os.path.join(args.out, "trace_stats.csv"),
                         ("channel", "good_fraction", "config_hash"),
                         [(ch, float(frac), h) for ch, frac in enumerate(fractions)])
        print(f"wrote {path}")


def cmd_experiment(cfg, args):
    if not args.out:
        raise ConfigError("experiment needs --out")
    seeds = get_int_list(cfg, "experiment.seeds", default=None)
    for path in run_experiment(cfg, args.out, seeds=seeds or [args.seed]):
        print(f"wrote {path}")


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "train": cmd_train,
    "eval": cmd_eval,
    "adaptive": cmd_adaptive,
    "trace": cmd_trace,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.preset is not None:
            cfg = dict(cfg)
            cfg["agent.preset"] = args.preset
        COMMANDS[args.command](cfg, args)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

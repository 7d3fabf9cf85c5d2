"""End-to-end command line checks: exit codes, output files, reruns."""

import numpy as np
import pytest

from dynchan import load_checkpoint, save_trace
from dynchan.cli import main


def conf(tmp_path, text, name="run.conf"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


RR4 = "env.kind = fixed_pattern\nenv.channels = 4\nenv.p = 0.9\n"

TRAIN_SMALL = (
    "env.kind = fixed_pattern\nenv.channels = 2\nenv.p = 0.9\n"
    "train.iterations = 2\ntrain.steps_per_iteration = 50\n"
    "train.episode_length = 25\ntrain.min_replay = 10\ntrain.batch_size = 8\n"
    "train.eval_episodes = 4\ntrain.probes = 8\n"
    "agent.hidden = 8\nagent.history = 2\n"
)


class TestExitCodes:
    def test_simulate_success(self, tmp_path, capsys):
        cfg = conf(tmp_path, RR4 + "eval.policy = genie\neval.episodes = 5\neval.length = 20\n")
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert "genie: mean return" in out
        assert (tmp_path / "out" / "comparison.csv").exists()
        assert (tmp_path / "out" / "utilization_simulate.csv").exists()

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        cfg = conf(tmp_path, RR4 + "eval.bogus = 1\n")
        assert main(["simulate", "--config", cfg]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_env_kind(self, tmp_path):
        cfg = conf(tmp_path, "eval.episodes = 5\n")
        assert main(["simulate", "--config", cfg]) == 2

    def test_malformed_trace_file(self, tmp_path, capsys):
        trace = tmp_path / "trace.txt"
        trace.write_text("1 0\n1 x\n")
        cfg = conf(tmp_path, f"env.kind = trace\nenv.trace_path = {trace}\n")
        assert main(["trace", "--config", cfg]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_solve_too_many_channels_for_expectimax(self, tmp_path):
        cfg = conf(tmp_path, "env.kind = correlated\nenv.channels = 5\n"
                             "env.p01 = 0.3\nenv.p11 = 0.8\n")
        assert main(["solve", "--config", cfg]) == 2

    def test_capacity_error_exits_4(self, tmp_path, capsys):
        cfg = conf(tmp_path, "env.kind = correlated\nenv.channels = 21\n"
                             "env.p01 = 0.3\nenv.p11 = 0.8\n"
                             "eval.policy = myopic\neval.episodes = 2\neval.length = 5\n")
        assert main(["simulate", "--config", cfg]) == 4
        assert "capacity error" in capsys.readouterr().err

    def test_divergence_exits_3(self, tmp_path, capsys):
        cfg = conf(tmp_path, TRAIN_SMALL + "agent.lr = 100.0\n")
        assert main(["train", "--config", cfg]) == 3
        assert "numeric error" in capsys.readouterr().err


class TestSolve:
    def test_pattern_q_table(self, tmp_path, capsys):
        cfg = conf(tmp_path, "env.kind = fixed_pattern\nenv.channels = 4\n"
                             "env.p = 0.8\nenv.subset_size = 2\n")
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert "state 0" in out and "state 1" in out
        lines = (tmp_path / "out" / "solve_q.csv").read_text().strip().splitlines()
        assert lines[0] == "state,channel,q,config_hash"
        assert len(lines) == 1 + 2 * 4  # M x N rows

    def test_expectimax(self, tmp_path, capsys):
        cfg = conf(tmp_path, "env.kind = correlated\nenv.channels = 2\n"
                             "env.p01 = 0.3\nenv.p11 = 0.8\neval.horizon = 3\n")
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        assert "horizon 3 value" in capsys.readouterr().out
        lines = (tmp_path / "out" / "solve_expectimax.csv").read_text().strip().splitlines()
        assert lines[0] == "horizon,value,first_action,config_hash"
        assert lines[1].startswith("3,")


class TestTrainAndEval:
    def test_train_writes_curve_and_checkpoint(self, tmp_path, capsys):
        cfg = conf(tmp_path, TRAIN_SMALL)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "trained dqn: 100 env steps" in stdout
        lines = (out / "curve.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,env_steps,mean_return,avg_max_q,seed,config_hash"
        assert len(lines) == 3
        agent, extra = load_checkpoint(out / "checkpoint.npz")
        assert agent.hidden == (8,)
        assert extra["seed"] == 0 and extra["history"] == 2

    def test_eval_roundtrip(self, tmp_path, capsys):
        cfg = conf(tmp_path, TRAIN_SMALL + "eval.episodes = 5\neval.length = 20\n")
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["eval", "--config", cfg, "--out", str(tmp_path / "ev"),
                     "--checkpoint", str(out / "checkpoint.npz")]) == 0
        assert "dqn: mean return" in capsys.readouterr().out
        rows = (tmp_path / "ev" / "comparison.csv").read_text().strip().splitlines()
        assert rows[1].startswith("eval,dqn,0,")

    def test_eval_without_checkpoint_fails(self, tmp_path):
        cfg = conf(tmp_path, TRAIN_SMALL)
        assert main(["eval", "--config", cfg]) == 2

    def test_preset_flag_overrides_architecture(self, tmp_path):
        # drop the explicit hidden override so the preset decides
        text = TRAIN_SMALL.replace("agent.hidden = 8\n", "")
        text = text.replace("train.probes = 8\n", "train.probes = 0\n")
        text = text.replace("train.eval_episodes = 4\n", "train.eval_episodes = 0\n")
        cfg = conf(tmp_path, text)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out), "--preset", "deep3"]) == 0
        agent, _ = load_checkpoint(out / "checkpoint.npz")
        assert agent.hidden == (50, 50, 50)

    def test_tabular_training(self, tmp_path, capsys):
        cfg = conf(tmp_path, TRAIN_SMALL + "agent.kind = tabular\n")
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert "trained tabular" in capsys.readouterr().out
        assert (out / "curve.csv").exists()
        assert not (out / "checkpoint.npz").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = conf(tmp_path, TRAIN_SMALL)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", cfg, "--out", str(a)]) == 0
        assert main(["train", "--config", cfg, "--out", str(b)]) == 0
        assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()


class TestTraceCommand:
    def test_stats_match_numpy(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        slots = (rng.random((50, 3)) < 0.4).astype(np.int8)
        trace = tmp_path / "trace.txt"
        save_trace(trace, slots)
        cfg = conf(tmp_path, f"env.kind = trace\nenv.trace_path = {trace}\n")
        assert main(["trace", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        assert "trace ok: 50 slots x 3 channels" in capsys.readouterr().out
        lines = (tmp_path / "out" / "trace_stats.csv").read_text().strip().splitlines()
        assert lines[0] == "channel,good_fraction,config_hash"
        fractions = slots.mean(axis=0)
        for ch, line in enumerate(lines[1:]):
            assert line.split(",")[1] == repr(float(fractions[ch]))


class TestExperimentCommand:
    def test_requires_out(self, tmp_path):
        cfg = conf(tmp_path, "experiment.name = multiple_good\n")
        assert main(["experiment", "--config", cfg]) == 2

    def test_small_bundle(self, tmp_path, capsys):
        cfg = conf(tmp_path,
                   "experiment.name = multiple_good\n"
                   "experiment.subset_sizes = 1\n"
                   "experiment.policies = genie, random\n"
                   "experiment.episodes = 10\n"
                   "env.channels = 4\nenv.p = 0.9\neval.length = 20\n")
        out = tmp_path / "out"
        assert main(["experiment", "--config", cfg, "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "comparison.csv" in stdout
        assert (out / "comparison.csv").exists()
        assert (out / "utilization_good1.csv").exists()

import time

import numpy as np

from dynchan import (
    EnvSpec,
    GenieFixedPatternPolicy,
    MyopicPolicy,
    TabularQAgent,
    TrainConfig,
    WhittleIndexPolicy,
    build_fixed_pattern,
    build_joint_from_marginals,
    evaluate_policy,
    even_partition,
    train_tabular,
)
from dynchan.env import ChannelEnv
from dynchan.evaluation import AgentPolicy
from dynchan.policies import GilbertElliotChain
from dynchan import spawn_rng

GAMMA = 0.9

# criterion 2: genie closed form, E=10k, seed 0
t0 = time.monotonic()
for p in (0.5, 0.6, 0.7, 0.8, 0.9):
    model = build_fixed_pattern(even_partition(16, 1), p)
    spec = EnvSpec(model, start="first")
    cf = 1 + (2 * p - 1) * GAMMA * (1 - GAMMA ** 99) / (1 - GAMMA)
    rep = evaluate_policy(GenieFixedPatternPolicy(model), spec, 10_000, 100, GAMMA, 0)
    band = 0.03 * abs(cf)
    print(f"c2 p={p}: mean={rep.mean_return:.5f} cf={cf:.5f} "
          f"err={abs(rep.mean_return - cf):.5f} band={band:.5f} "
          f"{'OK' if abs(rep.mean_return - cf) < band else 'FAIL'}")
print(f"c2 runtime {time.monotonic() - t0:.1f}s")

# criterion 8: tabular on the deterministic 2-cycle
t0 = time.monotonic()
model = build_fixed_pattern(even_partition(2, 1), 1.0)
spec = EnvSpec(model, start="first")
agent = TabularQAgent(2, alpha=0.1)
from dynchan.evaluation import SingleUserAdapter

cfg = TrainConfig(iterations=30, steps_per_iteration=1000, episode_length=100,
                  epsilon=0.1, gamma=GAMMA, history=2)
train_tabular(agent, lambda: SingleUserAdapter(spec), cfg, seed=0)
print(f"c8 train {time.monotonic() - t0:.1f}s, table size {len(agent.table)}")


def enc(a, o):
    v = np.zeros(2)
    v[a] = 1.0 if o else -1.0
    return v


def genie_rule(last):
    if last is None:
        return 0
    a, o = last
    return 1 - a if o else a


hists = [(np.zeros(4), None)]
for a1 in (0, 1):
    o1 = 1 if a1 == 0 else 0  # slot 1: channel 0 good
    hists.append((np.concatenate([np.zeros(2), enc(a1, o1)]), (a1, o1)))
for g in (0, 1):  # good channel two slots back
    for a in (0, 1):
        for a2 in (0, 1):
            o = 1 if a == g else 0
            o2 = 1 if a2 == (1 - g) else 0
            hists.append((np.concatenate([enc(a, o), enc(a2, o2)]), (a2, o2)))
bad = 0
for h, last in hists:
    key = agent.key(h)
    row = agent.table.get(key)
    want = genie_rule(last)
    got = None if row is None else int(np.argmax(row))
    if got != want:
        bad += 1
        print(f"c8 mismatch last={last} want={want} got={got} row={row}")
print(f"c8 histories checked {len(hists)}, mismatches {bad}")
rep = evaluate_policy(AgentPolicy(agent, 2, history_m=2), spec, 50, 100, GAMMA, 0)
print(f"c8 greedy return {rep.mean_return:.5f} target 10 within 2%: "
      f"{abs(rep.mean_return - 10) <= 0.2}")
print(f"c8 total {time.monotonic() - t0:.1f}s")

# criterion 4: whittle/myopic co-sim runtime
t0 = time.monotonic()
chain = GilbertElliotChain.from_good_transitions(p11=0.8, p01=0.3)
joint = build_joint_from_marginals([chain.matrix()] * 4)
env = ChannelEnv(joint, spawn_rng(0, 0))
myo = MyopicPolicy(joint)
whi = WhittleIndexPolicy([chain] * 4, GAMMA)
myo.reset()
whi.reset()
mismatch = 0
for _ in range(1000):
    a, b = myo.act(), whi.act()
    mismatch += a != b
    obs, _ = env.step(a)
    myo.observe(a, obs)
    whi.observe(a, obs)
print(f"c4 mismatches {mismatch}, runtime {time.monotonic() - t0:.1f}s")

# criterion 5: expectimax-vs-myopic over reachable beliefs, runtime
from dynchan import FiniteHorizonSolver, belief_step
from dynchan.beliefs import channel_marginals

t0 = time.monotonic()
rng = spawn_rng(42, 0)
total = 0
for trial in range(3):
    p01 = rng.uniform(0.05, 0.5)
    p11 = rng.uniform(p01, 0.95)
    M = np.array([[1 - p01, p01], [p11 * 0 + 1 - p11, p11]])
    M = np.array([[1 - p01, p01], [1 - p11, p11]])
    joint = build_joint_from_marginals([M, M])
    solver = FiniteHorizonSolver(joint, GAMMA)
    frontier = [joint.stationary()]
    seen = {tuple(np.round(frontier[0], 12))}
    beliefs = list(frontier)
    for _ in range(6):
        nxt = []
        for b in frontier:
            g = channel_marginals(b)
            for a in range(2):
                for obs in (0, 1):
                    prob = g[a] if obs else 1 - g[a]
                    if prob <= 1e-12:
                        continue
                    b2 = belief_step(b, joint, a, obs)
                    key = tuple(np.round(b2, 12))
                    if key not in seen:
                        seen.add(key)
                        nxt.append(b2)
                        beliefs.append(b2)
        frontier = nxt
    worst = 0.0
    for b in beliefs:
        vals = solver.action_values(b, 8)
        myopic_a = int(np.argmax(channel_marginals(b)))
        gap = vals.max() - vals[myopic_a]
        worst = max(worst, gap)
    total += len(beliefs)
    print(f"c5 trial {trial}: p01={p01:.3f} p11={p11:.3f} beliefs={len(beliefs)} worst gap={worst:.2e}")
print(f"c5 total beliefs {total}, runtime {time.monotonic() - t0:.1f}s")

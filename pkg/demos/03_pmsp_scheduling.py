"""Parallel machine scheduling with sequence-dependent setups.

Compares WSPT, random dispatch and tree search guided by WSPT on an offline
instance, then prints the WSPT schedule machine by machine.

    python3 demos/03_pmsp_scheduling.py
"""
from coplan.baselines import make_heuristic, make_policy, play
from coplan.envs import PmspEnv, generate_pmsp_offline
from coplan.mcts import MctsPolicy, SearchConfig

inst = generate_pmsp_offline(12, 3, 4, seed=1)
print("setup matrix (row = previous class):\n", inst.setup)

for name, pol in [("random", make_policy("random", "pmsp")), ("wspt", make_policy("greedy-wspt", "pmsp")),
                  ("mcts+wspt", MctsPolicy(make_heuristic("wspt"), SearchConfig(rollouts=300, beta=300.0, k=10)))]:
    env = PmspEnv(inst)
    play(env, pol, seed=1)
    print(f"{name:<10} TWCT {env.twct():.0f}")

env = PmspEnv(inst)
trs = play(env, make_policy("greedy-wspt", "pmsp"))
lanes = {m: [] for m in range(inst.machines)}
for t in trs:
    lanes[t.action.target].append(f"j{t.action.source}(c{inst.job_class[t.action.source]})")
for m, jobs in lanes.items():
    print(f"machine {m}: " + " ".join(jobs))

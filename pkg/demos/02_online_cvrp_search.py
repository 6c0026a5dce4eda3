"""Tree search on one online VRP20 instance.

Customers appear over time.  The search never sees the true future; each
rollout draws a fresh one from the arrival model.

    python3 demos/02_online_cvrp_search.py [rollouts]
"""
import sys

from coplan.baselines import make_heuristic, make_policy, play
from coplan.envs import CvrpEnv, generate_cvrp_online
from coplan.mcts import MctsPolicy, SearchConfig

rollouts = int(sys.argv[1]) if len(sys.argv) > 1 else 200
inst = generate_cvrp_online(20, 30, seed=7)
print(f"{inst.n} customers, last arrival at t={inst.arrival.max():.2f}")

for name, policy in [("distance", make_policy("distance", "cvrp")),
                     ("savings (quasi-offline)", make_policy("savings", "cvrp")),
                     (f"mcts+distance ({rollouts} rollouts)",
                      MctsPolicy(make_heuristic("distance"), SearchConfig(rollouts=rollouts)))]:
    env = CvrpEnv(inst)
    trs = play(env, policy, seed=7)
    waits = sum(t.action.is_noop for t in trs)
    print(f"{name:<32} cost {env.objective():.3f}  decisions {len(trs):>3}  waits {waits}")

"""Learn offline, search online, at toy scale.

Trains a small Q-network on 5-customer CVRP for a few thousand steps, then
uses it greedily and as the out-of-tree heuristic of the search.  The desk
preset (``DqnConfig.desk_cvrp()``, 2e4 steps) takes about ten CPU minutes;
this demo uses a fraction of it.

    python3 demos/04_train_then_search.py [steps]
"""
import sys

import numpy as np

from coplan.baselines import make_heuristic, make_policy, play
from coplan.dqn import DqnConfig, evaluate, train
from coplan.envs import CvrpEnv, generate_cvrp_offline
from coplan.mcts import MctsPolicy, SearchConfig
from coplan.nn import QNet, QNetConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
net_cfg = QNetConfig.cvrp(hidden=32)
res = train(lambda i: generate_cvrp_offline(5, 30, i), net_cfg,
            DqnConfig.desk_cvrp(total_steps=steps, eval_every=1000),
            progress=lambda row: print(row))
net = QNet(net_cfg, res.params)

test = [generate_cvrp_offline(5, 30, 2 * 10 ** 6 + i) for i in range(20)]
rand = []
for i, inst in enumerate(test):
    env = CvrpEnv(inst)
    play(env, make_policy("random", "cvrp"), i)
    rand.append(env.objective())
solo = []
for i, inst in enumerate(test):
    env = CvrpEnv(inst)
    play(env, MctsPolicy(make_heuristic("qnet", net), SearchConfig(rollouts=300, beta=3.0)), i)
    solo.append(env.objective())
print(f"random {np.mean(rand):.3f}  greedy Q-net {evaluate(net, net.params, test):.3f}  "
      f"search + Q-net {np.mean(solo):.3f}")

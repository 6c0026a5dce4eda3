"""Classical baselines on offline VRP20.

Generates ten seeded instances, runs every baseline on the same instances and
prints mean route length plus the relative gap to savings.

    python3 demos/01_offline_cvrp_baselines.py
"""
from coplan.bench import SUITES, build_report, run_suite

records = run_suite(SUITES["vrp20"], ["savings", "sweep", "distance", "random"], range(10))
print(build_report(records, reference="savings").table())

# every record replays from its logged action sequence
first = records[0]
print(f"\nseed {first.seed} {first.policy}: {first.decisions} decisions, cost {first.objective:.4f}")
print("actions:", first.actions)

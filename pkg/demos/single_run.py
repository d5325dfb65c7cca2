"""One seeded replication of the bundled campus, printed day by day.

    python3 demos/single_run.py [population] [days]
"""

import sys

from campusepi.engine import run_once
from campusepi.scenario import load_scenario

population = int(sys.argv[1]) if len(sys.argv) > 1 else 840
days = int(sys.argv[2]) if len(sys.argv) > 2 else 14

cfg = load_scenario("campus.json", [f"population.total={population}", f"simulation.horizon_days={days}"])
result = run_once(cfg, seed=1)

print(f"{'day':>3} {'latent':>7} {'infected':>9} {'rate':>6}")
for d in result.daily:
    print(f"{d.day:>3} {d.latent:>7} {d.infected:>9} {d.infection_rate:>6.3f}")

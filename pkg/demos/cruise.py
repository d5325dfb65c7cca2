"""Free-walking outbreak on the bundled cruise ship (slow; about a minute per replication)."""

from campusepi.engine import run_replicated
from campusepi.scenario import load_scenario

res = run_replicated(load_scenario("cruise.json"), 2)
cum = res.mean["cumulative_infected"]
for day in (1, 5, 10, 15, 21):
    print(f"day {day:>2}: {cum[day - 1]:7.1f} cumulative cases")

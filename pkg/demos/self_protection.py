"""Day-21 infection rate as the share of self-protecting people grows."""

from campusepi.engine import run_replicated
from campusepi.scenario import load_scenario

for beta in (0.0, 0.6, 0.7, 0.8, 0.9):
    res = run_replicated(load_scenario("campus.json", [f"infection.beta={beta}"]), 2)
    print(f"beta={beta:.1f}  day-21 rate {res.final('infection_rate').mean():.3f}")

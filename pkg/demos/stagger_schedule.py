"""Optimise departure offsets for the campus and compare with fixed schedules."""

from campusepi.control import StaggerSchedule, congestion
from campusepi.engine import optimize_schedule
from campusepi.scenario import load_scenario

cfg = load_scenario("campus.json", ["control.batch={}"])
schedule, results, (home, after_class) = optimize_schedule(cfg)

print("offsets (s)")
for name, offset in schedule.table():
    print(f"  {name:<24} {offset:>6g}")

ref = StaggerSchedule.reference()
print("\ncongestion        optimized   all-zero   reference")
print(f"  from homes      {results['departure'].congestion:9.3g} {results['departure'].baseline:10.3g}"
      f" {congestion(home, ref.home_offsets()):11.3g}")
print(f"  after class     {results['after_class'].congestion:9.3g} {results['after_class'].baseline:10.3g}"
      f" {congestion(after_class, ref.after_class):11.3g}")

"""A small Monte Carlo comparison of FARM, FAM and the naive test.

Run: python demos/04_simulation_study.py [reps]
"""

import sys

from farmtest.simulation import Scenario, run_experiment

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 20
print(f"{'errors':10s} {'method':7s} {'power':>6s} {'FDP':>6s} {'RAE':>6s}")
for error in ("normal", "t3"):
    sc = Scenario(model="M1", error=error, n=100, p=100, p1=25, seed=2024)
    report = run_experiment(sc, reps=reps, n_jobs=2)
    for method, agg in report.aggregates.items():
        rae = agg.get("median_rae")
        rae_text = "   n/a" if rae is None else f"{rae:6.3f}"
        print(f"{error:10s} {method:7s} {agg['mean_power']:6.3f} {agg['mean_fdp']:6.3f} "
              f"{rae_text}")

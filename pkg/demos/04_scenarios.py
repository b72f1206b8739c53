"""
Running the bundled scenarios
=============================

Runs the partition and churn scenario files that ship with the package and
prints a short summary of each report. The same runs are available from the
command line as ``pstore sim run partition``.
"""

import sys

from pstore.scenario import run_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else None

for script in ("partition", "churn"):
    report, sim = run_scenario(script, seed=seed)
    print(f"{script}: seed={report['seed']} passed={report['passed']} simulated {sim.now:.0f}s")
    for name, info in report["content"].items():
        print(f"  {name:8s} {info['status']:12s} {info['cid']}")
    for step in report["failed_steps"]:
        print("  failed:", step)

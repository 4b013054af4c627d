"""The identity suite: residuals, tolerances and convergence orders.

Pass --grid to add the periodic-grid backend (N = 16, 32, 64, under a minute
on one core). Each check is also run with a single flipped sign to show that
it can fail.
"""

import sys

from xcflow.verify import SuiteConfig, run_suite

grid = "--grid" in sys.argv
report = run_suite(SuiteConfig(grid=grid, samples=1000, mutation_selftest=True))
print(report.to_text())

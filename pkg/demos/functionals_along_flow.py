"""Integral functionals and their rate densities on left-invariant metrics.

The rate formulas hold for densities up to divergence terms. On a unimodular
group (Nil) those divergences vanish and the finite-difference rate of the J
density matches the formula. On the non-unimodular solvable group they do
not vanish: the formula's sign (J rate <= 0, eta = 1/2 rate >= 0) still holds
pointwise, yet the density itself can grow along the flow.
"""

import numpy as np

from xcflow.flow import FlowConfig, run_flow, temporal_derivative
from xcflow.functionals import J_density, J_rhs_density, eta_rhs_density, half_density_from_E
from xcflow.presets import build_preset

q = np.array([[1.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]])


def J_rates(geom, branch):
    fd = temporal_derivative(geom, lambda X: J_density(X) * X.sqrt_det, 1e-4, branch=branch,
                             order=4)
    return float(fd), float(J_rhs_density(geom) * geom.sqrt_det)


nil = build_preset("nil")[1].with_metric(q)
fd, formula = J_rates(nil, "negative")
print(f"nil (unimodular):   d/dt J dmu = {fd:+.10f}   formula = {formula:+.10f}")

sol = build_preset("hyperbolic_solvable:1,2")[1].with_metric(q)
fd, formula = J_rates(sol, "negative")
print(f"solvable (not unimodular): d/dt J dmu = {fd:+.6f}   formula = {formula:+.6f}")

print("eta = 1/2 density on the solvable state:", float(eta_rhs_density(sol, 0.5)),
      "= 1/4 |E - E'|^2 detP^(1/2):", float(half_density_from_E(sol)))

trace = run_flow(FlowConfig(branch="negative", t_end=1.0, dt_init=1e-2, adaptive=True,
                            sample_every=5), sol)
print(f"{'t':>7} {'volP':>12} {'J':>12} {'int detP':>12}")
for row in trace.rows()[::3]:
    print(f"{row['t']:7.3f} {row['volP']:12.6f} {row['J']:12.6f} {row['detP_integral']:12.6f}")

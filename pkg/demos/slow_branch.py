"""Slow acoustic branch of the linearized system as the bulk viscosity grows.

Prints, for each nu, the slowest decay rate over the low wavevectors with and
without polymer coupling, next to the closed-form acoustic root.
"""
from fenelimit import core, linear

ops = core.operators_for(2, 1.0, 6, 4)
xi_set = linear.default_xi_set(2, kmax=2)

print(f"{'nu':>8} {'coupled':>12} {'decoupled':>12} {'root |xi|=1':>12}  nu*rate")
for nu in (10.0, 100.0, 1000.0, 10000.0):
    p = core.validate_params(core.Parameters(grid_n=16).with_nu(nu))
    coupled = linear.slow_rate_sweep([p], xi_set, ops)[0]
    plain = linear.slow_rate_sweep([p], xi_set, ops, coupling=False)[0]
    slow, _ = linear.acoustic_roots(nu)
    print(f"{nu:8g} {coupled.rate:12.6e} {plain.rate:12.6e} {-slow.real:12.6e}  {coupled.rate * nu:.4f}")

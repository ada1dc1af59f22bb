"""One nonlinear run at nu = 100: energy decay and the weighted functionals."""
import numpy as np

from fenelimit import core, dynamics, energy

p = core.validate_params(core.Parameters(grid_n=32, dt=0.02, t_final=10.0).with_nu(100.0))
ops = core.operators_for(p.dim, p.k, p.rad_order, p.ang_order)
s0 = core.make_initial_data(p, eps=0.01, ops=ops)

trace = dynamics.simulate(p, s0, ops, stride=25)
for i in range(0, len(trace), 4):
    print(
        f"t={trace.t[i]:6.2f}  |eta|_m={trace['eta_m'][i]:.3e}  |Qu|_m={trace['Qu_m'][i]:.3e}"
        f"  |PM|_m-1={trace['PM_m1'][i]:.3e}  |psi|_m={trace['psi_m_L2'][i]:.3e}"
    )

f = energy.compute_functionals(trace)
print("functionals:", {k: float(np.round(v, 8)) for k, v in f._asdict().items()})
print("PM decay rate:", energy.fit_decay(trace.t, trace["PM_m1"], window=0.5))

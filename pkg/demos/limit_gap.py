"""Distance to the incompressible limit at t = 1 for a range of nu.

The error should fall like 1/nu when the initial data carry an O(nu^-1/2)
mismatch in the solenoidal momentum.
"""
import dataclasses

from fenelimit import harness

spec = harness.default_spec("limit-compare")
spec = dataclasses.replace(spec, nu_list=(50.0, 100.0, 200.0), probe_times=(0.5, 1.0))
report = harness.run_limit_compare(spec)
for m in report.summary["members"]:
    print(f"nu={m['nu']:6g}  err(1)={m['err_probe']['1.0']:.4e}  nu*err(1)={m['nu'] * m['err_probe']['1.0']:.4e}")
print("fitted slopes:", report.summary["slopes"])

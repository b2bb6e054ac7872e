"""Walkthrough: how equilibria and their limits depend on the starting spot.

A single agent on [0, 1] with exits at both ends walks to whichever exit is
nearer, so the limit measure jumps from delta_0 to delta_1 as the start
crosses 1/2: the limit map is upper semicontinuous but not continuous. The
sweep reproduces the case table, and a family approaching 1/2 from the left
stays inside the limit set of the midpoint game (the closed-graph probe).
"""
import os
import tempfile

from exitlab import EquilibriumConfig, ParticleMeasure, stability_sweep, runner
from exitlab.scenarios import build_cost, build_domain, build_kernel, load_scenario

root = tempfile.mkdtemp(prefix="exitlab_demo_")
sweep = runner.sweep("remark_5_13",
                     {"initial_measure.location": [0.1, 0.3, 0.45, 0.55, 0.7, 0.9]},
                     os.path.join(root, "sweep"))
print("limit measure per starting point:")
for member in sweep["members"]:
    a = member["params"]["initial_measure.location"]
    atoms = member["m_infinity"]
    print(f"  start {a}: limit atoms {atoms}")

cfg = load_scenario("remark_5_13")
domain = build_domain(cfg)
cost = build_cost(domain, cfg)
kernel = build_kernel(domain, cfg)
config = EquilibriumConfig(exploitability_tol=0.01)
base = ParticleMeasure.dirac(domain, 0.5)
family = [ParticleMeasure.dirac(domain, 0.5 - 1.0 / n) for n in (4, 8, 16)]
limit_set = [ParticleMeasure.dirac(domain, 0.0), ParticleMeasure.dirac(domain, 1.0)]
report, _ = stability_sweep(base, family, kernel, domain, cost, config,
                            base_limits=limit_set)
print("\nfamily a_n = 1/2 - 1/n:")
for member in report.members:
    print(f"  perturbation {member.perturbation:.4f}: "
          f"distance to the midpoint limit set {member.limit_distance:.2g}")
print(f"closed-graph probe: {report.closed_graph_probe}")
print(f"\nsweep artifacts under {root} (see stability_report.json)")

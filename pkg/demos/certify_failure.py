"""Certification rejects traces that do not meet the claimed rate.

The storage of a table1 trace decays at about 8 per second, well above the
certified 2.4. Claiming beta = 10 makes the envelope fail, and the report
names the first time the storage crossed it. A trace produced with other
gains is rejected too, because its recorded torques disagree with the law.
"""

import dataclasses

import numpy as np

from elnetsim import GainConfig, certify_trace, load_scenario, simulate
from elnetsim.scenario import build_loop, initial_state, shipped_scenarios

scenario = load_scenario(shipped_scenarios()["table1"])
loop = build_loop(scenario)
x0 = initial_state(scenario, loop)
trace = simulate(loop.rhs, x0, scenario.integrator, observe=loop.control)

honest = certify_trace(trace, loop)
print(honest.summary())

# 0.01 / beta must not be below the sample spacing, so 10 is the largest claim a 1e-3 grid supports
print(certify_trace(trace, loop, beta=10.0).summary())

# same initial state, stiffer damping gain; certified against the original loop
g = scenario.gains
stiff = GainConfig.build(loop.N, loop.n, loop.M_edges, Pi=g.Pi, K=30.0, Delta=g.Delta,
                         K_zeta=g.K_zeta, zeta_d=g.zeta_d)
other = build_loop(dataclasses.replace(scenario, gains=stiff))
foreign = simulate(other.rhs, x0, scenario.integrator, observe=other.control)
report = certify_trace(foreign, loop)
print(report.summary())
print(f"max recorded-torque mismatch {report.max_control_mismatch:.3g}")

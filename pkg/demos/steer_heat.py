"""Steer one noisy heat-equation path to a target profile and print the result.

Run with ``python3 demos/steer_heat.py``.
"""

import math

import numpy as np

from fbmsteer import ScenarioConfig, build_heat_scenario, phi_iterate

cfg = ScenarioConfig.default()
scenario = build_heat_scenario(cfg)
problem = scenario.problem
print(f"modes={cfg.n_modes} H={cfg.hurst.h} steps={cfg.grid.n_steps} seed={cfg.seed}")
print(f"sup |R(t)| = {problem.table.sup_norm:.4f}, largest damped 1/s of W = {problem.w_inverse.mw_estimate:.3f}")

conv = scenario.noise_convolution(replication=0)
result = phi_iterate(problem, conv)
print(f"outer iterations: {result.outer_iterations}, ratios: {np.round(result.ratios, 4).tolist()}")
print(f"terminal relative error: {result.relative_error:.2e}")

xi = np.linspace(0.0, math.pi, 9)
reached = scenario.spatial_readout(result.trajectory.terminal, xi)
wanted = scenario.spatial_readout(problem.target, xi)
print("xi        reached    target")
for a, b, c in zip(xi, reached, wanted):
    print(f"{a:6.3f}  {b:+.6f}  {c:+.6f}")

w = cfg.grid.trapezoid_weights()
energy = float(np.sum(w * result.control.values ** 2))
print(f"control energy int |u|^2 dt = {energy:.4f}")

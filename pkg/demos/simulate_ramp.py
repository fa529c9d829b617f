"""Ramp the wind farm of the single-DER feeder and watch the Q(U) loop.

Three slopes are simulated: well inside the certified region, at the
simulation threshold, and beyond it.  The decay ratio compares the
voltage swing in the second 5 s window after the ramp to the first.
"""

from qucircle import (
    Ramp,
    SimScenario,
    classify,
    find_sim_threshold,
    fixture_path,
    load_grid_file,
    max_slope_search,
    sensitivity,
    simulate,
    solve,
)

grid = load_grid_file(fixture_path("single_der.json"))
ramp = Ramp()
certified = max_slope_search(grid, sensitivity(grid, solve(grid)), "orig", m_cap=1e5).m_max
threshold = find_sim_threshold(grid, ramp=ramp, m_cap=1e5).slope
print(f"circle criterion: {certified:.0f} %/p.u., simulation threshold: {threshold:.0f} %/p.u.")

for m in (0.5 * certified, threshold, 1.2 * threshold):
    trace = simulate(SimScenario(grid, m, ramp))
    c = classify(trace, ramp.ramp_end)
    u = trace.voltages[:, 0]
    print(f"m = {m:7.0f}: {c.verdict:<22} decay ratio {c.decay_ratio:6.3f}, final U = {u[-1]:.4f} p.u.")

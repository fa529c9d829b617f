"""Certified Q(U) slope limits on the bundled feeders.

For each grid the voltage sensitivity at the DER nodes is taken from the
power flow, then the circle criterion is bisected for each of the three
DER representations.  Slopes are in % of rated power per p.u. voltage.
"""

from qucircle import REPRESENTATIONS, fixture_path, load_grid_file, max_slope_search, penetration_factor, sensitivity, solve

print(f"{'grid':<15}{'kW/km':>8}" + "".join(f"{r:>10}" for r in REPRESENTATIONS))
for name in ("single_der", "toy_feeder", "meshed_feeder"):
    grid = load_grid_file(fixture_path(f"{name}.json"))
    kq = sensitivity(grid, solve(grid))
    limits = [max_slope_search(grid, kq, rep, m_cap=1e5).m_max for rep in REPRESENTATIONS]
    print(f"{name:<15}{penetration_factor(grid):>8.0f}" + "".join(f"{m:>10.1f}" for m in limits))

print("\nThe TAR column is the most conservative: a slower closed loop loses phase earlier.")

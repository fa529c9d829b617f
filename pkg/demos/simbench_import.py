"""Import a SimBench-style CSV excerpt and certify it.

The tables use SimBench's semicolon format; line parameters are read
per km and the transformer resistance is derived from its copper losses.
"""

from qucircle import REPRESENTATIONS, fixture_path, import_simbench, max_slope_search, sensitivity, solve

folder = fixture_path("simbench_excerpt")
tables = [(folder / f"{t}.csv").read_text() for t in ("Node", "Line", "Transformer", "Load", "RES")]
grid = import_simbench(*tables)
sol = solve(grid)
print(f"{len(grid.nodes)} nodes, {len(grid.branches)} lines, {len(grid.ders)} DERs; "
      f"power flow converged in {sol.iterations} iterations")
for nid, u in zip(sol.node_ids, sol.vm):
    print(f"  {nid:<12} U = {u:.4f} p.u.")

kq = sensitivity(grid, sol)
print("K_Q [p.u./p.u.]:")
print(kq.entries.round(4))
for rep in REPRESENTATIONS:
    print(f"{rep:<8} m_max = {max_slope_search(grid, kq, rep, m_cap=1e5).m_max:.0f} %/p.u.")

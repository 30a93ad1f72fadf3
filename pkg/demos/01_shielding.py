"""Shielding by a thin lossy grid.

A source sits above the layer.  As the period delta shrinks the field that
leaks below the layer dies out, and the limit problem (zero Dirichlet data on
the interface) has nothing below it at all.

    python demos/01_shielding.py
"""
from cage_homog import (BandSource, DimensionMode, DomainSpec, PhysicalParams, VerticalGrading,
                        build_mesh, build_pattern, solve_delta_problem, solve_limit)

spec = DomainSpec((1.0,), 1.0, DimensionMode.REDUCED_2D)
pattern = build_pattern("CROSS", 0.5, 8, in_plane_dims=1)
params = PhysicalParams(omega=1.0, eps1=1.0, eps2=1.0, eps3=1.0, source=BandSource(0.5, 0.75, 1.0))
grading = VerticalGrading(1.3, 1 / 32, 2.0, 1, (0.5, 0.75))

print(f"{'delta':>8} {'nodes':>7} {'||u||_L2(below)':>16} {'||u||_L2(grid)/delta':>21}")
for n in (4, 8, 16, 32):
    mesh = build_mesh(spec, n, 8, pattern, grading)
    rep = solve_delta_problem(mesh, params)
    print(f"{mesh.delta:8.5f} {mesh.grid.n_nodes:7d} {rep.norms['l2_minus']:16.4e} "
          f"{rep.norms['l2_grid'] / mesh.delta:21.4e}")

mesh = build_mesh(spec, 32, 8, pattern, grading)
lim = solve_limit(mesh, params)
print(f"limit problem: ||u||_L2(below) = {lim.norms['l2_minus']:.1e}, ||u||_H1 = {lim.norms['h1']:.4f}")

"""Solve a linear Solov'ev equilibrium on an ITER-like cross-section.

The Solov'ev problem has an exact polynomial flux function, which makes it
the standard smoke test: we mesh the plasma boundary (the zero level set of
the exact solution), solve the first-order system with the minimal-residual
scheme, and compare the discrete flux and its scaled gradient against the
exact fields.  The result is written to a legacy VTK file for inspection
in ParaView.
"""

import numpy as np

from gsdpg import GlobalState, build_builtin_mesh, get_problem, solve_nonlinear
from gsdpg.io import vertex_averaged_fields, write_vtk
from gsdpg.problems import linf_error

problem = get_problem("solovev-iter")
mesh = build_builtin_mesh(problem.boundary, resolution=(16, 4))
print(f"mesh: {mesh.n_triangles} triangles, {mesh.n_vertices} vertices")

state = GlobalState(mesh, problem, k=2)
result = solve_nonlinear(state)
print(f"converged: {result.converged} in {result.iterations} iteration(s)")

total, indicators = state.energy_residual(result.U)
print(f"energy residual: {total:.3e} "
      f"(largest element contribution {indicators.max():.3e})")

err_psi = linf_error(lambda t, ref: state.eval_psi(result.U, t, ref),
                     problem.exact_psi, mesh, k=2)
err_q = linf_error(lambda t, ref: state.eval_q(result.U, t, ref),
                   problem.exact_q, mesh, k=2)
print(f"L-inf error: psi {err_psi:.3e}, q {err_q:.3e}")

fields = vertex_averaged_fields(state, result.U)
fields["psi_exact"] = np.array(
    [problem.exact_psi(r, z) for r, z in mesh.vertices])
write_vtk("equilibrium.vtk", mesh, point_data=fields,
          cell_data={"energy_indicator": indicators})
print("wrote equilibrium.vtk")

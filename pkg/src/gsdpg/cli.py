"""Command-line driver: solve, convergence study and adaptive refinement."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io as gio
from .amr import AmrParams, MarkingParams, amr_loop
from .mesh import MeshError, MshParseError, build_builtin_mesh, read_msh, uniform_refine
from .problems import get_problem, linf_error
from .solvers import AndersonParams, solve_nonlinear
from .system import GlobalState


def _load_config(path: str | None, overrides: list[str]) -> dict:
    text = ""
    if path:
        with open(path) as fh:
            text = fh.read()
    for ov in overrides:
        text += "\n" + ov.replace(":", "=", 1) if "=" not in ov else "\n" + ov
    return gio.parse_config(text)


def _build_mesh(cfg, problem):
    if cfg["mesh_file"]:
        with open(cfg["mesh_file"]) as fh:
            return read_msh(fh.read())
    res = cfg["resolution"] or problem.default_resolution
    return build_builtin_mesh(problem.boundary, res)


def _anderson(cfg) -> AndersonParams:
    return AndersonParams(m=cfg["anderson_m"], rtol=cfg["rtol"], atol=cfg["atol"],
                          stol=cfg["stol"], max_iters=cfg["max_nonlinear_iters"],
                          line_search=cfg["line_search"])


def _mesh_h(mesh) -> float:
    return float(mesh.edge_lengths.max())


def cmd_solve(cfg) -> int:
    problem = get_problem(cfg["problem"])
    mesh = _build_mesh(cfg, problem)
    state = GlobalState(mesh, problem, cfg["k"], s=cfg["s"], norm=cfg["norm"])
    res = solve_nonlinear(state, _anderson(cfg), inner=cfg["inner_solver"])
    total, ind = state.energy_residual(res.U)
    print(f"problem={problem.name} k={cfg['k']} elements={mesh.n_triangles}")
    print(f"nonlinear iterations: {res.iterations} ({res.message})")
    print(f"energy residual: {total:.6e}")
    if problem.exact_psi is not None:
        e_psi = linf_error(lambda t, rp: state.eval_psi(res.U, t, rp),
                           problem.exact_psi, mesh, cfg["k"], cfg["s"])
        print(f"max error psi: {e_psi:.6e}")
    out = cfg["output_prefix"] + "_solution.vtk"
    gio.write_vtk(out, mesh, point_data=gio.vertex_averaged_fields(state, res.U),
                  cell_data={"energy_residual": ind})
    print(f"wrote {out}")
    return 0 if res.converged else 2


def cmd_converge(cfg) -> int:
    problem = get_problem(cfg["problem"])
    if problem.exact_psi is None:
        print(f"problem {problem.name!r} has no exact solution", file=sys.stderr)
        return 2
    mesh = _build_mesh(cfg, problem)
    rows = []
    for level in range(cfg["levels"]):
        state = GlobalState(mesh, problem, cfg["k"], s=cfg["s"], norm=cfg["norm"])
        res = solve_nonlinear(state, _anderson(cfg), inner=cfg["inner_solver"])
        if not res.converged:
            print(f"level {level}: nonlinear solve failed ({res.message})",
                  file=sys.stderr)
            return 2
        e_psi = linf_error(lambda t, rp: state.eval_psi(res.U, t, rp),
                           problem.exact_psi, mesh, cfg["k"], cfg["s"])
        e_q = linf_error(lambda t, rp: state.eval_q(res.U, t, rp),
                         problem.exact_q, mesh, cfg["k"], cfg["s"])
        rows.append({"level": level, "h": _mesh_h(mesh),
                     "n_elements": mesh.n_triangles,
                     "err_psi": e_psi, "err_q": e_q})
        print(f"level {level}: T={mesh.n_triangles} err_psi={e_psi:.3e} err_q={e_q:.3e}")
        if level < cfg["levels"] - 1:
            mesh = uniform_refine(mesh)
    out = cfg["output_prefix"] + "_convergence.csv"
    with open(out, "w", newline="\n") as fh:
        fh.write(gio.convergence_csv(rows))
    print(f"wrote {out}")
    return 0


def cmd_amr(cfg) -> int:
    problem = get_problem(cfg["problem"])
    mesh = _build_mesh(cfg, problem)
    params = AmrParams(
        marking=MarkingParams(theta_max=cfg["theta_max"],
                              theta_total=cfg["theta_total"],
                              atol=cfg["amr_atol"]),
        max_iters=cfg["max_amr_iters"], max_elements=cfg["max_elements"])
    state, U, report = amr_loop(problem, mesh, cfg["k"], s=cfg["s"],
                                params=params, anderson=_anderson(cfg),
                                norm=cfg["norm"])
    for st in report.steps:
        print(f"iter {st.iteration}: T={st.n_elements} E={st.energy_residual:.6e} "
              f"marked={st.n_marked} nonlinear={st.nonlinear_iters}")
    print(report.message)
    hist = cfg["output_prefix"] + "_amr_history.csv"
    with open(hist, "w", newline="\n") as fh:
        fh.write(gio.amr_history_csv(report.steps))
    total, ind = state.energy_residual(U)
    out = cfg["output_prefix"] + "_solution.vtk"
    gio.write_vtk(out, state.mesh,
                  point_data=gio.vertex_averaged_fields(state, U),
                  cell_data={"energy_residual": ind})
    print(f"wrote {hist} and {out}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="gsdpg",
        description="Fixed-boundary Grad-Shafranov solver (ultraweak "
                    "minimal-residual finite elements)")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", cmd_solve), ("converge", cmd_converge),
                     ("amr", cmd_amr)):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="config file (key = value lines)")
        p.add_argument("-o", "--option", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config option")
        p.set_defaults(fn=fn)
    args = ap.parse_args(argv)
    try:
        cfg = _load_config(args.config, args.option)
        return args.fn(cfg)
    except (gio.ConfigError, MshParseError, MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

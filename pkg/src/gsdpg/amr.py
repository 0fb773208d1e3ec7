"""Residual-driven adaptive mesh refinement.

The built-in energy residual of the minimal-residual scheme serves as the
error estimator: elements are marked by a three-way threshold (absolute
floor, fraction of the largest indicator, fraction of the mean-scaled total),
bisected with conforming closure, and the previous solution is transferred
to the new mesh as the next initial iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, bisect_conforming
from .solvers import AndersonParams, solve_nonlinear
from .spaces import _REF_VERTS
from .system import GlobalState


@dataclass
class MarkingParams:
    theta_max: float = 0.025
    theta_total: float = 0.025
    atol: float = 1e-12


@dataclass
class AmrParams:
    marking: MarkingParams = field(default_factory=MarkingParams)
    max_iters: int = 10
    max_elements: int = 200_000


@dataclass
class AmrStep:
    iteration: int
    n_elements: int
    energy_residual: float
    n_marked: int
    nonlinear_iters: int


@dataclass
class AmrReport:
    steps: list = field(default_factory=list)
    converged: bool = False
    message: str = ""


def estimate(state: GlobalState, U: np.ndarray):
    """(E_total, per-element indicators E_K) from the energy residual."""
    return state.energy_residual(U)


def mark(indicators: np.ndarray, total: float, params: MarkingParams | None = None):
    """Indices of elements exceeding all three marking thresholds."""
    p = params or MarkingParams()
    ind = np.asarray(indicators, dtype=float)
    n = len(ind)
    if n == 0:
        return np.array([], dtype=int)
    cut = np.maximum.reduce([
        np.full(n, p.atol),
        np.full(n, p.theta_max * ind.max()),
        np.full(n, p.theta_total * total / np.sqrt(n)),
    ])
    return np.nonzero(ind > cut)[0]


def transfer_solution(old_state: GlobalState, U_old: np.ndarray,
                      new_state: GlobalState) -> np.ndarray:
    """Restrict a solution to a refined mesh as an initial iterate.

    Interior fields are L2-projected element by element onto each child
    (exact for nested polynomial restriction); traces are re-interpolated
    from the transferred interior fields; boundary values come from the
    Dirichlet datum.  Requires new_state.mesh.parent_elements to point into
    old_state.mesh.
    """
    new_mesh: Mesh = new_state.mesh
    if new_mesh.parent_elements is None:
        raise ValueError("target mesh does not record parent elements")
    if new_mesh.parent_elements.max() >= old_state.mesh.n_triangles:
        raise ValueError("parent elements do not reference the source mesh")
    if old_state.trial.k != new_state.trial.k:
        raise ValueError("solution transfer requires matching polynomial degree")

    tr_new = new_state.trial
    rule = new_state.cache.vol_rule
    vals = new_state.cache.uv  # modal trial values at volume quadrature points
    # the modal basis is orthonormal on the reference triangle, so the
    # projection is a plain weighted moment; the affine scaling cancels
    U_new = np.zeros(new_state.n_total)
    for t in range(new_mesh.n_triangles):
        parent = int(new_mesh.parent_elements[t])
        phys = new_mesh.map_to_physical(t, rule.points)
        ref_old = old_state.mesh.map_to_reference(parent, phys)
        psi_old = old_state.eval_psi(U_old, parent, ref_old)
        q_old = old_state.eval_q(U_old, parent, ref_old)
        w = rule.weights
        U_new[tr_new.psi_dofs(t)] = (vals * w[:, None]).T @ psi_old
        qc = (vals * w[:, None]).T @ q_old
        U_new[tr_new.q_dofs(t)] = qc.T.ravel()

    _traces_from_fields(new_state, U_new)
    return new_state.apply_boundary(U_new)


def _traces_from_fields(state: GlobalState, U: np.ndarray) -> None:
    """Fill qhat_n and psihat by sampling the interior fields on edges."""
    mesh = state.mesh
    tr = state.trial
    tq = tr.qhat_basis.nodes
    tp = tr.psihat_basis.nodes
    for e in range(mesh.n_edges):
        t0 = int(mesh.edge_tris[e, 0])
        lo, hi = mesh.edges[e]
        tv = mesh.triangles[t0]
        l_lo = int(np.nonzero(tv == lo)[0][0])
        l_hi = int(np.nonzero(tv == hi)[0][0])
        a, d = _REF_VERTS[l_lo], _REF_VERTS[l_hi] - _REF_VERTS[l_lo]
        n_glob = mesh.edge_normals[e]
        refq = a + tq[:, None] * d
        refp = a + tp[:, None] * d
        qv = state.eval_q(U, t0, refq)
        U[tr.qhat_edge_dofs(e)] = qv @ n_glob
        U[tr.psihat_edge_dofs(e)] = state.eval_psi(U, t0, refp)


def amr_loop(problem, mesh: Mesh, k: int, s: int = 2,
             params: AmrParams | None = None,
             anderson: AndersonParams | None = None,
             norm: str = "standard"):
    """Solve / estimate / mark / refine until nothing is marked or a budget
    is hit.  Returns (final_state, final_U, AmrReport)."""
    p = params or AmrParams()
    report = AmrReport()
    state = GlobalState(mesh, problem, k, s=s, norm=norm)
    U0 = None
    U = None
    for it in range(p.max_iters):
        res = solve_nonlinear(state, anderson, U0=U0)
        U = res.U
        solved_state = state
        total, ind = estimate(state, U)
        marked = mark(ind, total, p.marking)
        report.steps.append(AmrStep(it, state.mesh.n_triangles, total,
                                    len(marked), res.iterations))
        if len(marked) == 0:
            report.converged = True
            report.message = "no elements above marking thresholds"
            return state, U, report
        if state.mesh.n_triangles >= p.max_elements:
            report.message = "element budget exhausted"
            return state, U, report
        new_mesh = bisect_conforming(state.mesh, marked)
        new_state = GlobalState(new_mesh, problem, k, s=s, norm=norm)
        U0 = transfer_solution(state, U, new_state)
        state = new_state
    report.message = "max AMR iterations reached"
    return solved_state, U, report

import numpy as np
import pytest

from gsdpg.amr import (
    AmrParams,
    MarkingParams,
    amr_loop,
    estimate,
    mark,
    transfer_solution,
)
from gsdpg.mesh import bisect_conforming, build_builtin_mesh, rectangle_curve, uniform_refine
from gsdpg.problems import get_problem
from gsdpg.solvers import AndersonParams, solve_nonlinear
from gsdpg.system import GlobalState


class TestMarking:
    def test_hand_traced_thresholds(self):
        # indicators: one dominant, one moderate, one tiny, one below atol
        ind = np.array([1.0, 0.1, 1e-3, 1e-14])
        total = np.sqrt(np.sum(ind**2))
        p = MarkingParams(theta_max=0.025, theta_total=0.025, atol=1e-12)
        marked = mark(ind, total, p)
        # cutoffs: atol=1e-12, 0.025*1.0=0.025, 0.025*total/sqrt(4)~0.0126
        # -> only 1.0 and 0.1 exceed all three
        assert np.array_equal(marked, [0, 1])

    def test_max_threshold_alone(self):
        ind = np.array([1.0, 0.03, 0.02])
        marked = mark(ind, np.sqrt(np.sum(ind**2)),
                      MarkingParams(theta_max=0.025, theta_total=0.0, atol=0.0))
        assert np.array_equal(marked, [0, 1])

    def test_absolute_floor_suppresses_everything(self):
        ind = np.array([1e-13, 5e-14])
        marked = mark(ind, np.sqrt(np.sum(ind**2)), MarkingParams(atol=1e-12))
        assert len(marked) == 0

    def test_empty_input(self):
        assert len(mark(np.array([]), 0.0)) == 0


class TestEstimate:
    def test_matches_energy_residual(self):
        prob = get_problem("rect-amr")
        mesh = build_builtin_mesh(prob.boundary, (3, 3))
        st = GlobalState(mesh, prob, k=1)
        U = st.apply_boundary(np.zeros(st.n_total))
        total, ind = estimate(st, U)
        t2, i2 = st.energy_residual(U)
        assert total == t2
        assert np.array_equal(ind, i2)


class TestTransfer:
    def poly_vector(self, st):
        """Trial vector holding an exactly representable polynomial state."""
        res = solve_nonlinear(st)
        return res.U

    def test_solution_transfer_preserves_polynomials(self):
        prob = get_problem("solovev-iter")
        mesh = build_builtin_mesh(prob.boundary, (4, 2))
        st = GlobalState(mesh, prob, k=1)
        U = self.poly_vector(st)
        fine = uniform_refine(mesh)
        st_f = GlobalState(fine, prob, k=1)
        U_f = transfer_solution(st, U, st_f)
        ref = np.array([[1 / 3, 1 / 3], [0.1, 0.2], [0.6, 0.3]])
        for t in range(fine.n_triangles):
            parent = int(fine.parent_elements[t])
            phys = fine.map_to_physical(t, ref)
            ref_c = mesh.map_to_reference(parent, phys)
            got = st_f.eval_psi(U_f, t, ref)
            want = st.eval_psi(U, parent, ref_c)
            assert np.abs(got - want).max() < 1e-11
            gq = st_f.eval_q(U_f, t, ref)
            wq = st.eval_q(U, parent, ref_c)
            assert np.abs(gq - wq).max() < 1e-11

    def test_transfer_after_bisection(self):
        prob = get_problem("rect-amr")
        mesh = build_builtin_mesh(prob.boundary, (3, 3))
        st = GlobalState(mesh, prob, k=1)
        U = st.apply_boundary(0.01 * np.ones(st.n_total))
        fine = bisect_conforming(mesh, [0, 4])
        st_f = GlobalState(fine, prob, k=1)
        U_f = transfer_solution(st, U, st_f)
        assert np.all(np.isfinite(U_f))
        # boundary data is re-imposed exactly
        assert np.abs(U_f[st_f.bdata.dofs] - st_f.bdata.values).max() == 0.0

    def test_degree_mismatch_rejected(self):
        prob = get_problem("rect-amr")
        mesh = build_builtin_mesh(prob.boundary, (2, 2))
        st1 = GlobalState(mesh, prob, k=1)
        fine = uniform_refine(mesh)
        st2 = GlobalState(fine, prob, k=2)
        with pytest.raises(ValueError, match="degree"):
            transfer_solution(st1, np.zeros(st1.n_total), st2)

    def test_missing_parents_rejected(self):
        prob = get_problem("rect-amr")
        mesh = build_builtin_mesh(prob.boundary, (2, 2))
        st1 = GlobalState(mesh, prob, k=1)
        st2 = GlobalState(build_builtin_mesh(prob.boundary, (3, 3)), prob, k=1)
        with pytest.raises(ValueError, match="parent"):
            transfer_solution(st1, np.zeros(st1.n_total), st2)


class TestAmrLoop:
    def test_estimator_decreases_on_rect_problem(self):
        prob = get_problem("rect-amr")
        mesh = build_builtin_mesh(prob.boundary, (6, 6))
        params = AmrParams(max_iters=4, max_elements=5000)
        state, U, report = amr_loop(prob, mesh, k=1, params=params,
                                    anderson=AndersonParams(rtol=1e-8))
        E = [s.energy_residual for s in report.steps]
        assert len(E) >= 3
        assert all(E[i + 1] < E[i] for i in range(len(E) - 1))
        sizes = [s.n_elements for s in report.steps]
        assert all(sizes[i + 1] > sizes[i] for i in range(len(sizes) - 1))

    def test_budget_stops_loop(self):
        prob = get_problem("rect-amr")
        mesh = build_builtin_mesh(prob.boundary, (4, 4))
        params = AmrParams(max_iters=10, max_elements=40)
        _, _, report = amr_loop(prob, mesh, k=1, params=params)
        assert report.message == "element budget exhausted"

import numpy as np
import pytest

from gsdpg.assembly import (
    ADJOINT_GRAPH,
    STANDARD,
    ElementCache,
    SourceEvaluationError,
    assemble_element_B,
    assemble_element_source,
)
from gsdpg.basis import triangle_rule
from gsdpg.mesh import Mesh, build_builtin_mesh, rectangle_curve
from gsdpg.problems import solovev_problem
from gsdpg.spaces import TestSpace, TrialSpace


def small_mesh():
    return build_builtin_mesh(rectangle_curve(0.5, 1.5, 0.0, 1.0), (2, 2))


def make_cache(mesh, k=2, s=2, norm=STANDARD):
    trial = TrialSpace(mesh, k)
    test = TestSpace(mesh, k, s)
    return ElementCache(mesh, trial, test, norm=norm), trial, test


def project_on_element(mesh, basis, t, f):
    """Reference-orthonormal projection of a (polynomial) field onto P^k."""
    rule = triangle_rule(2 * basis.order + 4)
    vals, _ = basis.eval(rule.points)
    phys = mesh.map_to_physical(t, rule.points)
    fv = np.array([f(p[0], p[1]) for p in phys])
    return (vals * rule.weights[:, None]).T @ fv


def interpolate_element_vector(cache, trial, t, psi, q):
    """Local trial vector whose fields and traces sample (psi, q) exactly."""
    mesh = cache.mesh
    nk = trial.nk
    u = np.zeros(trial.n_local())
    u[0:nk] = project_on_element(mesh, trial.q_basis, t, lambda r, z: q(r, z)[0])
    u[nk:2 * nk] = project_on_element(mesh, trial.q_basis, t, lambda r, z: q(r, z)[1])
    u[2 * nk:3 * nk] = project_on_element(mesh, trial.psi_basis, t, psi)
    kq, kp = trial.k + 1, trial.k + 2
    for le in range(3):
        e = mesh.tri_edges[t, le]
        lo, hi = mesh.edges[e]
        n_glob = mesh.edge_normals[e]
        a, b = mesh.vertices[lo], mesh.vertices[hi]
        tq = trial.qhat_basis.nodes[:, None]
        tp = trial.psihat_basis.nodes[:, None]
        pq = a + tq * (b - a)
        pp = a + tp * (b - a)
        u[3 * nk + le * kq: 3 * nk + (le + 1) * kq] = [
            np.dot(q(p[0], p[1]), n_glob) for p in pq]
        off = 3 * nk + 3 * kq
        u[off + le * kp: off + (le + 1) * kp] = [psi(p[0], p[1]) for p in pp]
    return u


class TestElementMatrix:
    @pytest.mark.parametrize("t", [0, 3, 5])
    def test_first_order_system_identity(self, t):
        """With exact polynomial fields and traces, B_K u equals the moments
        of (r*q + grad psi) against phi and of div q against tau."""
        mesh = small_mesh()
        cache, trial, test = make_cache(mesh, k=2, s=2)

        def psi(r, z):
            return 0.3 * r * r - 0.2 * r * z + z * z - 0.1

        def q(r, z):
            return np.array([0.5 * r + z * z, r * z - 0.25 * z])

        u = interpolate_element_vector(cache, trial, t, psi, q)
        got = cache.B[t] @ u

        rule = triangle_rule(2 * test.order + 6)
        tv, tg_ref = test.basis.eval(rule.points)
        _, inv_T, det = mesh.geometry
        g = np.einsum("ab,qib->qia", inv_T[t], tg_ref)
        phys = mesh.map_to_physical(t, rule.points)
        w = rule.weights * det[t]
        r, z = phys[:, 0], phys[:, 1]
        # grad psi and div q of the chosen polynomials, by hand
        gp = np.column_stack([0.6 * r - 0.2 * z, -0.2 * r + 2 * z])
        qv = np.column_stack([0.5 * r + z * z, r * z - 0.25 * z])
        divq = 0.5 + r - 0.25
        mis_r = r * qv[:, 0] + gp[:, 0]
        mis_z = r * qv[:, 1] + gp[:, 1]
        n = test.nks
        want = np.concatenate([
            tv.T @ (w * mis_r), tv.T @ (w * mis_z), tv.T @ (w * divq)])
        assert np.abs(got - want).max() < 1e-11

    def test_wrapper_returns_cached_matrix(self):
        cache, _, _ = make_cache(small_mesh())
        assert assemble_element_B(cache, 0) is cache.B[0]

    def test_unknown_norm_rejected(self):
        mesh = small_mesh()
        trial = TrialSpace(mesh, 1)
        test = TestSpace(mesh, 1, 2)
        with pytest.raises(ValueError, match="norm"):
            ElementCache(mesh, trial, test, norm="energy")


class TestGram:
    def brute_force_standard_gram(self, mesh, test, t):
        rule = triangle_rule(2 * test.order + 4)
        tv, tg_ref = test.basis.eval(rule.points)
        _, inv_T, det = mesh.geometry
        g = np.einsum("ab,qib->qia", inv_T[t], tg_ref)
        w = rule.weights * det[t]
        n = test.nks
        G = np.zeros((3 * n, 3 * n))
        sl = [slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)]
        # ||phi||^2 + ||div phi||^2 + ||tau||^2 + ||grad tau||^2
        M = (tv * w[:, None]).T @ tv
        G[sl[0], sl[0]] += M
        G[sl[1], sl[1]] += M
        G[sl[2], sl[2]] += M
        for a in range(2):
            Ka = (g[:, :, a] * w[:, None]).T @ g[:, :, a]
            G[sl[2], sl[2]] += Ka
        for a in range(2):
            for b in range(2):
                Kab = (g[:, :, a] * w[:, None]).T @ g[:, :, b]
                G[sl[a], sl[b]] += Kab
        return G

    def test_standard_gram_matches_brute_force(self):
        mesh = small_mesh()
        cache, _, test = make_cache(mesh, k=1, s=2)
        for t in [0, 2]:
            G = cache.gram_dense(t)
            want = self.brute_force_standard_gram(mesh, test, t)
            scale = np.abs(want).max()
            assert np.abs(G - want).max() < 1e-12 * scale

    def test_gram_is_spd(self):
        cache, _, _ = make_cache(small_mesh(), k=1, s=2)
        for norm in (STANDARD, ADJOINT_GRAPH):
            cache2, _, _ = make_cache(small_mesh(), k=1, s=2, norm=norm)
            for t in range(cache2.mesh.n_triangles):
                w = np.linalg.eigvalsh(cache2.gram_dense(t))
                assert w.min() > 0

    def test_adjoint_graph_differs_and_couples_blocks(self):
        c_std, _, test = make_cache(small_mesh(), k=1, s=2, norm=STANDARD)
        c_ag, _, _ = make_cache(small_mesh(), k=1, s=2, norm=ADJOINT_GRAPH)
        G1, G2 = c_std.gram_dense(0), c_ag.gram_dense(0)
        assert np.abs(G1 - G2).max() > 1e-3
        n = test.nks
        # the graph norm couples the vector part with tau
        assert np.abs(G2[:n, 2 * n:]).max() > 1e-8
        assert np.abs(G1[:n, 2 * n:]).max() < 1e-13

    def test_gram_solve_inverts(self):
        cache, _, _ = make_cache(small_mesh(), k=1, s=2)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(cache.gram_dense(0).shape[0])
        y = cache.gram_solve(0, cache.gram_dense(0) @ x)
        assert np.abs(y - x).max() < 1e-9


class TestSourceMoments:
    def test_linear_source_against_quadrature(self):
        prob = solovev_problem("iter")
        mesh = build_builtin_mesh(prob.boundary, (6, 2))
        cache, trial, test = make_cache(mesh, k=2, s=2)
        t = 4
        _, _, L_K = assemble_element_source(cache, t, np.zeros(trial.nk), prob)
        rule = triangle_rule(2 * test.order + 6)
        tv, _ = test.basis.eval(rule.points)
        phys = mesh.map_to_physical(t, rule.points)
        _, _, det = mesh.geometry
        w = rule.weights * det[t]
        want = tv.T @ (w * (-phys[:, 0] ** 2) / phys[:, 0])
        assert np.abs(L_K - want).max() < 1e-12

    def test_derivative_moment_consistent_with_value_moment(self):
        from gsdpg.problems import manufactured_problem
        prob = manufactured_problem()
        mesh = build_builtin_mesh(prob.boundary, (6, 2))
        cache, trial, _ = make_cache(mesh, k=2, s=2)
        rng = np.random.default_rng(5)
        c = 0.1 * rng.standard_normal(trial.nk)
        dc = rng.standard_normal(trial.nk)
        eps = 1e-6
        Np, _, _ = cache.source(3, c + eps * dc, prob)
        Nm, _, _ = cache.source(3, c - eps * dc, prob)
        _, D_K, _ = cache.source(3, c, prob)
        fd = (Np - Nm) / (2 * eps)
        assert np.abs(fd - D_K @ dc).max() < 1e-7

    def test_nonfinite_source_reports_element_and_point(self):
        prob = solovev_problem("iter")
        prob.f_nl = lambda r, z, p: np.where(r > 0, np.inf, 0.0)
        mesh = build_builtin_mesh(prob.boundary, (6, 2))
        cache, trial, _ = make_cache(mesh, k=1, s=2)
        with pytest.raises(SourceEvaluationError, match=r"F_N non-finite on element 2"):
            cache.source(2, np.zeros(trial.nk), prob)

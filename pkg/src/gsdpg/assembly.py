"""Element-level assembly of the ultraweak bilinear blocks and Gram matrices.

Each element K contributes a dense rectangular matrix B_K (enriched test
rows x local trial columns), a symmetric positive definite Gram matrix G_K
of the broken test inner product (inverted once per element via Cholesky),
and source moments N_K, D_K, L_K for the nonlinear right-hand side.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky

from .basis import (
    default_edge_degree,
    default_volume_degree,
    edge_rule,
    triangle_rule,
)
from .mesh import Mesh
from .spaces import _REF_VERTS, TestSpace, TrialSpace

STANDARD = "standard"
ADJOINT_GRAPH = "adjoint-graph"


class SourceEvaluationError(Exception):
    pass


class ElementCache:
    """Per-mesh cache of element matrices and quadrature tables.

    B_K and the Gram Cholesky factors are built once; only the source
    moments (which depend on the current psi iterate) are recomputed per
    nonlinear iteration.
    """

    def __init__(self, mesh: Mesh, trial: TrialSpace, test: TestSpace,
                 norm: str = STANDARD):
        if norm not in (STANDARD, ADJOINT_GRAPH):
            raise ValueError(f"unknown test norm kind {norm!r}")
        self.mesh = mesh
        self.trial = trial
        self.test = test
        self.norm = norm

        k, s = trial.k, test.s
        self.vol_rule = triangle_rule(default_volume_degree(k, s))
        self.edg_rule = edge_rule(default_edge_degree(k, s))

        # reference tables shared by all elements
        self.tv, self.tg_ref = test.basis.eval(self.vol_rule.points)
        self.uv, _ = trial.q_basis.eval(self.vol_rule.points)
        t_e = self.edg_rule.points[:, 0]
        self.qhat_vals, _ = trial.qhat_basis.eval(t_e)
        self.psihat_vals, _ = trial.psihat_basis.eval(t_e)
        self._edge_test_tables: dict[tuple[int, int], np.ndarray] = {}

        n = test.nks
        self.n = n
        self.nk = trial.nk
        self.n_cols = trial.n_local()

        jac, inv_T, det = mesh.geometry
        self.det = det
        self.B = []
        self.chol = []
        self.w_phys = []
        self.phys_pts = []
        self.cols = [trial.element_dofs(t) for t in range(mesh.n_triangles)]
        for t in range(mesh.n_triangles):
            B_K, G_K, w, pts = self._build_element(t, inv_T[t], det[t])
            self.B.append(B_K)
            try:
                self.chol.append(cho_factor(G_K, lower=True))
            except np.linalg.LinAlgError as exc:
                raise RuntimeError(f"Gram Cholesky failed on element {t}") from exc
            self.w_phys.append(w)
            self.phys_pts.append(pts)

    # -- element matrices ----------------------------------------------

    def _edge_test(self, l_lo: int, l_hi: int) -> tuple[np.ndarray, np.ndarray]:
        key = (l_lo, l_hi)
        tab = self._edge_test_tables.get(key)
        if tab is None:
            t = self.edg_rule.points[:, 0][:, None]
            ref = _REF_VERTS[l_lo] + t * (_REF_VERTS[l_hi] - _REF_VERTS[l_lo])
            vals, _ = self.test.basis.eval(ref)
            tab = vals
            self._edge_test_tables[key] = tab
        return tab

    def _build_element(self, t: int, inv_T: np.ndarray, det: float):
        n, nk = self.n, self.nk
        mesh, trial = self.mesh, self.trial
        w = self.vol_rule.weights * det
        pts = mesh.map_to_physical(t, self.vol_rule.points)
        r = pts[:, 0]

        # physical test gradients: g_phys[q, i, a] = inv_T[a, b] g_ref[q, i, b]
        g = np.einsum("ab,qib->qia", inv_T, self.tg_ref)
        gx, gy = g[:, :, 0], g[:, :, 1]
        tv = self.tv

        B = np.zeros((3 * n, self.n_cols))
        sl_phir = slice(0, n)
        sl_phiz = slice(n, 2 * n)
        sl_tau = slice(2 * n, 3 * n)
        c_qr = slice(0, nk)
        c_qz = slice(nk, 2 * nk)
        c_psi = slice(2 * nk, 3 * nk)

        wr = w * r
        # (r q, phi): componentwise weighted mass
        Mr = (tv * wr[:, None]).T @ self.uv
        B[sl_phir, c_qr] = Mr
        B[sl_phiz, c_qz] = Mr
        # -(psi, div phi)
        B[sl_phir, c_psi] = -(gx * w[:, None]).T @ self.uv
        B[sl_phiz, c_psi] = -(gy * w[:, None]).T @ self.uv
        # -(q, grad tau)
        B[sl_tau, c_qr] = -(gx * w[:, None]).T @ self.uv
        B[sl_tau, c_qz] = -(gy * w[:, None]).T @ self.uv

        # skeleton terms
        kq = trial.k + 1
        kp = trial.k + 2
        for le in range(3):
            sign, ref0, refd, length = trial.edge_param_geometry(t, le)
            e = mesh.tri_edges[t, le]
            n_glob = mesh.edge_normals[e]
            n_out = sign * n_glob
            tvals = self._edge_test(*self._edge_locals(t, e))
            ds = self.edg_rule.weights * length
            c_qh = 3 * nk + le * kq
            c_ph = 3 * nk + 3 * kq + le * kp
            # <qhat_n, tau> with the orientation sign
            B[sl_tau, c_qh:c_qh + kq] += sign * (tvals * ds[:, None]).T @ self.qhat_vals
            # <psihat, n . phi> with the element outward normal
            Tp = (tvals * ds[:, None]).T @ self.psihat_vals
            B[sl_phir, c_ph:c_ph + kp] += n_out[0] * Tp
            B[sl_phiz, c_ph:c_ph + kp] += n_out[1] * Tp

        G = self._gram(t, tv, gx, gy, w, r)
        return B, G, w, pts

    def _edge_locals(self, t: int, e: int) -> tuple[int, int]:
        lo, hi = self.mesh.edges[e]
        tv = self.mesh.triangles[t]
        return int(np.nonzero(tv == lo)[0][0]), int(np.nonzero(tv == hi)[0][0])

    def _gram(self, t, tv, gx, gy, w, r):
        n = self.n
        z = np.zeros_like(tv)
        if self.norm == STANDARD:
            feats = [
                (np.hstack([tv, z, z]), 1.0),        # phi_r
                (np.hstack([z, tv, z]), 1.0),        # phi_z
                (np.hstack([gx, gy, z]), 1.0),       # div phi
                (np.hstack([z, z, tv]), 1.0),        # tau
                (np.hstack([z, z, gx]), 1.0),        # d_r tau
                (np.hstack([z, z, gy]), 1.0),        # d_z tau
            ]
        else:
            rr = r[:, None]
            feats = [
                (np.hstack([rr * tv, z, -gx]), 1.0),  # r phi_r - d_r tau
                (np.hstack([z, rr * tv, -gy]), 1.0),  # r phi_z - d_z tau
                (np.hstack([gx, gy, z]), 1.0),        # div phi
                (np.hstack([tv, z, z]), 1.0),
                (np.hstack([z, tv, z]), 1.0),
                (np.hstack([z, z, tv]), 1.0),
            ]
        G = np.zeros((3 * n, 3 * n))
        for F, _ in feats:
            G += (F * w[:, None]).T @ F
        return 0.5 * (G + G.T)

    # -- source moments -------------------------------------------------

    def source(self, t: int, psi_coeffs: np.ndarray, problem):
        """(N_K, D_K, L_K): tau moments of F_N/r, its psi derivative, F_L/r."""
        w = self.w_phys[t]
        pts = self.phys_pts[t]
        r, zc = pts[:, 0], pts[:, 1]
        psi_q = self.uv @ psi_coeffs
        fn = np.broadcast_to(np.asarray(problem.f_nl(r, zc, psi_q), dtype=float), r.shape)
        dfn = np.broadcast_to(np.asarray(problem.df_nl(r, zc, psi_q), dtype=float), r.shape)
        fl = np.broadcast_to(np.asarray(problem.f_lin(r, zc), dtype=float), r.shape)
        for arr, label in ((fn, "F_N"), (dfn, "dF_N/dpsi"), (fl, "F_L")):
            if not np.all(np.isfinite(arr)):
                q = int(np.nonzero(~np.isfinite(arr))[0][0])
                raise SourceEvaluationError(
                    f"{label} non-finite on element {t} at point ({r[q]:.6g}, {zc[q]:.6g})"
                )
        tau = self.tv
        N_K = tau.T @ (w * fn / r)
        L_K = tau.T @ (w * fl / r)
        D_K = (tau * (w * dfn / r)[:, None]).T @ self.uv
        return N_K, D_K, L_K

    def linear_source(self, t: int, problem) -> np.ndarray:
        _, _, L_K = self.source(t, np.zeros(self.nk), problem)
        return L_K

    def gram_dense(self, t: int) -> np.ndarray:
        """Reconstruct G_K from its Cholesky factor (test/diagnostic use)."""
        c, lower = self.chol[t]
        L = np.tril(c)
        return L @ L.T

    def gram_solve(self, t: int, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.chol[t], rhs)


# -- module-level convenience wrappers ----------------------------------


def assemble_element_B(cache: ElementCache, t: int) -> np.ndarray:
    return cache.B[t]


def assemble_element_gram(mesh: Mesh, test: TestSpace, t: int,
                          norm: str = STANDARD) -> tuple[np.ndarray, np.ndarray]:
    """Standalone Gram assembly; returns (G_K, lower Cholesky factor)."""
    trial = TrialSpace(mesh, max(test.k, 1))
    cache = ElementCache(mesh, trial, test, norm=norm)
    G = cache.gram_dense(t)
    return G, cholesky(G, lower=True)


def assemble_element_source(cache: ElementCache, t: int, psi_coeffs, problem):
    return cache.source(t, np.asarray(psi_coeffs, dtype=float), problem)

"""Global minimal-residual machinery for the ultraweak scheme.

Holds the element caches, the trial-space vector layout, the normal operator
A = J^T G^{-1} B_L with its nonlinear-source corrections, the right-hand
sides of the fixed-point map, and the energy residual r^T G^{-1} r used both
as the solver objective and as the refinement estimator.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import STANDARD, ElementCache
from .problems import ProblemSpec
from .spaces import TestSpace, TrialSpace, interpolate_boundary


class GlobalState:
    """Cached element systems plus global sparse operators for one mesh."""

    def __init__(self, mesh, problem: ProblemSpec, k: int, s: int = 2,
                 norm: str = STANDARD):
        self.mesh = mesh
        self.problem = problem
        self.trial = TrialSpace(mesh, k)
        self.test = TestSpace(mesh, k, s)
        self.cache = ElementCache(mesh, self.trial, self.test, norm=norm)
        self.bdata = interpolate_boundary(self.trial, problem.psi_d)
        self.n_total = self.trial.n_total
        self.free = np.ones(self.n_total, dtype=bool)
        self.free[self.bdata.dofs] = False

        n = self.test.nks
        T = mesh.n_triangles
        self._tau = slice(2 * n, 3 * n)
        # stacked per-element operators so the per-iteration work is batched:
        #   GinvB_tau : tau rows of G^{-1} B            (T, nks, ncols)
        #   P_tau     : B^T G^{-1} restricted to tau    (T, ncols, nks)
        #   Gtt       : tau-tau block of G^{-1}         (T, nks, nks)
        GinvB = [self.cache.gram_solve(t, self.cache.B[t]) for t in range(T)]
        self.GinvB_tau = np.stack([g[self._tau] for g in GinvB])
        eye_tau = np.zeros((3 * n, n))
        eye_tau[self._tau] = np.eye(n)
        Ginv_tau = np.stack([self.cache.gram_solve(t, eye_tau) for t in range(T)])
        self.P_tau = np.einsum("trc,trj->tcj", np.stack(self.cache.B), Ginv_tau)
        self.Gtt = Ginv_tau[:, self._tau, :]
        del GinvB, Ginv_tau
        self.cols_st = np.stack(self.cache.cols)
        self._pts_st = np.stack(self.cache.phys_pts)
        self._w_st = np.stack(self.cache.w_phys)
        self.L = np.array(
            [self.cache.linear_source(t, problem) for t in range(T)]
        )
        self._A0 = None
        self._A0_el = None

    # -- trial vector helpers ------------------------------------------

    def initial_guess(self) -> np.ndarray:
        U = np.zeros(self.n_total)
        U[self.bdata.dofs] = self.bdata.values
        return U

    def apply_boundary(self, U: np.ndarray) -> np.ndarray:
        U = U.copy()
        U[self.bdata.dofs] = self.bdata.values
        return U

    def psi_coeffs(self, U: np.ndarray, t: int) -> np.ndarray:
        return U[self.trial.psi_dofs(t)]

    def q_coeffs(self, U: np.ndarray, t: int) -> np.ndarray:
        nk = self.trial.nk
        return U[self.trial.q_dofs(t)].reshape(2, nk)

    # -- residual and energy -------------------------------------------

    def sources(self, U: np.ndarray):
        """Per-element nonlinear moments (N, D) at the current psi, batched
        over all elements: N is (T, nks), D is (T, nks, nk)."""
        from .assembly import SourceEvaluationError

        T = self.mesh.n_triangles
        nk = self.trial.nk
        psi_c = U[self.trial.offset_psi:self.trial.offset_qhat].reshape(T, nk)
        psi_q = psi_c @ self.cache.uv.T            # (T, nq)
        r = self._pts_st[:, :, 0]
        z = self._pts_st[:, :, 1]
        fn = np.broadcast_to(
            np.asarray(self.problem.f_nl(r, z, psi_q), dtype=float), r.shape)
        dfn = np.broadcast_to(
            np.asarray(self.problem.df_nl(r, z, psi_q), dtype=float), r.shape)
        for arr, label in ((fn, "F_N"), (dfn, "dF_N/dpsi")):
            if not np.all(np.isfinite(arr)):
                t, q = np.argwhere(~np.isfinite(arr))[0]
                raise SourceEvaluationError(
                    f"{label} non-finite on element {t} at point "
                    f"({r[t, q]:.6g}, {z[t, q]:.6g})")
        tv = self.cache.tv
        N = np.einsum("qi,tq->ti", tv, self._w_st * fn / r)
        D = np.einsum("qi,tq,qj->tij", tv, self._w_st * dfn / r, self.cache.uv)
        return N, D

    def residual_elements(self, U: np.ndarray, N: np.ndarray | None = None) -> np.ndarray:
        """(T, 3*nks) array of element test-space residuals."""
        if N is None:
            N, _ = self.sources(U)
        T = self.mesh.n_triangles
        r = np.empty((T, 3 * self.test.nks))
        for t in range(T):
            r[t] = self.cache.B[t] @ U[self.cache.cols[t]]
            r[t, self._tau] -= N[t] + self.L[t]
        return r

    def residual_vector(self, U: np.ndarray) -> np.ndarray:
        return self.residual_elements(U).ravel()

    def energy_residual(self, U: np.ndarray, r_el: np.ndarray | None = None):
        """(E_total, per-element E_K) with E_total**2 = sum E_K**2."""
        if r_el is None:
            r_el = self.residual_elements(U)
        E2 = np.empty(self.mesh.n_triangles)
        for t in range(self.mesh.n_triangles):
            E2[t] = r_el[t] @ self.cache.gram_solve(t, r_el[t])
        E2 = np.maximum(E2, 0.0)
        return float(np.sqrt(E2.sum())), np.sqrt(E2)

    def riesz_element(self, t: int, r_K: np.ndarray) -> np.ndarray:
        """Riesz representative of the element residual: G_K^{-1} r_K."""
        return self.cache.gram_solve(t, r_K)

    def normal_gradient(self, U: np.ndarray, N=None, D=None) -> np.ndarray:
        """g = J^T(U) G^{-1} r(U) on the full trial layout."""
        if N is None or D is None:
            N, D = self.sources(U)
        r_el = self.residual_elements(U, N)
        g = np.zeros(self.n_total)
        nk = self.trial.nk
        c_psi = slice(2 * nk, 3 * nk)
        for t in range(self.mesh.n_triangles):
            y = self.cache.gram_solve(t, r_el[t])
            loc = self.cache.B[t].T @ y
            loc[c_psi] -= D[t].T @ y[self._tau]
            np.add.at(g, self.cache.cols[t], loc)
        return g

    # -- normal operator -----------------------------------------------

    def element_static_blocks(self) -> np.ndarray:
        """Stacked (T, ncols, ncols) per-element blocks of B_L^T G^{-1} B_L."""
        if self._A0_el is None:
            self._A0_el = np.stack([
                self.cache.B[t].T @ self.cache.gram_solve(t, self.cache.B[t])
                for t in range(self.mesh.n_triangles)
            ])
        return self._A0_el

    def normal_matrix_static(self) -> sp.csr_matrix:
        """B_L^T G^{-1} B_L assembled once per mesh (symmetric part)."""
        if self._A0 is None:
            blocks = self.element_static_blocks()
            rows, cols, data = [], [], []
            for t in range(self.mesh.n_triangles):
                c = self.cache.cols[t]
                rows.append(np.repeat(c, len(c)))
                cols.append(np.tile(c, len(c)))
                data.append(blocks[t].ravel())
            A = sp.coo_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.n_total, self.n_total),
            )
            self._A0 = A.tocsr()
        return self._A0

    def normal_matrix(self, U: np.ndarray | None = None, include_DN: bool = True,
                      D=None) -> sp.csr_matrix:
        """A = J^T(U) G^{-1} B_L; reduces to the static SPD matrix for D_N = 0."""
        A = self.normal_matrix_static()
        if not include_DN:
            return A
        if D is None:
            if U is None:
                raise ValueError("need U (or precomputed D) for the D_N terms")
            _, D = self.sources(U)
        rows, cols, data = [], [], []
        for t in range(self.mesh.n_triangles):
            D_K = D[t]
            if not np.any(D_K):
                continue
            # correction (-D_N)^T (G^{-1} B_L) lands in the psi block rows
            C_K = -D_K.T @ self.GinvB_tau[t]
            c = self.cache.cols[t]
            pr = self.trial.psi_dofs(t)
            rows.append(np.repeat(pr, len(c)))
            cols.append(np.tile(c, len(pr)))
            data.append(C_K.ravel())
        if not data:
            return A
        C = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_total, self.n_total),
        )
        return (A + C.tocsr()).tocsr()

    def fixed_point_rhs(self, U: np.ndarray, N=None, D=None) -> np.ndarray:
        """b = J^T(U) G^{-1} (B_N(U) + F_L) on the full trial layout."""
        if N is None or D is None:
            N, D = self.sources(U)
        b = np.zeros(self.n_total)
        nk = self.trial.nk
        c_psi = slice(2 * nk, 3 * nk)
        f = np.zeros(3 * self.test.nks)
        for t in range(self.mesh.n_triangles):
            f[:] = 0.0
            f[self._tau] = N[t] + self.L[t]
            y = self.cache.gram_solve(t, f)
            loc = self.cache.B[t].T @ y
            loc[c_psi] -= D[t].T @ y[self._tau]
            np.add.at(b, self.cache.cols[t], loc)
        return b

    def solve_linearized(self, N, D) -> np.ndarray:
        """Direct solve of A x = b by local elimination of interior fields.

        The interior (q, psi) columns couple only within their own element,
        so they are condensed out and only the skeleton system (normal traces
        plus psihat) is factorized globally.  Returns the full trial vector
        with boundary values applied.
        """
        tr = self.trial
        nk3 = 3 * tr.nk
        c_psi = slice(2 * tr.nk, 3 * tr.nk)
        off = tr.offset_qhat
        n_tr = self.n_total - off
        A = self.element_static_blocks()

        src = N + self.L                               # (T, nks)
        y_tau = np.einsum("tij,tj->ti", self.Gtt, src)
        b = np.einsum("tcj,tj->tc", self.P_tau, src)   # (T, ncols)
        if np.any(D):
            A = A.copy()
            A[:, c_psi, :] -= np.einsum("tji,tjc->tic", D, self.GinvB_tau)
            b[:, c_psi] -= np.einsum("tji,tj->ti", D, y_tau)

        A_ii = A[:, :nk3, :nk3]
        A_it = A[:, :nk3, nk3:]
        A_ti = A[:, nk3:, :nk3]
        sol = np.linalg.solve(A_ii, np.concatenate([A_it, b[:, :nk3, None]], axis=2))
        X, y_i = sol[:, :, :-1], sol[:, :, -1]
        S_el = A[:, nk3:, nk3:] - A_ti @ X             # (T, ntr, ntr)
        r_el = b[:, nk3:] - np.einsum("tij,tj->ti", A_ti, y_i)

        c_t = self.cols_st[:, nk3:] - off              # (T, ntr_local)
        m = c_t.shape[1]
        S = sp.coo_matrix(
            (S_el.ravel(),
             (np.repeat(c_t, m, axis=1).ravel(), np.tile(c_t, (1, m)).ravel())),
            shape=(n_tr, n_tr),
        ).tocsr()
        rhs = np.zeros(n_tr)
        np.add.at(rhs, c_t.ravel(), r_el.ravel())

        free_t = self.free[off:]
        g = np.zeros(n_tr)
        g[self.bdata.dofs - off] = self.bdata.values
        b_f = (rhs - S @ g)[free_t]
        x_t = g.copy()
        # the trace system is symmetric up to the D_N correction; SuperLU's
        # symmetric mode keeps the fill-in of the factorization moderate
        lu = spla.splu(S[free_t][:, free_t].tocsc(), permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True, DiagPivotThresh=0.01))
        x_t[free_t] = lu.solve(b_f)

        U = np.zeros(self.n_total)
        U[off:] = x_t
        v = U[self.cols_st[:, nk3:]]                   # (T, ntr_local)
        x_i = np.linalg.solve(
            A_ii, (b[:, :nk3] - np.einsum("tij,tj->ti", A_it, v))[:, :, None]
        )[:, :, 0]
        U[self.cols_st[:, :nk3]] = x_i
        return U

    # -- boundary elimination ------------------------------------------

    def constrain(self, A: sp.csr_matrix, b: np.ndarray):
        """Restrict A x = b to free DOFs, moving boundary data to the RHS."""
        free = self.free
        g = np.zeros(self.n_total)
        g[self.bdata.dofs] = self.bdata.values
        b_f = (b - A @ g)[free]
        A_ff = A[free][:, free].tocsc()
        return A_ff, b_f

    def expand(self, x_f: np.ndarray) -> np.ndarray:
        U = np.zeros(self.n_total)
        U[self.free] = x_f
        U[self.bdata.dofs] = self.bdata.values
        return U

    # -- field evaluation ----------------------------------------------

    def eval_psi(self, U: np.ndarray, t: int, ref_points: np.ndarray) -> np.ndarray:
        vals, _ = self.trial.psi_basis.eval(ref_points)
        return vals @ self.psi_coeffs(U, t)

    def eval_q(self, U: np.ndarray, t: int, ref_points: np.ndarray) -> np.ndarray:
        vals, _ = self.trial.q_basis.eval(ref_points)
        return vals @ self.q_coeffs(U, t).T


def residual_vector(state: GlobalState, U: np.ndarray) -> np.ndarray:
    return state.residual_vector(U)


def assemble_normal_operator(state: GlobalState, U=None, include_DN=True):
    return state.normal_matrix(U, include_DN=include_DN)


def energy_residual(state: GlobalState, U: np.ndarray):
    return state.energy_residual(U)


def riesz_element(state: GlobalState, t: int, r_K: np.ndarray) -> np.ndarray:
    return state.riesz_element(t, r_K)

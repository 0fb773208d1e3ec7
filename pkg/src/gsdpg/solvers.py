"""Linear and nonlinear solvers for the normal equations.

The nonlinear path is a Picard iteration on the fixed-point map
A(U) = (J^T G^{-1} B_L)^{-1} [J^T G^{-1} (B_N(U) + F_L)], accelerated with
Anderson mixing and a cubic backtracking line search.  The inner linear
solve uses either a sparse direct factorization or flexible GMRES with a
four-block Jacobi preconditioner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .system import GlobalState


@dataclass
class AndersonParams:
    m: int = 5
    rtol: float = 1e-8
    atol: float = 1e-10
    stol: float = 1e-12
    max_iters: int = 100
    lambda0: float = 1.0
    line_search: bool = True


@dataclass
class KrylovParams:
    restart: int = 200
    rtol: float = 1e-10
    max_iters: int = 5000


@dataclass
class SolveResult:
    U: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    message: str = ""


# -- linear algebra -----------------------------------------------------


def krylov_solve(A, b, M=None, params: KrylovParams | None = None):
    """Right-preconditioned restarted (flexible) GMRES.

    ``A`` is a matrix or LinearOperator, ``M`` an optional preconditioner
    callable/operator approximating A^{-1}.  Returns (x, info) where info
    holds the iteration count and final relative residual.
    """
    params = params or KrylovParams()
    n = b.shape[0]
    matvec = A.dot if hasattr(A, "dot") else A
    if M is None:
        psolve = lambda v: v
    elif callable(M) and not hasattr(M, "dot"):
        psolve = M
    else:
        psolve = M.dot

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), {"iterations": 0, "relres": 0.0, "converged": True}
    tol = params.rtol * bnorm
    x = np.zeros(n)
    total = 0
    m = params.restart
    while total < params.max_iters:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta <= tol:
            return x, {"iterations": total, "relres": beta / bnorm, "converged": True}
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        cs = np.zeros(m)
        sn = np.zeros(m)
        j = 0
        while j < m and total < params.max_iters:
            Z[j] = psolve(V[j])
            w = matvec(Z[j])
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 1e-300:
                V[j + 1] = w / H[j + 1, j]
            # Givens rotations
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            d = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / d, H[j + 1, j] / d
            H[j, j] = d
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j += 1
            if abs(g[j]) <= tol:
                break
        y = np.linalg.solve(np.triu(H[:j, :j]), g[:j])
        x = x + y @ Z[:j]
    r = b - matvec(x)
    relres = np.linalg.norm(r) / bnorm
    return x, {"iterations": total, "relres": relres,
               "converged": relres <= params.rtol}


class BlockJacobiPreconditioner:
    """Four diagonal blocks of B_L^T G^{-1} B_L, each solved directly.

    Block ranges follow the global (Q, Psi, Qhat_n, Psihat) ordering; on the
    constrained system the boundary-eliminated DOFs are simply absent.  The
    sparse direct factorization of each block replaces the multigrid inner
    solvers of large-scale settings.
    """

    def __init__(self, state: GlobalState, free: np.ndarray | None = None):
        A0 = state.normal_matrix_static().tocsr()
        tr = state.trial
        bounds = [0, tr.offset_psi, tr.offset_qhat, tr.offset_psihat, tr.n_total]
        if free is None:
            free = np.ones(tr.n_total, dtype=bool)
        idx = np.nonzero(free)[0]
        self.n = len(idx)
        self.block_slices = []
        self.factors = []
        self.blocks = []
        start = 0
        for b in range(4):
            sel = idx[(idx >= bounds[b]) & (idx < bounds[b + 1])]
            sl = slice(start, start + len(sel))
            start += len(sel)
            P_bb = A0[sel][:, sel].tocsc()
            asym = abs(P_bb - P_bb.T).max() if P_bb.nnz else 0.0
            if asym > 1e-10 * max(1.0, abs(P_bb).max()):
                raise RuntimeError(f"preconditioner block {b + 1} is not symmetric")
            try:
                self.factors.append(spla.splu(P_bb))
            except RuntimeError as exc:
                raise RuntimeError(f"factorization of block P{b + 1}{b + 1} failed") from exc
            self.block_slices.append(sl)
            self.blocks.append(P_bb)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        for sl, lu in zip(self.block_slices, self.factors):
            out[sl] = lu.solve(v[sl])
        return out

    dot = __call__


def build_block_jacobi(state: GlobalState, constrained: bool = True):
    return BlockJacobiPreconditioner(state, state.free if constrained else None)


# -- fixed-point map ----------------------------------------------------


class FixedPointMap:
    """A(U): one linearized normal-equation solve at the current iterate."""

    def __init__(self, state: GlobalState, inner: str = "direct",
                 krylov: KrylovParams | None = None):
        if inner not in ("direct", "gmres"):
            raise ValueError(f"unknown inner solver {inner!r}")
        self.state = state
        self.inner = inner
        self.krylov = krylov or KrylovParams()
        self._precond = None
        self._linear_result = None
        self.inner_iterations = []

    def __call__(self, U: np.ndarray) -> np.ndarray:
        st = self.state
        N, D = st.sources(U)
        # when F_N vanishes identically, the map is constant: cache its value
        linear = not N.any() and not any(np.any(d) for d in D)
        if linear and self._linear_result is not None:
            self.inner_iterations.append(0)
            return self._linear_result.copy()
        if self.inner == "direct":
            out = st.solve_linearized(N, D)
            self.inner_iterations.append(0)
        else:
            A = st.normal_matrix(D=D)
            b = st.fixed_point_rhs(U, N, D)
            A_ff, b_f = st.constrain(A, b)
            if self._precond is None:
                self._precond = build_block_jacobi(st)
            x, info = krylov_solve(A_ff, b_f, M=self._precond, params=self.krylov)
            self.inner_iterations.append(info["iterations"])
            if not info["converged"]:
                raise RuntimeError(
                    f"inner GMRES stalled at relative residual {info['relres']:.3e}"
                )
            out = st.expand(x)
        if linear:
            self._linear_result = out.copy()
        return out


def fixed_point_apply(state: GlobalState, U: np.ndarray, inner: str = "direct"):
    return FixedPointMap(state, inner=inner)(U)


# -- line search --------------------------------------------------------


def cubic_line_search(merit, lambda_init: float = 1.0, lambda_min: float = 1e-4,
                      alpha: float = 2e-4):
    """Backtracking on merit(lam) with quadratic then cubic interpolation.

    Accepts the first lam with merit(lam) <= merit(0) * (1 - 2*alpha*lam)
    (sufficient decrease for a squared-residual merit along a solver step,
    whose directional derivative at 0 is modeled as -2*merit(0)).  Steps are
    safeguarded to [0.1, 0.5] of the previous lam; gives up at lambda_min.
    """
    m0 = merit(0.0)
    slope = -2.0 * m0
    lam = lambda_init
    m_lam = merit(lam)
    if m_lam <= m0 * (1.0 - 2.0 * alpha * lam):
        return lam, m_lam
    # quadratic model through m0, slope, (lam, m_lam)
    lam_prev, m_prev = lam, m_lam
    denom = 2.0 * (m_lam - m0 - slope * lam)
    lam_new = -slope * lam * lam / denom if denom > 0 else 0.5 * lam
    lam = float(np.clip(lam_new, 0.1 * lam_prev, 0.5 * lam_prev))
    while True:
        m_lam = merit(lam)
        if m_lam <= m0 * (1.0 - 2.0 * alpha * lam):
            return lam, m_lam
        if lam <= lambda_min:
            return lambda_min, merit(lambda_min)
        # cubic model through (lam_prev, m_prev) and (lam, m_lam)
        r1 = m_lam - m0 - slope * lam
        r2 = m_prev - m0 - slope * lam_prev
        den = lam * lam * lam_prev * lam_prev * (lam - lam_prev)
        a = (lam_prev * lam_prev * r1 - lam * lam * r2) / den
        bq = (-lam_prev**3 * r1 + lam**3 * r2) / den
        if a == 0.0:
            lam_new = -slope / (2.0 * bq) if bq != 0 else 0.5 * lam
        else:
            disc = bq * bq - 3.0 * a * slope
            lam_new = (-bq + np.sqrt(max(disc, 0.0))) / (3.0 * a)
        lam_prev, m_prev = lam, m_lam
        lam = float(np.clip(lam_new, 0.1 * lam_prev, 0.5 * lam_prev))
        lam = max(lam, lambda_min)


# -- Anderson acceleration ---------------------------------------------


def _mixing_weights(residuals: list[np.ndarray]) -> np.ndarray:
    """Constrained least squares min ||sum a_i R_i||, sum a_i = 1.

    Solved in the difference reformulation; drops the oldest columns on
    rank deficiency.  residuals[0] is the newest.
    """
    mk = len(residuals) - 1
    if mk == 0:
        return np.array([1.0])
    R0 = residuals[0]
    while mk > 0:
        M = np.column_stack([residuals[i] - R0 for i in range(1, mk + 1)])
        gamma, _, rank, _ = np.linalg.lstsq(M, -R0, rcond=None)
        if rank == mk:
            break
        mk -= 1  # drop the oldest column and retry
    else:
        return np.array([1.0])
    alpha = np.empty(mk + 1)
    alpha[1:] = gamma
    alpha[0] = 1.0 - gamma.sum()
    return alpha


def anderson_solve(fp_map, U0: np.ndarray, params: AndersonParams | None = None):
    """Anderson-accelerated Picard iteration on U - A(U) = 0.

    With m = 0 and unit relaxation the iterates reduce to plain Picard.
    Returns a SolveResult whose history holds ||R_k||_2 per iteration.
    """
    p = params or AndersonParams()
    U_hist: list[np.ndarray] = [np.asarray(U0, dtype=float)]
    A_hist: list[np.ndarray] = [fp_map(U_hist[0])]
    R_hist: list[np.ndarray] = [U_hist[0] - A_hist[0]]
    r0_norm = np.linalg.norm(R_hist[0])
    stop = max(p.rtol * r0_norm, p.atol)
    history = []

    U1 = (1.0 - p.lambda0) * U_hist[0] + p.lambda0 * A_hist[0]
    A1 = fp_map(U1)
    U_hist.insert(0, U1)
    A_hist.insert(0, A1)
    R_hist.insert(0, U1 - A1)
    history.append(np.linalg.norm(R_hist[0]))

    k = 1
    while k < p.max_iters:
        rk = np.linalg.norm(R_hist[0])
        step = np.linalg.norm(U_hist[0] - U_hist[1])
        if rk < stop or step < p.stol * max(np.linalg.norm(U_hist[1]), 1e-300):
            return SolveResult(U_hist[0], True, k, history, "converged")
        mk = min(k, p.m)
        alpha = _mixing_weights(R_hist[: mk + 1])
        na = len(alpha)
        U_bar = sum(a * u for a, u in zip(alpha, U_hist[:na]))
        A_bar = sum(a * v for a, v in zip(alpha, A_hist[:na]))

        if p.line_search:
            cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

            def merit(lam):
                if lam == 0.0:
                    return rk * rk
                U_t = (1.0 - lam) * U_bar + lam * A_bar
                A_t = fp_map(U_t)
                cache[lam] = (U_t, A_t)
                R_t = U_t - A_t
                return float(R_t @ R_t)

            lam, _ = cubic_line_search(merit)
            U_new, A_new = cache[lam]
        else:
            lam = 1.0
            U_new = (1.0 - lam) * U_bar + lam * A_bar
            A_new = fp_map(U_new)

        U_hist.insert(0, U_new)
        A_hist.insert(0, A_new)
        R_hist.insert(0, U_new - A_new)
        del U_hist[p.m + 2:], A_hist[p.m + 2:], R_hist[p.m + 2:]
        k += 1
        history.append(np.linalg.norm(R_hist[0]))

    rk = np.linalg.norm(R_hist[0])
    ok = rk < stop
    return SolveResult(U_hist[0], ok, k, history,
                       "converged" if ok else "max_iters exceeded")


def solve_nonlinear(state: GlobalState, params: AndersonParams | None = None,
                    inner: str = "direct", U0: np.ndarray | None = None):
    """Anderson-accelerated solve of the full system on a GlobalState."""
    fp = FixedPointMap(state, inner=inner)
    if U0 is None:
        U0 = state.initial_guess()
    else:
        U0 = state.apply_boundary(U0)
    return anderson_solve(fp, U0, params)


# -- optional Jacobian-free Newton-Krylov -------------------------------


def jfnk_solve(state: GlobalState, U0: np.ndarray | None = None,
               rtol: float = 1e-8, atol: float = 1e-10, max_newton: int = 30,
               krylov: KrylovParams | None = None):
    """Newton iteration on F(U) = J^T G^{-1} r(U) with a finite-difference
    Jacobian action, preconditioned by the block Jacobi of J^T G^{-1} J.

    Known limitation (inherited from the exact-Jacobian structure whose
    Hessian term is dropped from the preconditioner): reliable only for
    weak nonlinearity; returns a non-converged status otherwise.
    """
    krylov = krylov or KrylovParams(rtol=1e-6)
    U = state.initial_guess() if U0 is None else state.apply_boundary(U0)
    free = state.free

    def F(Ufull):
        return state.normal_gradient(Ufull)[free]

    g = F(U)
    g0 = np.linalg.norm(g)
    stop = max(rtol * g0, atol)
    history = [g0]
    precond = build_block_jacobi(state)
    for it in range(max_newton):
        if np.linalg.norm(g) < stop:
            return SolveResult(U, True, it, history, "converged")
        Unorm = np.linalg.norm(U)

        def jv(v):
            nv = np.linalg.norm(v)
            if nv == 0.0:
                return np.zeros_like(v)
            eps = 1e-7 * (1.0 + Unorm) / nv
            Up = U.copy()
            Up[free] += eps * v
            return (F(Up) - g) / eps

        op = spla.LinearOperator((free.sum(), free.sum()), matvec=jv)
        dx, info = krylov_solve(op, -g, M=precond, params=krylov)
        if not info["converged"]:
            return SolveResult(U, False, it, history,
                               f"inner GMRES failed (relres {info['relres']:.2e})")
        U_new = U.copy()
        U_new[free] += dx
        g_new = F(U_new)
        if not np.all(np.isfinite(g_new)) or np.linalg.norm(g_new) > 10.0 * np.linalg.norm(g):
            return SolveResult(U, False, it, history, "Newton step diverged")
        U, g = U_new, g_new
        history.append(np.linalg.norm(g))
    ok = np.linalg.norm(g) < stop
    return SolveResult(U, ok, max_newton, history,
                       "converged" if ok else "max Newton iterations")

"""Small dense numerical kernels: LU solves, a 2-D Newton solver, a convex QP."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .errors import Infeasible, NoConvergence, Singular, Unbounded

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class LUFactorization:
    """Partial-pivoting LU of a square matrix with a 1-norm condition estimate."""

    lu: np.ndarray
    piv: np.ndarray
    cond: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.lu_solve((self.lu, self.piv), b, check_finite=False)


def lu_factor(a: np.ndarray, pivot_tol: float = PIVOT_TOL) -> LUFactorization:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"lu_factor needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    anorm = np.abs(a).sum(axis=0).max() if a.size else 0.0
    with warnings.catch_warnings():
        # an exactly zero pivot is reported below as Singular
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if a.size == 0 or pivots.min() <= pivot_tol * max(anorm, 1e-300):
        k = int(np.argmin(pivots)) if a.size else 0
        raise Singular(f"pivot {k} is {pivots[k] if a.size else 0:.3e}, below {pivot_tol:g}*||A||")
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    cond = 1.0 / rcond if rcond > 0 else np.inf
    return LUFactorization(lu=lu, piv=piv, cond=float(cond))


def lu_solve(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve ``A X = B``; returns ``(X, condition_estimate)``."""
    fac = lu_factor(a)
    return fac.solve(np.asarray(b, dtype=float)), fac.cond


def lu_rank(a: np.ndarray, tol: float = 1e-10) -> int:
    """Rank estimate from the pivots of ``P A^T = L U`` (rows of ``A`` as columns)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    m = a.T if a.shape[0] <= a.shape[1] else a
    _, _, u = sla.lu(m)
    scale = max(np.abs(a).max(), 1.0)
    return int(np.sum(np.abs(np.diag(u)) > tol * scale))


def newton_2d(
    f: Callable[[np.ndarray], np.ndarray],
    x0,
    tol: float = 1e-10,
    max_iter: int = 50,
    fd_step: float = 1e-6,
) -> np.ndarray:
    """Find a root of ``f: R^2 -> R^2`` with a central-difference Jacobian.

    Steps are halved while the residual grows. ``f`` may return non-finite
    values to signal that a point cannot be evaluated. On failure raises
    :class:`NoConvergence` carrying the best iterate.
    """
    x = np.array(x0, dtype=float)

    def resid(v):
        fv = np.asarray(f(v), dtype=float)
        r = np.max(np.abs(fv))
        return fv, (r if np.isfinite(r) else np.inf)

    fx, r = resid(x)
    if not np.isfinite(r):
        raise NoConvergence("residual not finite at the starting point", best=x, residual=r)
    for it in range(max_iter):
        if r <= tol:
            return x
        jac = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = fd_step
            jac[:, j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * fd_step)
        if not np.all(np.isfinite(jac)) or abs(np.linalg.det(jac)) < 1e-14 * max(np.abs(jac).max(), 1e-300) ** 2:
            raise NoConvergence("singular Jacobian", best=x, residual=r, iterations=it)
        dx = np.linalg.solve(jac, -fx)
        t = 1.0
        while True:
            xn = x + t * dx
            fn, rn = resid(xn)
            if rn < r or t < 2.0 ** -20:
                break
            t *= 0.5
        if not rn < r:
            raise NoConvergence("no residual decrease along the Newton step",
                                best=x, residual=r, iterations=it)
        x, fx, r = xn, fn, rn
    if r <= tol:
        return x
    raise NoConvergence(f"no convergence in {max_iter} iterations", best=x, residual=r,
                        iterations=max_iter)


@dataclass(eq=False)
class QpProblem:
    """``min 1/2 z'Hz + g'z  s.t.  A_ineq z <= b_ineq,  A_eq z = b_eq``."""

    H: np.ndarray
    g: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if not np.allclose(self.H, self.H.T, atol=1e-12 * max(1.0, np.abs(self.H).max())):
            raise ValueError("H must be symmetric")
        self.H = 0.5 * (self.H + self.H.T)
        self.A_ineq, self.b_ineq = self._rows(self.A_ineq, self.b_ineq, n, "inequality")
        self.A_eq, self.b_eq = self._rows(self.A_eq, self.b_eq, n, "equality")

    @staticmethod
    def _rows(a, b, n, what):
        if a is None:
            return np.zeros((0, n)), np.zeros(0)
        a = np.atleast_2d(np.asarray(a, dtype=float)).reshape(-1, n)
        b = np.asarray(b, dtype=float).ravel()
        if a.shape[0] != b.size:
            raise ValueError(f"{what} rows: {a.shape[0]} in A but {b.size} in b")
        return a, b

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.H @ z + self.g @ z)


@dataclass(eq=False)
class QpResult:
    x: np.ndarray
    objective: float
    active: tuple[int, ...]
    lam_ineq: np.ndarray
    lam_eq: np.ndarray
    iterations: int
    kkt_residual: float
    infeasibility: float
    info: dict = field(default_factory=dict)


def _phase_one(p: QpProblem) -> np.ndarray:
    res = linprog(np.zeros(p.n), A_ub=p.A_ineq if len(p.b_ineq) else None,
                  b_ub=p.b_ineq if len(p.b_ineq) else None,
                  A_eq=p.A_eq if len(p.b_eq) else None, b_eq=p.b_eq if len(p.b_eq) else None,
                  bounds=[(None, None)] * p.n, method="highs")
    if res.status == 2:
        raise Infeasible("phase 1 found no feasible point")
    if res.status == 3:
        # zero objective cannot be unbounded; HiGHS reports this only on trouble
        raise Infeasible(f"phase 1 failed: {res.message}")
    if not res.success:
        raise Infeasible(f"phase 1 failed: {res.message}")
    return np.asarray(res.x, dtype=float)


def _independent(rows: np.ndarray, cand: np.ndarray, tol: float = 1e-10) -> bool:
    if rows.shape[0] == 0:
        return bool(np.linalg.norm(cand) > tol)
    stacked = np.vstack([rows, cand])
    s = np.linalg.svd(stacked, compute_uv=False)
    return bool(s[-1] > tol * max(s[0], 1.0)) and stacked.shape[0] <= stacked.shape[1]


def qp_solve(
    p: QpProblem,
    x0: np.ndarray | None = None,
    feas_tol: float = 1e-9,
    max_iter: int | None = None,
) -> QpResult:
    """Primal active-set method for convex (PSD) QPs.

    Zero-curvature directions in the working-set null space are followed as
    rays until a constraint blocks them; a ray with nothing blocking raises
    :class:`Unbounded`.
    """
    n = p.n
    A, b = p.A_ineq, p.b_ineq
    E, e = p.A_eq, p.b_eq
    m = len(b)
    max_iter = max_iter or 50 * (n + m + 10)

    x = np.asarray(x0, dtype=float).copy() if x0 is not None else None
    if x is None or (m and np.max(A @ x - b) > feas_tol) or (len(e) and np.max(np.abs(E @ x - e)) > feas_tol):
        x = _phase_one(p)

    eq_rows = E
    if len(e):
        s = np.linalg.svd(E, compute_uv=False)
        if np.sum(s > 1e-10 * max(s[0], 1.0)) < E.shape[0]:
            # drop dependent equality rows greedily
            keep: list[int] = []
            for i in range(E.shape[0]):
                if _independent(E[keep], E[i]):
                    keep.append(i)
            eq_rows = E[keep]
    work: list[int] = []
    if m:
        slack = b - A @ x
        for i in np.argsort(slack, kind="stable"):
            if slack[i] > 1e-9 * max(1.0, abs(b[i])):
                break
            if len(work) + eq_rows.shape[0] < n and _independent(np.vstack([eq_rows, A[work]]), A[i]):
                work.append(int(i))

    scale = max(1.0, np.abs(p.H).max(), np.abs(p.g).max())
    zero_steps = 0
    it = 0
    for it in range(1, max_iter + 1):
        grad = p.H @ x + p.g
        aw = np.vstack([eq_rows, A[work]]) if work else eq_rows
        if aw.shape[0]:
            _, sv, vt = np.linalg.svd(aw)
            rank = int(np.sum(sv > 1e-10 * max(sv[0], 1.0)))
            z = vt[rank:].T
        else:
            z = np.eye(n)

        step = np.zeros(n)
        ray = False
        if z.shape[1]:
            hr = z.T @ p.H @ z
            gr = z.T @ grad
            w, v = np.linalg.eigh(0.5 * (hr + hr.T))
            curv = w > 1e-11 * scale
            y = -v[:, curv] @ ((v[:, curv].T @ gr) / w[curv])
            gz = v[:, ~curv].T @ gr
            if gz.size and np.linalg.norm(gz) > 1e-12 * scale:
                step = -z @ (v[:, ~curv] @ gz)
                ray = True
            else:
                step = z @ y

        if not ray and np.max(np.abs(step)) <= 1e-13 * (1.0 + np.max(np.abs(x))):
            if aw.shape[0]:
                lam, *_ = np.linalg.lstsq(aw.T, -grad, rcond=None)
            else:
                lam = np.zeros(0)
            lam_w = lam[eq_rows.shape[0]:]
            if not work or lam_w.min() >= -1e-10 * scale:
                break
            drop = int(np.argmin(lam_w)) if zero_steps < 20 else int(np.flatnonzero(lam_w < -1e-10 * scale)[0])
            work.pop(drop)
            continue

        alpha = np.inf if ray else 1.0
        block = -1
        if m:
            ap = A @ step
            cand = np.flatnonzero(ap > 1e-14 * max(1.0, np.max(np.abs(step))))
            cand = [i for i in cand if i not in work]
            if cand:
                cand = np.array(cand)
                ratios = np.maximum((b[cand] - A[cand] @ x) / ap[cand], 0.0)
                k = int(np.argmin(ratios))
                if ratios[k] < alpha:
                    alpha, block = float(ratios[k]), int(cand[k])
        if not np.isfinite(alpha):
            raise Unbounded("objective decreases along a feasible ray")
        x = x + alpha * step
        zero_steps = zero_steps + 1 if alpha == 0.0 else 0
        if block >= 0:
            work.append(block)
    else:
        raise NoConvergence(f"active set did not settle in {max_iter} iterations", best=x)

    # final multipliers over the full constraint set
    grad = p.H @ x + p.g
    lam_ineq = np.zeros(m)
    lam_eq = np.zeros(len(e))
    aw = np.vstack([E, A[work]]) if work else E
    if aw.shape[0]:
        lam, *_ = np.linalg.lstsq(aw.T, -grad, rcond=None)
        lam_eq = lam[: len(e)]
        lam_ineq[work] = lam[len(e):]
    kkt = grad + E.T @ lam_eq + A.T @ lam_ineq
    infeas = max(float(np.max(A @ x - b, initial=0.0)),
                 float(np.max(np.abs(E @ x - e), initial=0.0)))
    return QpResult(
        x=x,
        objective=p.objective(x),
        active=tuple(sorted(work)),
        lam_ineq=lam_ineq,
        lam_eq=lam_eq,
        iterations=it,
        kkt_residual=float(np.max(np.abs(kkt), initial=0.0)),
        infeasibility=infeas,
    )

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from flexagg import Infeasible, NoConvergence, Singular, Unbounded
from flexagg.lindistflow import assemble
from flexagg.numerics import QpProblem, lu_factor, lu_solve, newton_2d, qp_solve
from flexagg.distflow import exchange_map, sweep_solve
from oracles import enumerate_qp, grid_argmin


def test_lu_identity():
    B = np.arange(12.0).reshape(4, 3)
    X, cond = lu_solve(np.eye(4), B)
    assert np.array_equal(X, B)
    assert cond == pytest.approx(1.0)


def test_lu_diagonal():
    X, _ = lu_solve(np.array([[2.0, 0], [0, 4.0]]), np.array([[1.0], [1.0]]))
    assert X.ravel().tolist() == [0.5, 0.25]


def test_lu_singular():
    with pytest.raises(Singular):
        lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_lu_needs_square():
    with pytest.raises(ValueError):
        lu_factor(np.ones((2, 3)))


def test_lindistflow_matrix_inverse(two_bus):
    A = assemble(two_bus()).A
    Ainv, cond = lu_solve(A, np.eye(len(A)))
    assert np.max(np.abs(A @ Ainv - np.eye(len(A)))) <= 1e-12
    assert np.isfinite(cond)


@given(n=st.integers(1, 500), seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=15, deadline=None)
def test_lu_residual_on_well_conditioned(n, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = q * rng.uniform(1.0, 10.0, n)  # singular values in [1, 10]
    B = rng.standard_normal((n, 3))
    X, cond = lu_solve(A, B)
    assert np.max(np.abs(A @ X - B)) <= 1e-10 * np.max(np.abs(B))
    assert cond < 1e4


def test_newton_affine():
    c = np.array([3.0, -2.0])
    assert np.allclose(newton_2d(lambda x: x - c, [0, 0], tol=1e-14), c, atol=1e-12)


def test_newton_decoupled_quadratic():
    x = newton_2d(lambda v: np.array([v[0] ** 2 - 4, v[1] - 1]), [1.0, 0.0], tol=1e-12)
    assert np.allclose(x, [2.0, 1.0], atol=1e-10)


def test_newton_no_root():
    with pytest.raises(NoConvergence) as err:
        newton_2d(lambda v: np.array([v[0] ** 2 + 1, v[1]]), [1.0, 0.0])
    assert err.value.best is not None and err.value.residual >= 1.0


def test_newton_inverts_two_bus_power_flow(two_bus):
    net = two_bus()
    der = np.array([0.1, -0.05])
    target = sweep_solve(net, der).exchange
    f = exchange_map(net)
    found = newton_2d(lambda d: f(d) - target, [0.0, 0.0], tol=1e-12)
    assert np.allclose(found, der, atol=1e-8)


def test_qp_single_active_constraint():
    res = qp_solve(QpProblem(2 * np.eye(2), np.zeros(2), [[-1.0, 0.0]], [-1.0]))
    assert np.allclose(res.x, [1.0, 0.0], atol=1e-12)
    assert res.active == (0,)
    assert res.lam_ineq[0] == pytest.approx(2.0)


def test_qp_projection_onto_square():
    c = np.array([2.5, -0.3])
    A = np.vstack([np.eye(2), -np.eye(2)])
    res = qp_solve(QpProblem(2 * np.eye(2), -2 * c, A, np.ones(4)))
    assert np.allclose(res.x, np.clip(c, -1, 1), atol=1e-12)


def test_qp_infeasible():
    with pytest.raises(Infeasible):
        qp_solve(QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [0.0, -1.0]))


def test_qp_unbounded():
    with pytest.raises(Unbounded):
        qp_solve(QpProblem(np.zeros((2, 2)), [1.0, 0.0], [[0.0, 1.0]], [1.0]))


def test_qp_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        QpProblem(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))


def test_qp_equality_constraints():
    # min x^2 + y^2 + z^2 s.t. x + y + z = 3 -> (1, 1, 1)
    res = qp_solve(QpProblem(2 * np.eye(3), np.zeros(3), A_eq=[[1, 1, 1]], b_eq=[3.0]))
    assert np.allclose(res.x, 1.0, atol=1e-12)
    assert res.lam_eq[0] == pytest.approx(-2.0)


def random_qp(seed: int, k: int, boxed_only: bool = False) -> QpProblem:
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((2, 2))
    H = L @ L.T + rng.uniform(0.2, 2.0) * np.eye(2)
    g = rng.uniform(-4, 4, 2)
    if boxed_only:
        lo = rng.uniform(-1, 0, 2)
        hi = lo + rng.uniform(0.1, 1.0, 2)
        return QpProblem(H, g, np.vstack([np.eye(2), -np.eye(2)]), np.concatenate([hi, -lo]))
    ang = rng.uniform(0, 2 * np.pi, k)
    A = np.vstack([np.column_stack([np.cos(ang), np.sin(ang)]), np.eye(2), -np.eye(2)])
    b = np.concatenate([rng.uniform(-0.3, 0.8, k), np.ones(4)])
    return QpProblem(H, g, A, b)


def quad(p: QpProblem):
    return lambda z: 0.5 * np.einsum("ij,jk,ik->i", z, p.H, z) + z @ p.g


def feasible_on(p: QpProblem):
    return lambda pts: np.all(pts @ p.A_ineq.T <= p.b_ineq + 1e-12, axis=1)


@given(seed=st.integers(0, 2 ** 32 - 1), k=st.integers(0, 5))
@settings(max_examples=40, deadline=None)
def test_qp_matches_exact_enumeration_and_grid(seed, k):
    p = random_qp(seed, k)
    assume(linprog(np.zeros(2), A_ub=p.A_ineq, b_ub=p.b_ineq - 1e-3, bounds=[(None, None)] * 2).status == 0)
    res = qp_solve(p)
    assert res.infeasibility <= 1e-9
    assert res.kkt_residual <= 1e-8
    assert np.all(res.lam_ineq >= -1e-9)
    assert np.allclose(res.x, enumerate_qp(p.H, p.g, p.A_ineq, p.b_ineq), atol=1e-8)
    # no feasible grid point does better
    _, val = grid_argmin(quad(p), (-1, -1), (1, 1), 1e-3, feasible_on(p))
    assert res.objective <= val + 1e-12


@given(seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_qp_matches_grid_argument_on_boxes(seed):
    p = random_qp(seed, 0, boxed_only=True)
    lo, hi = -p.b_ineq[2:], p.b_ineq[:2]
    best, _ = grid_argmin(quad(p), lo, hi, 1e-3, feasible_on(p))
    assert np.max(np.abs(qp_solve(p).x - best)) <= 2e-3


@given(seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_qp_linear_objective_matches_linprog(seed):
    """With H = 0 the QP is an LP; compare optimal values with HiGHS."""
    rng = np.random.default_rng(seed)
    n, m = 4, 8
    A = rng.standard_normal((m, n))
    x_feas = rng.standard_normal(n)
    b = A @ x_feas + rng.uniform(0.1, 1.0, m)
    A = np.vstack([A, np.eye(n), -np.eye(n)])
    b = np.concatenate([b, np.full(n, 5.0) + np.abs(x_feas), np.full(n, 5.0) + np.abs(x_feas)])
    g = rng.standard_normal(n)
    res = qp_solve(QpProblem(np.zeros((n, n)), g, A, b))
    lp = linprog(g, A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    assert res.objective == pytest.approx(lp.fun, abs=1e-8)
    assert res.infeasibility <= 1e-9

"""Exact branch-flow (DistFlow) power flow for radial feeders.

The forward-backward sweep is written over a batch of DER setpoints so a
whole sampling grid is solved with a handful of matrix products per
iteration. With line ``k`` feeding bus ``k + 1``:

* backward:  ``P = D (P_d - p_g + r L)`` with ``D`` the subtree matrix,
* forward:   ``U_child = U_parent - 2 (r P + x Q) + (r^2 + x^2) L``,
* losses:    ``L = (P^2 + Q^2) / U_send``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

from .errors import NoConvergence
from .geometry import FlexPolygon, convex_hull
from .network import RadialNetwork
from .numerics import newton_2d

log = logging.getLogger(__name__)

Denominator = Literal["sending", "difference"]

SWEEP_TOL = 1e-10
SWEEP_MAX_ITER = 100
FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    U: np.ndarray
    P_l: np.ndarray
    Q_l: np.ndarray
    L: np.ndarray
    p_pcc: float
    q_pcc: float
    der: tuple[float, float]
    residual: float
    iterations: int

    @property
    def exchange(self) -> np.ndarray:
        return np.array([self.p_pcc, self.q_pcc])


class BatchFlow(NamedTuple):
    """Sweep results for ``k`` setpoints; arrays carry a leading batch axis."""

    U: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    L: np.ndarray
    p_pcc: np.ndarray
    q_pcc: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray


def _send_voltage(net: RadialNetwork, U: np.ndarray, denominator: Denominator) -> np.ndarray:
    if denominator == "sending":
        return U[:, net.from_bus]
    if denominator == "difference":
        return U[:, net.from_bus] - U[:, net.to_bus]
    raise ValueError(f"unknown denominator {denominator!r}")


def _evaluate(net: RadialNetwork, pg, qg, L, denominator):
    """One backward/forward pass for given squared currents."""
    D = net.subtree
    k = len(pg)
    inj_p = np.broadcast_to(net.demand_p, (k, net.n_bus)).copy()
    inj_q = np.broadcast_to(net.demand_q, (k, net.n_bus)).copy()
    inj_p[:, net.der.bus] -= pg
    inj_q[:, net.der.bus] -= qg
    P = (inj_p[:, 1:] + L * net.r) @ D.T
    Q = (inj_q[:, 1:] + L * net.x) @ D.T
    drop = 2.0 * (net.r * P + net.x * Q) - (net.r ** 2 + net.x ** 2) * L
    # U at bus k+1 = 1 - sum of drops on lines along the path: path matrix is D^T
    U = np.ones((k, net.n_bus))
    U[:, 1:] = 1.0 - drop @ D
    p_pcc = inj_p[:, 0] + P[:, net.from_bus == 0].sum(axis=1)
    q_pcc = inj_q[:, 0] + Q[:, net.from_bus == 0].sum(axis=1)
    return U, P, Q, p_pcc, q_pcc


def distflow_residual(net: RadialNetwork, pg, qg, U, P, Q, L, p_pcc, q_pcc,
                      denominator: Denominator = "sending") -> np.ndarray:
    """Max violation of the matrix-form DistFlow equations, per batch entry."""
    f, t = net.from_bus, net.to_bus
    k = len(pg)
    r, x = net.r, net.x
    res_root = np.abs(U[:, 0] - 1.0)
    res_v = np.abs(U[:, f] - U[:, t] - 2 * (r * P + x * Q) + (r ** 2 + x ** 2) * L).max(axis=1, initial=0)
    bal_p = np.zeros((k, net.n_bus))
    bal_q = np.zeros((k, net.n_bus))
    np.add.at(bal_p.T, f, P.T)
    np.add.at(bal_p.T, t, -P.T)
    np.add.at(bal_q.T, f, Q.T)
    np.add.at(bal_q.T, t, -Q.T)
    bal_p[:, 1:] += r * L
    bal_q[:, 1:] += x * L
    bal_p += net.demand_p
    bal_q += net.demand_q
    bal_p[:, 0] -= p_pcc
    bal_q[:, 0] -= q_pcc
    bal_p[:, net.der.bus] -= pg
    bal_q[:, net.der.bus] -= qg
    res_quad = np.abs(_send_voltage(net, U, denominator) * L - (P ** 2 + Q ** 2)).max(axis=1, initial=0)
    return np.max(np.column_stack([res_root, res_v, np.abs(bal_p).max(axis=1),
                                   np.abs(bal_q).max(axis=1), res_quad]), axis=1)


def sweep_batch(
    net: RadialNetwork,
    pg,
    qg,
    denominator: Denominator = "sending",
    tol: float = SWEEP_TOL,
    max_iter: int = SWEEP_MAX_ITER,
) -> BatchFlow:
    """Forward-backward sweep for every ``(pg[i], qg[i])`` at once."""
    pg = np.atleast_1d(np.asarray(pg, dtype=float))
    qg = np.atleast_1d(np.asarray(qg, dtype=float))
    pg, qg = np.broadcast_arrays(pg, qg)
    pg, qg = pg.ravel().copy(), qg.ravel().copy()
    k = len(pg)
    L = np.zeros((k, net.n_line))
    iterations = np.zeros(k, dtype=int)
    done = np.zeros(k, dtype=bool)
    failed = np.zeros(k, dtype=bool)
    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            U, P, Q, p_pcc, q_pcc = _evaluate(net, pg, qg, L, denominator)
            den = _send_voltage(net, U, denominator)
            L_new = (P ** 2 + Q ** 2) / den
            bad = ~np.all(np.isfinite(L_new), axis=1) | np.any(den <= 0, axis=1) | np.any(U <= 0, axis=1)
            change = np.max(np.abs(L_new - L), axis=1, initial=0.0)
            active = ~done & ~failed
            failed |= active & bad
            iterations[active] = it
            newly = active & ~bad & (change < tol)
            L = np.where((active & ~bad)[:, None], L_new, L)
            done |= newly
            if np.all(done | failed):
                break
        U, P, Q, p_pcc, q_pcc = _evaluate(net, pg, qg, L, denominator)
        residual = distflow_residual(net, pg, qg, U, P, Q, L, p_pcc, q_pcc, denominator)
    converged = done & ~failed & np.isfinite(residual)
    return BatchFlow(U, P, Q, L, p_pcc, q_pcc, converged, iterations, residual)


def sweep_solve(net: RadialNetwork, der=(0.0, 0.0), denominator: Denominator = "sending",
                tol: float = SWEEP_TOL, max_iter: int = SWEEP_MAX_ITER) -> PowerFlowSolution:
    """Exact power flow for one DER setpoint; raises :class:`NoConvergence`."""
    pg, qg = map(float, der)
    out = sweep_batch(net, [pg], [qg], denominator, tol, max_iter)
    if not out.converged[0]:
        raise NoConvergence(
            f"sweep did not converge at der=({pg:.6g}, {qg:.6g})",
            best=(out.p_pcc[0], out.q_pcc[0]), residual=float(out.residual[0]),
            iterations=int(out.iterations[0]))
    return PowerFlowSolution(
        U=out.U[0], P_l=out.P[0], Q_l=out.Q[0], L=out.L[0],
        p_pcc=float(out.p_pcc[0]), q_pcc=float(out.q_pcc[0]), der=(pg, qg),
        residual=float(out.residual[0]), iterations=int(out.iterations[0]))


def conservation_residual(net: RadialNetwork, sol: PowerFlowSolution) -> tuple[float, float]:
    """Feeder-level active and reactive balance including line losses."""
    pd, qd = net.total_demand
    rp = sol.p_pcc + sol.der[0] - pd - float(net.r @ sol.L)
    rq = sol.q_pcc + sol.der[1] - qd - float(net.x @ sol.L)
    return rp, rq


class Violation(NamedTuple):
    tag: str
    where: object
    magnitude: float


VIOLATION_TAGS = ("voltage-low", "voltage-high", "pcc-p", "pcc-q", "der-p", "der-q", "unreachable")


def _bound_violations(net: RadialNetwork, U, p_pcc, q_pcc, pg, qg, tol):
    """Vectorized bound checks; returns a dict of tag -> (k, m) magnitude arrays."""
    d = net.der
    over = lambda v, lo, hi: np.maximum(np.maximum(lo - v, v - hi), 0.0)
    return {
        "voltage-low": np.maximum(net.u_min - U, 0.0),
        "voltage-high": np.maximum(U - net.u_max, 0.0),
        "pcc-p": over(p_pcc, *net.pcc_p_bounds)[:, None],
        "pcc-q": over(q_pcc, *net.pcc_q_bounds)[:, None],
        "der-p": over(pg, d.p_min, d.p_max)[:, None],
        "der-q": over(qg, d.q_min, d.q_max)[:, None],
    }


def check_feasible(sol: PowerFlowSolution, net: RadialNetwork, tol: float = FEAS_TOL) -> list[Violation]:
    """Every bound violated by more than ``tol``; empty means feasible."""
    viol = _bound_violations(net, sol.U[None, :], np.array([sol.p_pcc]), np.array([sol.q_pcc]),
                             np.array([sol.der[0]]), np.array([sol.der[1]]), tol)
    out = []
    for tag, mag in viol.items():
        for j in np.flatnonzero(mag[0] > tol):
            where = net.bus_ids[j].item() if tag.startswith("voltage") else tag.split("-")[0]
            out.append(Violation(tag, where, float(mag[0, j])))
    return out


@dataclass(frozen=True, eq=False)
class ExactFlexCloud:
    der: np.ndarray          # (k, 2) setpoints
    exchange: np.ndarray     # (k, 2) PCC exchange, nan where not converged
    feasible: np.ndarray
    converged: np.ndarray
    tags: tuple[tuple[str, ...], ...]
    iterations: np.ndarray
    residual: np.ndarray
    grid_shape: tuple[int, int]
    hull: FlexPolygon = field(repr=False)

    def __len__(self) -> int:
        return len(self.der)

    @property
    def feasible_points(self) -> np.ndarray:
        return self.exchange[self.feasible]


def _grid(net: RadialNetwork, resolution: int) -> np.ndarray:
    d = net.der
    ps = np.unique(np.linspace(d.p_min, d.p_max, resolution))
    qs = np.unique(np.linspace(d.q_min, d.q_max, resolution))
    pp, qq = np.meshgrid(ps, qs, indexing="ij")
    return np.column_stack([pp.ravel(), qq.ravel()]), (len(ps), len(qs))


def exact_flex_cloud(
    net: RadialNetwork,
    resolution: int = 101,
    denominator: Denominator = "sending",
    workers: int = 1,
    chunk: int = 4096,
    tol: float = FEAS_TOL,
) -> ExactFlexCloud:
    """Solve the exact power flow on a DER grid and classify every sample.

    Chunks may be solved on ``workers`` threads; results are assembled in
    grid order regardless of completion order.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    der, shape = _grid(net, resolution)
    pieces = [der[i:i + chunk] for i in range(0, len(der), chunk)]
    solve = lambda blk: sweep_batch(net, blk[:, 0], blk[:, 1], denominator)
    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, pieces))
    else:
        results = [solve(p) for p in pieces]
    U = np.vstack([r.U for r in results])
    p_pcc = np.concatenate([r.p_pcc for r in results])
    q_pcc = np.concatenate([r.q_pcc for r in results])
    converged = np.concatenate([r.converged for r in results])
    iterations = np.concatenate([r.iterations for r in results])
    residual = np.concatenate([r.residual for r in results])

    viol = _bound_violations(net, U, p_pcc, q_pcc, der[:, 0], der[:, 1], tol)
    tag_names = list(viol)
    flags = np.column_stack([np.any(viol[t] > tol, axis=1) for t in tag_names])
    tags = tuple(
        ("no-convergence",) if not converged[i] else tuple(t for t, f in zip(tag_names, flags[i]) if f)
        for i in range(len(der)))
    feasible = converged & ~flags.any(axis=1)
    exchange = np.column_stack([p_pcc, q_pcc])
    exchange[~converged] = np.nan
    hull = convex_hull(exchange[feasible]) if feasible.any() else FlexPolygon.empty()
    return ExactFlexCloud(der=der, exchange=exchange, feasible=feasible, converged=converged,
                          tags=tags, iterations=iterations, residual=residual, grid_shape=shape,
                          hull=hull)


def exchange_map(net: RadialNetwork, denominator: Denominator = "sending"):
    """``der -> exchange`` through the exact power flow; nan when it fails."""

    def f(der):
        out = sweep_batch(net, [der[0]], [der[1]], denominator)
        if not out.converged[0]:
            return np.array([np.nan, np.nan])
        return np.array([out.p_pcc[0], out.q_pcc[0]])

    return f


def invert_pcc(net: RadialNetwork, target, denominator: Denominator = "sending",
               tol: float = 1e-10) -> tuple[np.ndarray, PowerFlowSolution]:
    """DER setpoint whose exact power flow delivers ``target`` at the PCC.

    Newton starts from the lossless guess ``total demand - target``; when
    the sweep fails there (heavy absorption near voltage collapse), the
    guess is pulled toward zero injection. Raises :class:`NoConvergence`
    (with the best setpoint) when the target is unreachable.
    """
    target = np.asarray(target, dtype=float)
    f = exchange_map(net, denominator)
    guess = np.array(net.total_demand) - target
    best: NoConvergence | None = None
    for shrink in (1.0, 0.75, 0.5, 0.25, 0.0):
        try:
            der = newton_2d(lambda d: f(d) - target, shrink * guess, tol=tol)
        except NoConvergence as exc:
            if best is None or exc.residual < best.residual:
                best = exc
            continue
        return der, sweep_solve(net, der, denominator)
    raise best


def exact_jacobian(net: RadialNetwork, der, step: float = 1e-6,
                   denominator: Denominator = "sending") -> dict[str, np.ndarray]:
    """Values and central-difference Jacobians of exchange and voltages w.r.t. the DER setpoint."""
    d = np.asarray(der, dtype=float)
    pts = np.array([d, d + [step, 0], d - [step, 0], d + [0, step], d - [0, step]])
    out = sweep_batch(net, pts[:, 0], pts[:, 1], denominator)
    if not out.converged.all():
        raise NoConvergence(f"sweep failed near der={d}", best=d)
    ex = np.column_stack([out.p_pcc, out.q_pcc])
    jac_ex = np.column_stack([(ex[1] - ex[2]), (ex[3] - ex[4])]) / (2 * step)
    jac_u = np.column_stack([(out.U[1] - out.U[2]), (out.U[3] - out.U[4])]) / (2 * step)
    return {"exchange": ex[0], "J_exchange": jac_ex, "U": out.U[0], "J_U": jac_u}

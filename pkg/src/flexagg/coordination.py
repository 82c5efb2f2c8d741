"""TSO-DSO dispatch with aggregated feeder flexibility.

Transmission is modeled with DC power flow (PTDF form). Each feeder enters
the transmission QP through its exchange ``u_f`` (MW / MVAr):

* ``lds``: ``u_f`` constrained to the lossless polygon, delivered as is;
* ``slc``: same polygon, delivered as ``u_f + loss(u_f)`` with the losses
  frozen per fixed-point iteration and injected as extra demand;
* ``reference``: DER setpoints are the decision variables and the exact
  power flow is linearized around the iterate (sequential QP) until the
  setpoints stop moving, so the optimum is exactly feasible.

Each run is post-verified per feeder by recovering the DER setpoint from
the delivered exchange with the exact power flow.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog

from .distflow import (Denominator, Violation, check_feasible, exact_jacobian, invert_pcc,
                       sweep_batch)
from .errors import EmptyRegion, FixedPointStall, Infeasible, NoConvergence
from .geometry import Box, FlexPolygon
from .lindistflow import LinDistFlow, flexibility_polygon
from .losses import QuadLossMap, compensate, loss_map_for
from .matpower import REF, RawCase, tutorial_network
from .network import RadialNetwork
from .numerics import QpProblem, lu_solve, qp_solve

log = logging.getLogger(__name__)

Method = Literal["reference", "lds", "slc"]
METHODS: tuple[Method, ...] = ("reference", "lds", "slc")

FIXED_POINT_TOL = 1e-8
FIXED_POINT_MAX_ITER = 20
SQP_TOL = 1e-8
SQP_MAX_ITER = 60
VERIFY_TOL = 1e-3


class Cost(NamedTuple):
    """Quadratic generation cost ``c2 p^2 + c1 p + c0`` with ``p`` in MW."""

    c2: float
    c1: float
    c0: float = 0.0

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        return self.c2 * p ** 2 + self.c1 * p + self.c0


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    cost: Cost


@dataclass(frozen=True)
class DcLine:
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float  # MW; 0 means unlimited


@dataclass(frozen=True, eq=False)
class TsoModel:
    """DC transmission grid in MW with feeders attached at ``attachments``."""

    bus_ids: tuple[int, ...]
    ref: int
    lines: tuple[DcLine, ...]
    generators: tuple[Generator, ...]
    demand: np.ndarray
    attachments: tuple[int, ...] = ()
    q_price: float = 0.1

    def __post_init__(self):
        n = len(self.bus_ids)
        for a in self.attachments:
            if not 0 <= a < n:
                raise ValueError(f"attachment bus index {a} out of range")
        for g in self.generators:
            if g.cost.c2 < 0:
                raise ValueError("generator costs must be convex (c2 >= 0)")

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    def ptdf(self) -> np.ndarray:
        """Line flows per unit bus injection, with the reference bus as slack."""
        nb, nl = self.n_bus, len(self.lines)
        if nl == 0:
            return np.zeros((0, nb))
        inc = np.zeros((nl, nb))
        b = np.array([ln.susceptance for ln in self.lines])
        for k, ln in enumerate(self.lines):
            inc[k, ln.from_bus] = 1.0
            inc[k, ln.to_bus] = -1.0
        bbus = inc.T @ (b[:, None] * inc)
        keep = [i for i in range(nb) if i != self.ref]
        theta = np.zeros((nb, nb))
        theta[np.ix_(keep, keep)], _ = lu_solve(bbus[np.ix_(keep, keep)], np.eye(nb - 1))
        return (b[:, None] * inc) @ theta


def single_bus_tso(cost: Cost, p_max: float = 1e4, q_price: float = 0.1) -> TsoModel:
    """One aggregate generator feeding one feeder, no transmission network."""
    return TsoModel(bus_ids=(1,), ref=0, lines=(), generators=(Generator(0, -p_max, p_max, cost),),
                    demand=np.zeros(1), attachments=(0,), q_price=q_price)


class Attachment(NamedTuple):
    bus_id: int
    pd: float
    feeder: str


def attach_feeders(case: RawCase, thresholds: tuple[float, float] = (5.0, 15.0),
                   feeders: tuple[str, str, str] = ("case33mg", "case10ba", "case118zh"),
                   include_zero_load: bool = True) -> list[Attachment]:
    """Assign a feeder type to every non-reference transmission bus by its demand.

    ``Pd > high`` gets ``feeders[2]``, ``low <= Pd <= high`` ``feeders[1]``,
    anything smaller ``feeders[0]``. Zero-load buses are skipped when
    ``include_zero_load`` is false.
    """
    low, high = thresholds
    out = []
    for b in sorted(case.bus_rows, key=lambda r: r.bus_id):
        if b.type_code == REF or (b.pd <= 0 and not include_zero_load):
            continue
        kind = feeders[2] if b.pd > high else feeders[1] if b.pd >= low else feeders[0]
        out.append(Attachment(b.bus_id, b.pd, kind))
    return out


def tso_from_case(case: RawCase, attachments: Sequence[Attachment] = (), replace_load: bool = True,
                  line_limit_scale: float = 1.0, q_price: float = 0.1) -> TsoModel:
    """DC model of a transmission case; attached feeders replace the bus load when asked."""
    ids = tuple(b.bus_id for b in case.bus_rows)
    pos = {b: i for i, b in enumerate(ids)}
    refs = [pos[b.bus_id] for b in case.bus_rows if b.type_code == REF]
    if len(refs) != 1:
        raise ValueError("transmission case needs exactly one reference bus")
    demand = np.array([b.pd for b in case.bus_rows], dtype=float)
    if replace_load:
        for a in attachments:
            demand[pos[a.bus_id]] = 0.0
    lines = tuple(DcLine(pos[br.from_bus], pos[br.to_bus], 1.0 / br.x, br.rate_a * line_limit_scale)
                  for br in case.branch_rows if br.status != 0)
    gens = tuple(Generator(pos[g.bus_id], g.pmin, g.pmax, Cost(c.c2, c.c1, c.c0))
                 for g, c in zip(case.gen_rows, case.gencost_rows))
    return TsoModel(bus_ids=ids, ref=refs[0], lines=lines, generators=gens, demand=demand,
                    attachments=tuple(pos[a.bus_id] for a in attachments), q_price=q_price)


@dataclass(eq=False)
class Feeder:
    """A feeder as the TSO sees it: polygon and loss map, plus the private network."""

    name: str
    net: RadialNetwork
    polygon: FlexPolygon
    loss_map: QuadLossMap
    lin: LinDistFlow = field(repr=False)
    denominator: Denominator = "sending"

    @property
    def base(self) -> float:
        return self.net.base_mva

    @property
    def cost(self) -> Cost:
        return Cost(*self.net.der.cost)

    @property
    def demand_mw(self) -> np.ndarray:
        return np.array(self.net.total_demand) * self.base


def prepare_feeder(net: RadialNetwork, name: str | None = None, denominator: Denominator = "sending",
                   voltage_source: str = "distflow", seed_box: Box | None = None) -> Feeder:
    lin = LinDistFlow(net)
    poly = lin.polygon if seed_box is None else flexibility_polygon(lin.model, net, seed_box)
    if poly.is_empty:
        raise EmptyRegion(f"{net.name}: lossless flexibility set is empty")
    return Feeder(name or net.name, net, poly, loss_map_for(net, voltage_source, denominator),
                  lin, denominator)


@dataclass(eq=False)
class DispatchResult:
    method: str
    feeders: list[str]
    exchanges: np.ndarray        # delivered (p, q) per feeder, MW / MVAr
    planned_der: np.ndarray      # DER setpoints the method itself assumed, p.u.
    der_setpoints: np.ndarray    # recovered by post-verification, p.u.
    feeder_costs: np.ndarray     # DER cost at the recovered setpoint, $/h
    generation: np.ndarray       # transmission generator outputs, MW
    cost_total: float
    violations: list[list[Violation]]
    iterations: int = 0
    cost_gap: np.ndarray | None = None
    objective: float = float("nan")

    def violation_counts(self, tol: float = VERIFY_TOL) -> Counter:
        return Counter(v.tag for vs in self.violations for v in vs if v.magnitude > tol)

    def max_violation(self) -> np.ndarray:
        return np.array([max((v.magnitude for v in vs), default=0.0) for vs in self.violations])


# --------------------------------------------------------------------------- QP assembly

class _Layout(NamedTuple):
    ng: int
    nf: int

    @property
    def n(self) -> int:
        return self.ng + 2 * self.nf

    def p(self, f: int) -> int:
        return self.ng + 2 * f

    def q(self, f: int) -> int:
        return self.ng + 2 * f + 1


class _Rows:
    """Inequality rows ``A z <= b`` with labels and right-hand-side sensitivity to bus demand."""

    def __init__(self, n: int, n_bus: int):
        self.n, self.n_bus = n, n_bus
        self.A: list[np.ndarray] = []
        self.b: list[float] = []
        self.S: list[np.ndarray] = []
        self.labels: list[str] = []

    def add(self, row, rhs: float, label: str, sens=None):
        self.A.append(np.asarray(row, dtype=float))
        self.b.append(float(rhs))
        self.S.append(np.zeros(self.n_bus) if sens is None else np.asarray(sens, dtype=float))
        self.labels.append(label)

    def add_block(self, rows: np.ndarray, rhs: np.ndarray, labels: Sequence[str]):
        for r, v, lab in zip(rows, rhs, labels):
            self.add(r, v, lab)

    def arrays(self):
        return (np.array(self.A).reshape(-1, self.n), np.array(self.b),
                np.array(self.S).reshape(-1, self.n_bus))


def _transmission_rows(tso: TsoModel, lay: _Layout, ex_lin: np.ndarray, ex_const: np.ndarray,
                       rows: _Rows):
    """Balance row and line / generator limits appended to ``rows``.

    Feeder withdrawals are ``ex_const[f] + ex_lin[f] @ z[feeder vars]`` (active part).
    Right-hand-side sensitivities to bus demand give nodal prices as ``-lam' S``.
    """
    n = lay.n
    # bus injection = Cg Pg - withdrawals - demand, as affine map inj = M z + m
    M = np.zeros((tso.n_bus, n))
    m = -tso.demand.astype(float).copy()
    for k, g in enumerate(tso.generators):
        M[g.bus, k] += 1.0
    for f, bus in enumerate(tso.attachments):
        M[bus, lay.p(f):lay.p(f) + 2] -= ex_lin[f]
        m[bus] -= ex_const[f]
    A_eq = M.sum(axis=0, keepdims=True)
    b_eq = np.array([-m.sum()])
    S_eq = np.ones((1, tso.n_bus))
    if tso.lines:
        ptdf = tso.ptdf()
        F, f0 = ptdf @ M, ptdf @ m
        for k, ln in enumerate(tso.lines):
            if ln.limit <= 0:
                continue
            name = f"line {tso.bus_ids[ln.from_bus]}-{tso.bus_ids[ln.to_bus]}"
            rows.add(F[k], ln.limit - f0[k], f"{name}:forward", ptdf[k])
            rows.add(-F[k], ln.limit + f0[k], f"{name}:reverse", -ptdf[k])
    for k, g in enumerate(tso.generators):
        e = np.zeros(n)
        e[k] = 1.0
        where = f"gen{k}@{tso.bus_ids[g.bus]}"
        if np.isfinite(g.p_max):
            rows.add(e, g.p_max, f"{where}:upper")
        if np.isfinite(g.p_min):
            rows.add(-e, -g.p_min, f"{where}:lower")
    return A_eq, b_eq, S_eq


def _nodal_prices(res, S_eq: np.ndarray, S_in: np.ndarray) -> np.ndarray:
    """Marginal cost of demand per bus from the QP multipliers."""
    return -(res.lam_eq @ S_eq + res.lam_ineq @ S_in)


def _conflicting(A: np.ndarray, b: np.ndarray, A_eq: np.ndarray, b_eq: np.ndarray,
                 labels: Sequence[str]) -> list[str]:
    """Labels of the inequality rows an elastic LP must relax to become feasible."""
    m, n = A.shape
    cost = np.concatenate([np.zeros(n), np.ones(m)])
    res = linprog(cost, A_ub=np.hstack([A, -np.eye(m)]), b_ub=b,
                  A_eq=np.hstack([A_eq, np.zeros((len(b_eq), m))]), b_eq=b_eq,
                  bounds=[(None, None)] * n + [(0, None)] * m, method="highs")
    if not res.success:
        return ["balance"]
    return [labels[i] for i in np.flatnonzero(res.x[n:] > 1e-9)]


def _solve(H, g, rows: _Rows, A_eq, b_eq):
    A, b, S = rows.arrays()
    try:
        return qp_solve(QpProblem(H, g, A, b, A_eq, b_eq)), S
    except Infeasible as exc:
        bad = _conflicting(A, b, A_eq, b_eq, rows.labels)
        raise Infeasible(f"dispatch infeasible; conflicting constraints: {', '.join(bad)}",
                         constraints=bad) from exc


def _generator_cost_terms(tso: TsoModel, lay: _Layout, H: np.ndarray, g: np.ndarray) -> float:
    const = 0.0
    for k, gen in enumerate(tso.generators):
        H[k, k] += 2.0 * gen.cost.c2
        g[k] += gen.cost.c1
        const += gen.cost.c0
    return const


def _solve_lossless_qp(tso: TsoModel, feeders: Sequence[Feeder], lin: np.ndarray, const_ex: np.ndarray,
                       curvature: np.ndarray | None = None, center: np.ndarray | None = None):
    """Transmission QP over ``u_f`` in the lossless polygons (MW).

    Delivered exchange is the affine map ``lin[f] @ u_f + const_ex[f]``;
    ``curvature[f]`` (2x2) adds ``1/2 (u_f - center[f])' W (u_f - center[f])``
    to the objective.
    Returns the QP result, the exchanges, the objective and nodal prices.
    """
    lay = _Layout(len(tso.generators), len(feeders))
    n = lay.n
    H = np.zeros((n, n))
    g = np.zeros(n)
    const = _generator_cost_terms(tso, lay, H, g)
    for f, fd in enumerate(feeders):
        c = fd.cost
        dp = fd.demand_mw[0]
        # DER output under the lossless model: pg = demand - p
        H[lay.p(f), lay.p(f)] += 2.0 * c.c2
        g[lay.p(f)] += -(2.0 * c.c2 * dp + c.c1)
        const += c(dp)
        g[lay.p(f):lay.q(f) + 1] += tso.q_price * lin[f, 1]
        const += tso.q_price * const_ex[f, 1]
        if curvature is not None:
            W, c0 = curvature[f], center[f]
            H[lay.p(f):lay.q(f) + 1, lay.p(f):lay.q(f) + 1] += W
            g[lay.p(f):lay.q(f) + 1] -= W @ c0
            const += 0.5 * c0 @ W @ c0
    rows = _Rows(n, tso.n_bus)
    A_eq, b_eq, S_eq = _transmission_rows(tso, lay, lin[:, 0], const_ex[:, 0], rows)
    for f, fd in enumerate(feeders):
        for k, hs in enumerate(fd.polygon.halfspaces()):
            row = np.zeros(n)
            row[lay.p(f):lay.p(f) + 2] = np.asarray(hs.normal) / fd.base
            rows.add(row, hs.offset, f"{fd.name}:polygon-edge{k}")
    res, S = _solve(H, g, rows, A_eq, b_eq)
    u = res.x[lay.ng:].reshape(-1, 2)
    return res, u, res.objective + const, _nodal_prices(res, S_eq, S)


def _verify(feeders: Sequence[Feeder], exchanges_mw: np.ndarray):
    ders, costs, viols = [], [], []
    for fd, ex in zip(feeders, exchanges_mw):
        target = np.asarray(ex) / fd.base
        try:
            der, sol = invert_pcc(fd.net, target, fd.denominator)
        except NoConvergence as exc:
            best = np.asarray(exc.best if exc.best is not None else [np.nan, np.nan], dtype=float)
            ders.append(best)
            costs.append(float(fd.cost(best[0] * fd.base)))
            viols.append([Violation("unreachable", "pcc", float(exc.residual))])
            continue
        ders.append(der)
        costs.append(float(fd.cost(der[0] * fd.base)))
        viols.append(check_feasible(sol, fd.net))
    return np.array(ders).reshape(-1, 2), np.array(costs), viols


def post_verify(feeders: Sequence[Feeder], exchanges_mw) -> tuple[np.ndarray, np.ndarray, list[list[Violation]]]:
    """Recover DER setpoints from fixed PCC exchanges; returns (setpoints p.u., DER costs, violations)."""
    return _verify(feeders, np.asarray(exchanges_mw, dtype=float).reshape(-1, 2))


def _finish(method, tso, feeders, exchanges, planned, generation, iterations, objective) -> DispatchResult:
    ders, costs, viols = _verify(feeders, exchanges)
    gen_cost = sum(float(g.cost(p)) for g, p in zip(tso.generators, generation))
    return DispatchResult(method=method, feeders=[f.name for f in feeders], exchanges=exchanges,
                          planned_der=planned, der_setpoints=ders, feeder_costs=costs,
                          generation=generation, cost_total=gen_cost + float(costs.sum()),
                          violations=viols, iterations=iterations, objective=objective)


def _loss_fixed_point(tso, feeders, loss_map_of, method, tol, max_iter):
    """Repeat the transmission QP with each feeder's loss map linearized at the last iterate.

    With ``loss_map_of`` None the delivered exchange is ``u`` itself (one pass).
    """
    nf = len(feeders)
    lin = np.tile(np.eye(2), (nf, 1, 1))
    const_ex = np.zeros((nf, 2))
    res, u, obj, prices = _solve_lossless_qp(tso, feeders, lin, const_ex)
    delivered = u.copy()
    it = 1
    if loss_map_of is not None:
        gap = np.inf
        for it in range(2, max_iter + 2):
            # sequential QP: losses linearized in the constraints, their
            # curvature weighted by the nodal price in the objective
            curv = np.zeros((nf, 2, 2))
            for f, (fd, bus) in enumerate(zip(feeders, tso.attachments)):
                lm = loss_map_of(fd)
                up = u[f] / fd.base
                lin[f] = lm.jacobian(up)
                const_ex[f] = fd.base * (compensate(lm, up) - lin[f] @ up)
                curv[f] = (max(prices[bus], 0.0) * lm.H_p + tso.q_price * lm.H_q) / fd.base
            res, u, obj, prices = _solve_lossless_qp(tso, feeders, lin, const_ex, curv, u)
            new = np.array([fd.base * compensate(loss_map_of(fd), ui / fd.base) for fd, ui in zip(feeders, u)])
            gap = float(np.max(np.abs(new - delivered)))
            delivered = new
            if gap < tol:
                break
        else:
            raise FixedPointStall(f"{method}: exchange still moving by {gap:.3e} MW after {max_iter} passes",
                                  gap=gap)
    planned = np.array([fd.lin.der_at(ui / fd.base) for fd, ui in zip(feeders, u)]).reshape(-1, 2)
    return delivered, planned, res.x[: len(tso.generators)], it, obj


def _slc_maps(fd: Feeder) -> QuadLossMap:
    return fd.loss_map


# --------------------------------------------------------------------------- exact reference

def _reference_sqp(tso: TsoModel, feeders: Sequence[Feeder], der0: np.ndarray,
                   tol: float = SQP_TOL, max_iter: int = SQP_MAX_ITER):
    """Sequential QP on DER setpoints with the exact power flow linearized each pass.

    The loss-map Hessians, weighted by the last nodal prices, stand in for
    the curvature of the exact exchange.
    """
    lay = _Layout(len(tso.generators), len(feeders))
    n = lay.n
    der = np.array(der0, dtype=float).reshape(-1, 2)
    prices = np.zeros(tso.n_bus)
    res = None
    radius = np.array([max(fd.net.der.p_max - fd.net.der.p_min, fd.net.der.q_max - fd.net.der.q_min, 1e-6)
                       for fd in feeders]) * 0.25
    last_step = np.zeros_like(der)
    for it in range(1, max_iter + 1):
        lin = [exact_jacobian(fd.net, d, denominator=fd.denominator) for fd, d in zip(feeders, der)]
        H = np.zeros((n, n))
        g = np.zeros(n)
        const = _generator_cost_terms(tso, lay, H, g)
        ex_lin = np.zeros((len(feeders), 2))
        ex_const = np.zeros(len(feeders))
        rows = _Rows(n, tso.n_bus)
        for f, (fd, d, L) in enumerate(zip(feeders, der, lin)):
            s = fd.base
            ip, iq = lay.p(f), lay.q(f)
            c = fd.cost
            # DER cost in MW around the current setpoint; z holds the step in p.u.
            pg_mw = d[0] * s
            H[ip, ip] += 2.0 * c.c2 * s * s
            g[ip] += (2.0 * c.c2 * pg_mw + c.c1) * s
            const += c(pg_mw)
            # exchange (MW) = s * (ex + J dz)
            ex_lin[f] = s * L["J_exchange"][0]
            ex_const[f] = s * L["exchange"][0]
            g[ip:iq + 1] += tso.q_price * s * L["J_exchange"][1]
            const += tso.q_price * s * L["exchange"][1]
            lm = fd.loss_map
            H[ip:iq + 1, ip:iq + 1] += s * (max(prices[tso.attachments[f]], 0.0) * lm.H_p + tso.q_price * lm.H_q)
            net = fd.net
            dd = net.der
            for k, (lo, hi) in enumerate(((dd.p_min, dd.p_max), (dd.q_min, dd.q_max))):
                e = np.zeros(n)
                e[ip + k] = 1.0
                tag = f"{fd.name}:der-{'pq'[k]}"
                rows.add(e, min(hi - d[k], radius[f]), f"{tag}:upper")
                rows.add(-e, min(d[k] - lo, radius[f]), f"{tag}:lower")
            # bus voltages and PCC exchange, linearized
            JU, U0 = L["J_U"], L["U"]
            live = np.flatnonzero(np.max(np.abs(JU), axis=1) >= 1e-14)
            block = np.zeros((len(live), n))
            block[:, ip:iq + 1] = JU[live]
            ids = net.bus_ids[live]
            rows.add_block(block, net.u_max[live] - U0[live], [f"{fd.name}:voltage@{i}:upper" for i in ids])
            rows.add_block(-block, U0[live] - net.u_min[live], [f"{fd.name}:voltage@{i}:lower" for i in ids])
            for k, (lo, hi) in enumerate((net.pcc_p_bounds, net.pcc_q_bounds)):
                row = np.zeros(n)
                row[ip:iq + 1] = L["J_exchange"][k]
                tag = f"{fd.name}:pcc-{'pq'[k]}"
                rows.add(row, hi - L["exchange"][k], f"{tag}:upper")
                rows.add(-row, L["exchange"][k] - lo, f"{tag}:lower")
        A_eq, b_eq, S_eq = _transmission_rows(tso, lay, ex_lin, ex_const, rows)
        try:
            res, S_all = _solve(H, g, rows, A_eq, b_eq)
        except Infeasible:
            if np.all(radius > 1.0):
                raise
            radius *= 4.0
            continue
        prices = _nodal_prices(res, S_eq, S_all)
        step = res.x[lay.ng:].reshape(-1, 2)
        # shrink the trust region where the step flips direction at its edge
        at_edge = np.max(np.abs(step), axis=1) >= radius * (1 - 1e-9)
        flipped = np.sum(step * last_step, axis=1) < 0
        radius = np.where(at_edge & flipped, radius * 0.5, radius)
        der = der + step
        last_step = step
        if np.max(np.abs(step)) < tol:
            break
    else:
        log.warning("reference SQP stopped after %d iterations (last step %.2e)",
                    max_iter, np.max(np.abs(last_step)))
    if res is None:
        raise Infeasible("reference dispatch found no feasible linearization")
    out = sweep_batch_many(feeders, der)
    exchanges = np.array([fd.base * e for fd, e in zip(feeders, out)])
    return exchanges, der, res.x[: lay.ng], it, res.objective + const


def sweep_batch_many(feeders: Sequence[Feeder], der: np.ndarray) -> np.ndarray:
    """Exact exchange (p.u.) for one setpoint per feeder."""
    out = []
    for fd, d in zip(feeders, der):
        bf = sweep_batch(fd.net, [d[0]], [d[1]], fd.denominator)
        if not bf.converged[0]:
            raise NoConvergence(f"{fd.name}: power flow failed at der={d}", best=d)
        out.append([bf.p_pcc[0], bf.q_pcc[0]])
    return np.array(out)


# --------------------------------------------------------------------------- public API

def coordinate(tso: TsoModel, feeders: Sequence[Feeder], method: Method,
               tol: float = FIXED_POINT_TOL, max_iter: int = FIXED_POINT_MAX_ITER,
               der0: np.ndarray | None = None) -> DispatchResult:
    """Dispatch the transmission grid with every feeder represented per ``method``."""
    if len(feeders) != len(tso.attachments):
        raise ValueError(f"{len(feeders)} feeders for {len(tso.attachments)} attachments")
    if method == "lds":
        ex, planned, gen, it, obj = _loss_fixed_point(tso, feeders, None, method, tol, max_iter)
    elif method == "slc":
        ex, planned, gen, it, obj = _loss_fixed_point(tso, feeders, _slc_maps, method, tol, max_iter)
    elif method == "reference":
        if der0 is None:
            _, der0, _, _, _ = _loss_fixed_point(tso, feeders, _slc_maps, "slc", tol, max_iter)
        ex, planned, gen, it, obj = _reference_sqp(tso, feeders, der0)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _finish(method, tso, feeders, ex, planned, gen, it, obj)


def cost_gaps(result: DispatchResult, reference: DispatchResult) -> np.ndarray:
    """Per-feeder relative cost gap ``|f - f*| / |f*|``; stored on ``result``."""
    ref = reference.feeder_costs
    gap = np.abs(result.feeder_costs - ref) / np.maximum(np.abs(ref), 1e-12)
    result.cost_gap = gap
    return gap


def default_price_multipliers(n: int = 7, span: float = 2.0) -> np.ndarray:
    """``n`` log-spaced multipliers from ``1/span`` to ``span``."""
    return np.geomspace(1.0 / span, span, n)


def sweep_tso_cost(net: RadialNetwork, marginal: float = 20.0) -> Cost:
    """Aggregate TSO cost whose marginal price equals ``marginal`` at the nominal import
    and doubles from half of it across one nominal-demand of extra import."""
    pd_mw = max(net.total_demand[0] * net.base_mva, 1e-6)
    return Cost(c2=marginal / (4.0 * pd_mw), c1=marginal / 2.0, c0=0.0)


def sweep_prices(net: RadialNetwork, tso_cost: Cost, multipliers=None) -> np.ndarray:
    """DER prices as multiples of the TSO marginal price at the nominal import."""
    lam = tso_cost.c1 + 2 * tso_cost.c2 * net.total_demand[0] * net.base_mva
    mult = default_price_multipliers() if multipliers is None else np.asarray(multipliers, dtype=float)
    return lam * mult


def run_price_sweep(net: RadialNetwork, multipliers=None, methods: Sequence[Method] = METHODS,
                    cloud=None, denominator: Denominator = "sending",
                    seed_box: Box | None = None) -> dict[str, list[DispatchResult]]:
    """Price sweep for each method, with cost gaps against the reference when it runs."""
    tso_cost = sweep_tso_cost(net)
    prices = sweep_prices(net, tso_cost, multipliers)
    fd = prepare_feeder(net, denominator=denominator, seed_box=seed_box)
    out = {m: price_sweep_dispatch(net, tso_cost, prices, m, feeder=fd, cloud=cloud) for m in methods}
    if "reference" in out:
        for results in out.values():
            for r, ref in zip(results, out["reference"]):
                cost_gaps(r, ref)
    return out


def price_sweep_dispatch(
    net: RadialNetwork,
    tso_cost: Cost | None = None,
    der_prices: Iterable[float] | None = None,
    method: Method = "slc",
    q_price: float = 0.1,
    feeder: Feeder | None = None,
    cloud=None,
) -> list[DispatchResult]:
    """Single-feeder dispatch for each DER linear price (``$/MWh``).

    The TSO is one aggregate generator with ``tso_cost``; the DER cost is
    ``price * p_g``. For ``method='reference'`` the exact cloud, when given,
    seeds the sequential QP with its cheapest feasible sample.
    """
    tso_cost = tso_cost or sweep_tso_cost(net)
    if der_prices is None:
        der_prices = sweep_prices(net, tso_cost)
    tso = single_bus_tso(tso_cost, q_price=q_price)
    base_feeder = feeder or prepare_feeder(net)
    results = []
    for price in der_prices:
        fd = replace(base_feeder, net=base_feeder.net.with_der(cost=(0.0, float(price), 0.0)))
        der0 = None
        if method == "reference" and cloud is not None and cloud.feasible.any():
            s = net.base_mva
            pts = cloud.exchange[cloud.feasible] * s
            ders = cloud.der[cloud.feasible]
            obj = tso_cost(pts[:, 0]) + price * ders[:, 0] * s + q_price * pts[:, 1]
            der0 = ders[int(np.argmin(obj))][None, :]
        results.append(coordinate(tso, [fd], method, der0=der0))
    return results


def system_price(tso: TsoModel, feeders: Sequence[Feeder]) -> float:
    """Demand-weighted nodal price with every feeder drawing its nominal demand."""
    nf = len(feeders)
    lay = _Layout(len(tso.generators), 0)
    H = np.zeros((lay.n, lay.n))
    g = np.zeros(lay.n)
    _generator_cost_terms(tso, lay, H, g)
    fixed = replace(tso, attachments=(), demand=tso.demand.astype(float).copy())
    for fd, bus in zip(feeders, tso.attachments):
        fixed.demand[bus] += fd.demand_mw[0]
    rows = _Rows(lay.n, tso.n_bus)
    A_eq, b_eq, S_eq = _transmission_rows(fixed, lay, np.zeros((0, 2)), np.zeros(0), rows)
    res, S = _solve(H, g, rows, A_eq, b_eq)
    prices = _nodal_prices(res, S_eq, S)
    w = np.array([fd.demand_mw[0] for fd in feeders]) if nf else np.ones(1)
    at = list(tso.attachments) if nf else [tso.ref]
    return float(np.average(prices[at], weights=w))


def der_cost_for(net: RadialNetwork, price: float) -> Cost:
    """DER cost with marginal price rising from ``price/2`` at zero output to
    ``3 price/2`` at full output, so optima sit inside the DER range."""
    p_max = max(net.der.p_max * net.base_mva, 1e-9)
    return Cost(c2=price / (2.0 * p_max), c1=price / 2.0, c0=0.0)


@dataclass(eq=False)
class Experiment:
    tso: TsoModel
    feeders: list[Feeder]
    attachments: list[Attachment]
    price: float


def build_experiment(case: RawCase, thresholds: tuple[float, float] = (5.0, 15.0),
                     der_fraction: float = 0.5, q_price: float = 0.1,
                     networks: dict[str, RadialNetwork] | None = None,
                     denominator: Denominator = "sending", seed_box: Box | None = None) -> Experiment:
    """Transmission case with a feeder at every non-reference bus, DER costs set
    around the system price."""
    plan = attach_feeders(case, thresholds)
    tso = tso_from_case(case, plan, q_price=q_price)
    networks = dict(networks or {})
    for kind in sorted({a.feeder for a in plan}):
        networks.setdefault(kind, tutorial_network(kind, der_fraction))
    templates = {k: prepare_feeder(v, denominator=denominator, seed_box=seed_box) for k, v in networks.items()}
    feeders = [replace(templates[a.feeder], name=f"{a.feeder}@{a.bus_id}") for a in plan]
    price = system_price(tso, feeders)
    feeders = [replace(fd, net=fd.net.with_der(cost=tuple(der_cost_for(fd.net, price))))
               for fd in feeders]
    return Experiment(tso, feeders, plan, price)


def run_experiment(exp: Experiment, methods: Sequence[Method] = METHODS) -> dict[str, DispatchResult]:
    """Coordinate with each method; gaps are filled against the reference when it runs."""
    out: dict[str, DispatchResult] = {}
    order = ["reference"] + [m for m in methods if m != "reference"] if "reference" in methods else list(methods)
    for m in order:
        if m == "reference" and "slc" in out:
            out[m] = coordinate(exp.tso, exp.feeders, m, der0=out["slc"].planned_der)
        else:
            out[m] = coordinate(exp.tso, exp.feeders, m)
    if "reference" in out:
        for r in out.values():
            cost_gaps(r, out["reference"])
    return {m: out[m] for m in methods}

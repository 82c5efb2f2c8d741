"""Lossless branch-flow model in the form ``A x + B u - b = 0``.

State ordering is ``x = [U; P_l; Q_l; p_g; q_g]`` and the PCC exchange is
``u = (p_pcc, q_pcc)``. Row groups are the root-voltage pin, one voltage
drop per line, and active / reactive balance per bus.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import Box, FlexPolygon, HalfSpace, intersect_halfspaces
from .network import Incidence, RadialNetwork, build_incidence
from .numerics import LUFactorization, lu_factor


@dataclass(frozen=True, eq=False)
class LinDistModel:
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    state_index: dict[str, slice]
    lu: LUFactorization
    A_inv_B: np.ndarray
    A_inv_b: np.ndarray

    @property
    def cond(self) -> float:
        return self.lu.cond

    def state_at(self, u) -> np.ndarray:
        """Full state ``x = A^-1 (b - B u)``; ``u`` may be a batch of shape (k, 2)."""
        u = np.asarray(u, dtype=float)
        return self.A_inv_b - u @ self.A_inv_B.T

    def part(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[..., self.state_index[name]]

    def residual(self, x: np.ndarray, u) -> np.ndarray:
        return self.A @ x + self.B @ np.asarray(u, dtype=float) - self.b


@dataclass(frozen=True, eq=False)
class FlowMaps:
    """``P_l(u) = a_p u + b_p`` and ``Q_l(u) = a_q u + b_q`` per line."""

    a_p: np.ndarray
    b_p: np.ndarray
    a_q: np.ndarray
    b_q: np.ndarray


def assemble(net: RadialNetwork, inc: Incidence | None = None) -> LinDistModel:
    inc = inc or build_incidence(net)
    nb, nl = net.n_bus, net.n_line
    n = nb + 2 * nl + 2
    A = np.zeros((n, n))
    B = np.zeros((n, 2))
    b = np.zeros(n)
    cols = {
        "U": slice(0, nb),
        "P": slice(nb, nb + nl),
        "Q": slice(nb + nl, nb + 2 * nl),
        "pg": slice(nb + 2 * nl, nb + 2 * nl + 1),
        "qg": slice(nb + 2 * nl + 1, n),
    }
    r0, r1, r2, r3 = 0, 1, 1 + nl, 1 + nl + nb
    # root voltage pin
    A[r0, cols["U"]] = inc.e1
    b[r0] = 1.0
    # voltage drops along each line
    A[r1:r2, cols["U"]] = inc.C
    A[r1:r2, cols["P"]] = -2.0 * np.diag(net.r)
    A[r1:r2, cols["Q"]] = -2.0 * np.diag(net.x)
    # active balance
    A[r2:r3, cols["P"]] = -inc.C.T
    A[r2:r3, cols["pg"]] = inc.C_gen
    B[r2:r3, 0] = inc.e1
    b[r2:r3] = net.demand_p
    # reactive balance
    A[r3:, cols["Q"]] = -inc.C.T
    A[r3:, cols["qg"]] = inc.C_gen
    B[r3:, 1] = inc.e1
    b[r3:] = net.demand_q

    lu = lu_factor(A)
    sol = lu.solve(np.column_stack([b, B]))
    return LinDistModel(A=A, B=B, b=b, state_index=cols, lu=lu,
                        A_inv_B=sol[:, 1:], A_inv_b=sol[:, 0])


def flow_maps(model: LinDistModel) -> FlowMaps:
    P, Q = model.state_index["P"], model.state_index["Q"]
    return FlowMaps(a_p=-model.A_inv_B[P], b_p=model.A_inv_b[P],
                    a_q=-model.A_inv_B[Q], b_q=model.A_inv_b[Q])


def state_bounds(net: RadialNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper bounds on ``x``; line flows are unbounded."""
    nl = net.n_line
    inf = np.full(nl, np.inf)
    d = net.der
    lo = np.concatenate([net.u_min, -inf, -inf, [d.p_min, d.q_min]])
    hi = np.concatenate([net.u_max, inf, inf, [d.p_max, d.q_max]])
    return lo, hi


def _tags(net: RadialNetwork, model: LinDistModel) -> list[str]:
    ids = net.bus_ids
    tags = [f"voltage@{ids[i]}" for i in range(net.n_bus)]
    tags += [f"P_line{k}" for k in range(net.n_line)] + [f"Q_line{k}" for k in range(net.n_line)]
    return tags + ["der-p", "der-q"]


def lds_halfspaces(model: LinDistModel, net: RadialNetwork) -> list[HalfSpace]:
    """Two half-spaces per finite bound on ``x``, expressed in ``u``.

    Rows that do not depend on ``u`` are skipped when satisfied and turned
    into an unsatisfiable half-space otherwise.
    """
    lo, hi = state_bounds(net)
    c, D = model.A_inv_b, model.A_inv_B  # x(u) = c - D u
    tags = _tags(net, model)
    out: list[HalfSpace] = []
    for i in range(len(c)):
        d = D[i]
        flat = np.max(np.abs(d)) <= 1e-14
        for bound, sign, kind in ((hi[i], -1.0, "upper"), (lo[i], 1.0, "lower")):
            if not np.isfinite(bound):
                continue
            # upper: c - d.u <= hi  ->  -d.u <= hi - c ; lower: d.u <= c - lo
            offset = (bound - c[i]) if sign < 0 else (c[i] - bound)
            if flat:
                if offset < -1e-12:
                    out.append(HalfSpace((1.0, 0.0), -np.inf, f"{tags[i]}:{kind}"))
                continue
            out.append(HalfSpace((float(sign * d[0]), float(sign * d[1])), float(offset), f"{tags[i]}:{kind}"))
    return out


def pcc_box(net: RadialNetwork) -> Box:
    return Box(*net.pcc_p_bounds, *net.pcc_q_bounds)


def flexibility_polygon(model: LinDistModel, net: RadialNetwork, seed_box: Box | None = None) -> FlexPolygon:
    """The lossless flexibility set as a polygon; empty when bounds conflict.

    The PCC exchange box is both a constraint family and the clipping seed;
    a user ``seed_box`` is intersected with it.
    """
    box = pcc_box(net)
    hs = lds_halfspaces(model, net)
    if seed_box is not None:
        s = Box(*seed_box)
        hs = hs + [HalfSpace((1.0, 0.0), box.p_max, "pcc-p:upper"), HalfSpace((-1.0, 0.0), -box.p_min, "pcc-p:lower"),
                   HalfSpace((0.0, 1.0), box.q_max, "pcc-q:upper"), HalfSpace((0.0, -1.0), -box.q_min, "pcc-q:lower")]
        box = s
    return intersect_halfspaces(hs, box)


class LinDistFlow:
    """Convenience bundle of a network with its assembled lossless model."""

    def __init__(self, net: RadialNetwork):
        self.net = net
        self.model = assemble(net)

    @cached_property
    def flows(self) -> FlowMaps:
        return flow_maps(self.model)

    @cached_property
    def polygon(self) -> FlexPolygon:
        return flexibility_polygon(self.model, self.net)

    def der_at(self, u) -> np.ndarray:
        """DER setpoint ``(p_g, q_g)`` the lossless model assigns to exchange ``u``."""
        x = self.model.state_at(u)
        idx = self.model.state_index
        return np.stack([x[..., idx["pg"]][..., 0], x[..., idx["qg"]][..., 0]], axis=-1)

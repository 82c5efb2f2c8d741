"""Quadratic loss maps that shift the lossless flexibility set toward the exact one.

With line flows affine in the exchange ``u`` and per-line squared voltages
frozen at an estimate ``u_hat``, feeder losses are quadratic in ``u``::

    p_loss(u) = sum_k r_k / u_hat_k * ((a_p,k u + b_p,k)^2 + (a_q,k u + b_q,k)^2)
              = 1/2 u' H_p u + g_p' u + c_p

and likewise with ``x_k`` for reactive losses. Only the twelve scalars of
the two quadratics leave the feeder.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .distflow import Denominator, check_feasible, sweep_solve
from .geometry import FlexPolygon, densify_boundary
from .lindistflow import FlowMaps, LinDistModel, assemble, flow_maps
from .network import RadialNetwork
from .numerics import newton_2d

log = logging.getLogger(__name__)

RECORD_FIELDS = ("Hp11", "Hp12", "Hp22", "gp1", "gp2", "cp",
                 "Hq11", "Hq12", "Hq22", "gq1", "gq2", "cq")


@dataclass(frozen=True, eq=False)
class QuadLossMap:
    H_p: np.ndarray
    g_p: np.ndarray
    c_p: float
    H_q: np.ndarray
    g_q: np.ndarray
    c_q: float
    u_hat: np.ndarray = field(default=None, repr=False)

    @classmethod
    def zero(cls) -> "QuadLossMap":
        z = np.zeros((2, 2))
        return cls(z, np.zeros(2), 0.0, z.copy(), np.zeros(2), 0.0)

    def p_loss(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", u, self.H_p, u) + u @ self.g_p + self.c_p

    def q_loss(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", u, self.H_q, u) + u @ self.g_q + self.c_q

    def loss(self, u) -> np.ndarray:
        return np.stack([self.p_loss(u), self.q_loss(u)], axis=-1)

    def jacobian(self, u) -> np.ndarray:
        """d(u + loss(u))/du."""
        u = np.asarray(u, dtype=float)
        return np.eye(2) + np.vstack([self.H_p @ u + self.g_p, self.H_q @ u + self.g_q])

    def to_record(self) -> dict[str, float]:
        """The twelve numbers a feeder operator publishes."""
        vals = [self.H_p[0, 0], self.H_p[0, 1], self.H_p[1, 1], *self.g_p, self.c_p,
                self.H_q[0, 0], self.H_q[0, 1], self.H_q[1, 1], *self.g_q, self.c_q]
        return dict(zip(RECORD_FIELDS, map(float, vals)))

    @classmethod
    def from_record(cls, rec: dict[str, float]) -> "QuadLossMap":
        v = [float(rec[k]) for k in RECORD_FIELDS]
        hp = np.array([[v[0], v[1]], [v[1], v[2]]])
        hq = np.array([[v[6], v[7]], [v[7], v[8]]])
        return cls(hp, np.array(v[3:5]), v[5], hq, np.array(v[9:11]), v[11])

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "QuadLossMap":
        return cls.from_record(json.loads(text))


VoltageSource = Literal["distflow", "lindistflow"]


def estimate_voltages(
    net: RadialNetwork,
    source: VoltageSource = "distflow",
    denominator: Denominator = "sending",
    model: LinDistModel | None = None,
) -> np.ndarray:
    """Per-line loss denominators at zero DER injection.

    ``source`` picks the exact sweep or the lossless state map for the
    zero-injection voltages. With ``denominator='sending'`` each line gets
    its sending-end squared voltage, with ``'difference'`` the drop across it.
    """
    if source == "distflow":
        sol = sweep_solve(net, (0.0, 0.0), denominator)
        U = sol.U
        if check_feasible(sol, net):
            log.warning("%s: zero-injection power flow violates bounds; loss estimate kept",
                        net.name or "feeder")
    elif source == "lindistflow":
        model = model or assemble(net)
        pd, qd = net.total_demand
        U = model.part(model.state_at([pd, qd]), "U")
    else:
        raise ValueError(f"unknown voltage source {source!r}")
    if denominator == "sending":
        u_hat = U[net.from_bus]
    elif denominator == "difference":
        u_hat = U[net.from_bus] - U[net.to_bus]
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    return np.asarray(u_hat, dtype=float)


def direct_losses(net: RadialNetwork, flows: FlowMaps, u_hat: np.ndarray, u) -> np.ndarray:
    """Per-feeder losses summed line by line (no quadratic expansion)."""
    u = np.asarray(u, dtype=float)
    P = u @ flows.a_p.T + flows.b_p
    Q = u @ flows.a_q.T + flows.b_q
    sq = (P ** 2 + Q ** 2) / u_hat
    return np.stack([sq @ net.r, sq @ net.x], axis=-1)


def build_maps(net: RadialNetwork, flows: FlowMaps, u_hat: np.ndarray) -> QuadLossMap:
    u_hat = np.asarray(u_hat, dtype=float)
    if np.any(u_hat <= 0):
        raise ValueError("voltage estimates must be positive")

    def expand(weight):
        w = weight / u_hat
        H = 2.0 * (flows.a_p.T @ (w[:, None] * flows.a_p) + flows.a_q.T @ (w[:, None] * flows.a_q))
        g = 2.0 * (flows.a_p.T @ (w * flows.b_p) + flows.a_q.T @ (w * flows.b_q))
        c = float(w @ (flows.b_p ** 2 + flows.b_q ** 2))
        return 0.5 * (H + H.T), g, c

    hp, gp, cp = expand(net.r)
    hq, gq, cq = expand(net.x)
    return QuadLossMap(hp, gp, cp, hq, gq, cq, u_hat=u_hat)


def loss_map_for(net: RadialNetwork, source: VoltageSource = "distflow",
                 denominator: Denominator = "sending") -> QuadLossMap:
    model = assemble(net)
    return build_maps(net, flow_maps(model), estimate_voltages(net, source, denominator, model))


def compensate(loss_map: QuadLossMap, u_lds) -> np.ndarray:
    """Delivered exchange ``u + (p_loss(u), q_loss(u))``; accepts batches."""
    u = np.asarray(u_lds, dtype=float)
    return u + loss_map.loss(u)


def compensate_polygon(loss_map: QuadLossMap, polygon: FlexPolygon, max_edge: float = 0.01) -> FlexPolygon:
    """Image of the densified boundary; convexity is not implied."""
    if polygon.is_empty:
        return polygon
    dense = densify_boundary(polygon, max_edge)
    return FlexPolygon(compensate(loss_map, dense.vertices))


def preimage(loss_map: QuadLossMap, u, tol: float = 1e-12) -> np.ndarray:
    """Lossless exchange whose compensated image is ``u`` (Newton)."""
    u = np.asarray(u, dtype=float)
    return newton_2d(lambda v: compensate(loss_map, v) - u, u - loss_map.loss(u), tol=tol)

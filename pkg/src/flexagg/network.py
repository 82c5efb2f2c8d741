"""Radial distribution network model and connectivity matrices.

Buses are relabeled on construction so that the PCC is internal index 0
and every bus is numbered after its parent (breadth-first order). Line
``k`` then always feeds bus ``k + 1``, which makes the topological branch
ordering and the root selector trivial. ``bus_ids`` maps internal indices
back to the original case ids.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import NotRadial

DEFAULT_U_BOUNDS = (0.81, 1.21)


def validate_radial(
    edges: Sequence[tuple[Hashable, Hashable]],
    root: Hashable | None = None,
    buses: Iterable[Hashable] | None = None,
) -> list[tuple[Hashable, Hashable]]:
    """Check that ``edges`` form a tree rooted at ``root``.

    Returns the branches oriented parent -> child in breadth-first order
    (children visited by ascending id). Raises :class:`NotRadial` naming
    the offending buses on a cycle or a disconnected component.
    """
    nodes = set(buses) if buses is not None else set()
    adj: dict[Hashable, list[Hashable]] = {}
    for a, b in edges:
        if a == b:
            raise NotRadial(f"self-loop at bus {a}", [a])
        nodes.update((a, b))
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if not nodes:
        raise NotRadial("network has no buses")
    if root is None:
        root = min(nodes)
    if root not in nodes:
        raise NotRadial(f"root bus {root} is not in the network", [root])

    parent = {root: None}
    order: list[tuple[Hashable, Hashable]] = []
    cycle_buses: set = set()
    queue = deque([root])
    while queue:
        i = queue.popleft()
        seen_parent = False
        for j in sorted(adj.get(i, [])):
            if j == parent[i] and not seen_parent:
                seen_parent = True
                continue
            if j in parent:
                cycle_buses.update((i, j))
                continue
            parent[j] = i
            order.append((i, j))
            queue.append(j)

    if cycle_buses:
        raise NotRadial(f"cycle through buses {sorted(cycle_buses)}", sorted(cycle_buses))
    unreached = sorted(nodes - parent.keys())
    if unreached:
        raise NotRadial(f"buses {unreached} are disconnected from root {root}", unreached)
    if len(nodes) != len(edges) + 1:
        raise NotRadial(f"{len(nodes)} buses but {len(edges)} branches")
    return order


@dataclass(frozen=True)
class DER:
    """Single controllable injection. Bounds in p.u., costs in $/h on MW."""

    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class RadialNetwork:
    name: str
    base_mva: float
    bus_ids: np.ndarray
    from_bus: np.ndarray
    to_bus: np.ndarray
    r: np.ndarray
    x: np.ndarray
    demand_p: np.ndarray
    demand_q: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    der: DER
    pcc_p_bounds: tuple[float, float]
    pcc_q_bounds: tuple[float, float]

    def __post_init__(self):
        nb, nl = len(self.bus_ids), len(self.from_bus)
        if nb != nl + 1:
            raise NotRadial(f"{nb} buses but {nl} branches")
        if not np.array_equal(self.to_bus, np.arange(1, nb)):
            raise ValueError("branches must be ordered so that line k feeds bus k+1")
        if np.any(self.from_bus >= self.to_bus):
            raise ValueError("every parent must precede its child")
        if np.any(self.r < 0) or np.any(self.x < 0):
            raise ValueError("negative branch impedance")
        if not (self.u_min[0] <= 1.0 <= self.u_max[0]):
            raise ValueError("PCC voltage bounds must contain 1")
        for arr in (self.bus_ids, self.from_bus, self.to_bus, self.r, self.x,
                    self.demand_p, self.demand_q, self.u_min, self.u_max):
            arr.setflags(write=False)

    @classmethod
    def build(
        cls,
        branches: Sequence[tuple[Hashable, Hashable, float, float]],
        demand_p: dict,
        demand_q: dict,
        *,
        root: Hashable,
        der_bus: Hashable,
        der_bounds: tuple[float, float, float, float],
        der_cost: tuple[float, float, float] = (0.0, 0.0, 0.0),
        u_bounds: dict | None = None,
        pcc_p_bounds: tuple[float, float] | None = None,
        pcc_q_bounds: tuple[float, float] | None = None,
        base_mva: float = 1.0,
        name: str = "",
    ) -> "RadialNetwork":
        """Relabel and orient an arbitrary tree given in per-unit quantities.

        ``branches`` holds ``(bus_a, bus_b, r, x)`` in any orientation;
        demand and voltage-bound dicts are keyed by original bus id.
        Missing voltage bounds default to the 0.9-1.1 p.u. band.
        """
        imp = {}
        for a, b, r, x in branches:
            imp[(a, b)] = imp[(b, a)] = (float(r), float(x))
        order = validate_radial([(a, b) for a, b, _, _ in branches], root=root,
                                buses=list(demand_p) + [root])
        ids = [root] + [child for _, child in order]
        pos = {bus: k for k, bus in enumerate(ids)}
        nb = len(ids)
        u_bounds = u_bounds or {}
        u_min = np.array([u_bounds.get(b, DEFAULT_U_BOUNDS)[0] for b in ids], dtype=float)
        u_max = np.array([u_bounds.get(b, DEFAULT_U_BOUNDS)[1] for b in ids], dtype=float)
        pd = np.array([float(demand_p.get(b, 0.0)) for b in ids])
        qd = np.array([float(demand_q.get(b, 0.0)) for b in ids])
        if pcc_p_bounds is None:
            span = 2.0 * max(abs(pd.sum()), 1e-3)
            pcc_p_bounds = (-span, span)
        if pcc_q_bounds is None:
            span = 2.0 * max(abs(qd.sum()), abs(pd.sum()), 1e-3)
            pcc_q_bounds = (-span, span)
        return cls(
            name=name,
            base_mva=float(base_mva),
            bus_ids=np.array(ids),
            from_bus=np.array([pos[p] for p, _ in order], dtype=int),
            to_bus=np.arange(1, nb, dtype=int),
            r=np.array([imp[e][0] for e in order]),
            x=np.array([imp[e][1] for e in order]),
            demand_p=pd,
            demand_q=qd,
            u_min=u_min,
            u_max=u_max,
            der=DER(pos[der_bus], *map(float, der_bounds), cost=tuple(map(float, der_cost))),
            pcc_p_bounds=tuple(map(float, pcc_p_bounds)),
            pcc_q_bounds=tuple(map(float, pcc_q_bounds)),
        )

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_line(self) -> int:
        return len(self.from_bus)

    @property
    def pcc_bus(self) -> int:
        return 0

    @property
    def total_demand(self) -> tuple[float, float]:
        return float(self.demand_p.sum()), float(self.demand_q.sum())

    @cached_property
    def subtree(self) -> np.ndarray:
        """``D[k, m] = 1`` when line ``m`` lies in the subtree fed by line ``k`` (inclusive)."""
        nl = self.n_line
        d = np.eye(nl)
        # line k feeds bus k+1; its parent line feeds from_bus[k] (none at the root)
        for m in range(nl - 1, -1, -1):
            up = self.from_bus[m] - 1
            while up >= 0:
                d[up, m] = 1.0
                up = self.from_bus[up] - 1
        return d

    def depth(self) -> np.ndarray:
        """Number of branches between each bus and the PCC."""
        dep = np.zeros(self.n_bus, dtype=int)
        for k in range(self.n_line):
            dep[self.to_bus[k]] = dep[self.from_bus[k]] + 1
        return dep

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_bus)]
        for f, t in zip(self.from_bus, self.to_bus):
            out[f].append(int(t))
        return out

    def leaves(self) -> list[int]:
        return [i for i, c in enumerate(self.children()) if i != 0 and not c]

    def branch_ids(self) -> list[tuple]:
        """Branches as original ``(from_id, to_id)`` pairs."""
        return [(self.bus_ids[f].item(), self.bus_ids[t].item())
                for f, t in zip(self.from_bus, self.to_bus)]

    def with_der(self, **changes) -> "RadialNetwork":
        """Copy with DER fields replaced (``p_min``, ``p_max``, ``cost``, ...)."""
        from dataclasses import replace
        return replace(self, der=replace(self.der, **changes))


@dataclass(frozen=True, eq=False)
class Incidence:
    C_from: np.ndarray
    C_to: np.ndarray
    C: np.ndarray
    C_gen: np.ndarray
    e1: np.ndarray = field(repr=False)


def build_incidence(net: RadialNetwork) -> Incidence:
    nl, nb = net.n_line, net.n_bus
    cf = np.zeros((nl, nb))
    ct = np.zeros((nl, nb))
    rows = np.arange(nl)
    cf[rows, net.from_bus] = 1.0
    ct[rows, net.to_bus] = 1.0
    cg = np.zeros((nb, 1))
    cg[net.der.bus, 0] = 1.0
    e1 = np.zeros(nb)
    e1[net.pcc_bus] = 1.0
    return Incidence(C_from=cf, C_to=ct, C=cf - ct, C_gen=cg, e1=e1)

"""Planar polygon utilities for flexibility sets in the (p_pcc, q_pcc) plane."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DegeneratePolygon

MERGE_TOL = 1e-12


@dataclass(frozen=True)
class HalfSpace:
    """Region ``normal . u <= offset``; ``tag`` names the originating bound."""

    normal: tuple[float, float]
    offset: float
    tag: str = ""

    def __post_init__(self):
        if self.normal[0] == 0 and self.normal[1] == 0:
            raise ValueError("half-space normal must be nonzero")

    def slack(self, pts: np.ndarray) -> np.ndarray:
        return self.offset - np.asarray(pts, dtype=float) @ np.asarray(self.normal)


class Box(NamedTuple):
    p_min: float
    p_max: float
    q_min: float
    q_max: float

    def vertices(self) -> np.ndarray:
        return np.array([[self.p_min, self.q_min], [self.p_max, self.q_min],
                         [self.p_max, self.q_max], [self.p_min, self.q_max]], dtype=float)


@dataclass(frozen=True, eq=False)
class FlexPolygon:
    """Closed polygon with counter-clockwise vertices; zero vertices means empty."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def empty(cls) -> "FlexPolygon":
        return cls(np.zeros((0, 2)))

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    @property
    def closed(self) -> bool:
        return True

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def edges(self) -> Iterable[tuple[np.ndarray, np.ndarray]]:
        v = self.vertices
        for k in range(len(v)):
            yield v[k], v[(k + 1) % len(v)]

    def halfspaces(self) -> list[HalfSpace]:
        """Edge half-spaces of a convex CCW polygon (unit normals)."""
        out = []
        for a, b in self.edges():
            d = b - a
            nrm = np.hypot(*d)
            if nrm <= MERGE_TOL:
                continue
            normal = np.array([d[1], -d[0]]) / nrm
            out.append(HalfSpace((float(normal[0]), float(normal[1])), float(normal @ a), "edge"))
        return out

    def bounding_box(self) -> Box:
        v = self.vertices
        return Box(v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max())


def polygon_area(v: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    v = np.asarray(v, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _dedupe(pts: list[np.ndarray], tol: float = MERGE_TOL) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for p in pts:
        if not out or np.max(np.abs(p - out[-1])) > tol:
            out.append(p)
    while len(out) > 1 and np.max(np.abs(out[0] - out[-1])) <= tol:
        out.pop()
    return out


def clip(poly: list[np.ndarray], hs: HalfSpace, tol: float = 1e-12) -> list[np.ndarray]:
    """Clip a convex vertex loop against one half-space (Sutherland-Hodgman)."""
    if not poly or hs.offset == -np.inf:
        return []
    if hs.offset == np.inf:
        return poly
    normal = np.asarray(hs.normal, dtype=float)
    scale = max(1.0, abs(hs.offset), float(np.max(np.abs(poly))) * np.hypot(*normal))
    out: list[np.ndarray] = []
    k = len(poly)
    for i in range(k):
        cur, nxt = poly[i], poly[(i + 1) % k]
        sc = hs.offset - normal @ cur
        sn = hs.offset - normal @ nxt
        cur_in = sc >= -tol * scale
        nxt_in = sn >= -tol * scale
        if cur_in:
            out.append(cur)
        if cur_in != nxt_in and k > 1:
            t = sc / (sc - sn)
            out.append(cur + t * (nxt - cur))
    return _dedupe(out)


def intersect_halfspaces(hs: Sequence[HalfSpace], seed_box: Box | Sequence[float]) -> FlexPolygon:
    """Intersect half-spaces by successive clipping of ``seed_box``.

    An empty intersection comes back as ``FlexPolygon.empty()``.
    """
    box = Box(*seed_box)
    if not (box.p_min <= box.p_max and box.q_min <= box.q_max):
        raise ValueError(f"invalid seed box {box}")
    poly = _dedupe(list(box.vertices()))
    for h in hs:
        poly = clip(poly, h)
        if not poly:
            return FlexPolygon.empty()
    return FlexPolygon(np.array(poly).reshape(-1, 2))


def convex_hull(points: np.ndarray) -> FlexPolygon:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return FlexPolygon(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return FlexPolygon(np.array(lower[:-1] + upper[:-1]))


def _segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip((pts - a) @ d / dd, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.hypot(*(pts - proj).T)


def boundary_distance(poly: FlexPolygon, pts: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the polygon boundary."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if poly.is_empty:
        return np.full(len(pts), np.inf)
    if len(poly) == 1:
        return np.hypot(*(pts - poly.vertices[0]).T)
    dist = np.full(len(pts), np.inf)
    for a, b in poly.edges():
        dist = np.minimum(dist, _segment_distance(pts, a, b))
    return dist


def contains(poly: FlexPolygon, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Point-in-polygon by ray casting; points within ``tol`` of an edge count as inside.

    Works for simple nonconvex polygons as well.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if poly.is_empty:
        return np.zeros(len(pts), dtype=bool)
    on_edge = boundary_distance(poly, pts) <= tol
    inside = np.zeros(len(pts), dtype=bool)
    x, y = pts[:, 0], pts[:, 1]
    for a, b in poly.edges():
        crosses = (a[1] > y) != (b[1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        inside ^= crosses & (x < xint)
    return inside | on_edge


class PolygonMetrics(NamedTuple):
    area: float
    containment: float
    hausdorff: float


def polygon_metrics(a: FlexPolygon, b: FlexPolygon | np.ndarray, tol: float = 1e-9) -> PolygonMetrics:
    """Area of ``a``, share of ``b``'s points inside ``a``, and the directed
    Hausdorff distance from ``b``'s points to ``a``'s boundary."""
    if a.is_empty or abs(a.area) < 1e-12:
        raise DegeneratePolygon(f"polygon area {0.0 if a.is_empty else a.area:.3e} below 1e-12")
    pts = b.vertices if isinstance(b, FlexPolygon) else np.asarray(b, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return PolygonMetrics(abs(a.area), 1.0, 0.0)
    return PolygonMetrics(
        area=abs(a.area),
        containment=float(np.mean(contains(a, pts, tol))),
        hausdorff=float(np.max(boundary_distance(a, pts))),
    )


def densify_boundary(p: FlexPolygon, max_edge: float) -> FlexPolygon:
    """Subdivide every edge evenly so that no piece is longer than ``max_edge``."""
    if not max_edge > 0:
        raise ValueError("max_edge must be positive")
    if len(p) < 2:
        return p
    out = []
    for a, b in p.edges():
        pieces = max(1, int(np.ceil(np.hypot(*(b - a)) / max_edge - 1e-12)))
        t = np.arange(pieces)[:, None] / pieces
        out.append(a + t * (b - a))
    return FlexPolygon(np.vstack(out))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from flexagg import Box, DegeneratePolygon, FlexPolygon, HalfSpace, intersect_halfspaces, polygon_metrics
from flexagg.geometry import boundary_distance, contains, convex_hull, densify_boundary
from flexagg.lindistflow import assemble, lds_halfspaces, pcc_box

SQUARE = FlexPolygon(np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]))
UNIT = FlexPolygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))


def same_loop(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """Equal vertex loops up to a cyclic shift."""
    if a.shape != b.shape:
        return False
    return any(np.allclose(np.roll(a, k, axis=0), b, atol=tol) for k in range(len(a)))


def test_no_halfspaces_returns_seed():
    poly = intersect_halfspaces([], Box(-2, 3, -1, 4))
    assert same_loop(poly.vertices, Box(-2, 3, -1, 4).vertices())


def test_box_from_four_halfspaces():
    hs = [HalfSpace((1, 0), 1), HalfSpace((-1, 0), 1), HalfSpace((0, 1), 1), HalfSpace((0, -1), 1)]
    poly = intersect_halfspaces(hs, Box(-10, 10, -10, 10))
    assert poly.area == pytest.approx(4.0)
    assert same_loop(poly.vertices, SQUARE.vertices)


def test_empty_intersection_is_a_value():
    poly = intersect_halfspaces([HalfSpace((1, 0), -5)], Box(-1, 1, -1, 1))
    assert poly.is_empty and len(poly) == 0


def test_zero_normal_rejected():
    with pytest.raises(ValueError):
        HalfSpace((0, 0), 1)


def test_two_bus_lossless_region_vertices_satisfy_constraints(two_bus):
    net = two_bus()
    hs = lds_halfspaces(assemble(net), net)
    poly = intersect_halfspaces(hs, pcc_box(net))
    assert len(poly) == 4
    for h in hs:
        assert np.all(h.slack(poly.vertices) >= -1e-10)


def test_metrics_self():
    m = polygon_metrics(UNIT, UNIT.vertices)
    assert (m.area, m.containment, m.hausdorff) == (1.0, 1.0, 0.0)


def test_metrics_unit_offset():
    m = polygon_metrics(UNIT, np.array([[2.0, 0.0]]))
    assert m.containment == 0.0
    assert m.hausdorff == pytest.approx(1.0)


def test_metrics_degenerate():
    with pytest.raises(DegeneratePolygon):
        polygon_metrics(FlexPolygon(np.array([[0, 0], [1, 1], [2, 2.0]])), UNIT)


def test_lossless_region_misses_exact_cloud(tutorial, clouds):
    net = tutorial["case33mg"]
    poly = intersect_halfspaces(lds_halfspaces(assemble(net), net), pcc_box(net))
    assert polygon_metrics(poly, clouds("case33mg").feasible_points).containment < 1.0


def test_densify_square():
    dense = densify_boundary(SQUARE, 1.0)
    assert len(dense) == 8
    assert same_loop(dense.vertices[::2], SQUARE.vertices)


def test_densify_noop():
    assert np.array_equal(densify_boundary(SQUARE, 5.0).vertices, SQUARE.vertices)


def test_densify_rejects_nonpositive():
    with pytest.raises(ValueError):
        densify_boundary(SQUARE, 0.0)


def test_densify_lossless_region(tutorial):
    from flexagg import LinDistFlow
    poly = LinDistFlow(tutorial["case10ba"]).polygon
    dense = densify_boundary(poly, 0.01)
    lengths = [np.hypot(*(b - a)) for a, b in dense.edges()]
    assert max(lengths) <= 0.01 + 1e-15
    assert dense.area == pytest.approx(poly.area, rel=1e-12)


def test_contains_edges_and_nonconvex():
    arrow = FlexPolygon(np.array([[0, 0], [2, 0], [2, 2], [1, 1], [0, 2.0]]))
    pts = np.array([[1.0, 0.5], [1.0, 1.5], [2.0, 1.0], [1.0, 1.0], [3.0, 0.0]])
    assert contains(arrow, pts).tolist() == [True, False, True, True, False]


def test_halfspaces_of_polygon_round_trip():
    hs = UNIT.halfspaces()
    again = intersect_halfspaces(hs, Box(-5, 5, -5, 5))
    assert same_loop(again.vertices, UNIT.vertices)


# random bounded convex regions: tangent lines of a disk around a box
@st.composite
def halfspace_lists(draw):
    k = draw(st.integers(1, 12))
    angles = draw(st.lists(st.floats(0, 2 * np.pi, allow_nan=False), min_size=k, max_size=k))
    radii = draw(st.lists(st.floats(0.2, 2.0), min_size=k, max_size=k))
    return [HalfSpace((float(np.cos(a)), float(np.sin(a))), float(r)) for a, r in zip(angles, radii)]


BOX = Box(-1.5, 1.5, -1.5, 1.5)


def hull_oracle(hs, box=BOX):
    """Brute force: every pairwise line intersection that is feasible, then scipy's hull."""
    lines = [(np.array(h.normal), h.offset) for h in hs]
    lines += [(np.array([1.0, 0]), box.p_max), (np.array([-1.0, 0]), -box.p_min),
              (np.array([0, 1.0]), box.q_max), (np.array([0, -1.0]), -box.q_min)]
    pts = []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            M = np.array([lines[i][0], lines[j][0]])
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            z = np.linalg.solve(M, [lines[i][1], lines[j][1]])
            if all(n @ z <= o + 1e-9 for n, o in lines):
                pts.append(z)
    return np.array(pts)


@given(halfspace_lists(), st.randoms())
@settings(max_examples=100, deadline=None)
def test_clipping_matches_vertex_enumeration(hs, rnd):
    poly = intersect_halfspaces(hs, BOX)
    pts = hull_oracle(hs)
    hull = ConvexHull(pts)
    assert poly.area == pytest.approx(hull.volume, rel=1e-9, abs=1e-12)
    assert poly.area > 0  # counter-clockwise
    for h in hs:
        assert np.all(h.slack(poly.vertices) >= -1e-9)
    shuffled = list(hs)
    rnd.shuffle(shuffled)
    other = intersect_halfspaces(shuffled, BOX)
    a = np.unique(np.round(poly.vertices, 9), axis=0)
    b = np.unique(np.round(other.vertices, 9), axis=0)
    assert a.shape == b.shape and np.allclose(a, b, atol=1e-9)


@given(halfspace_lists(), halfspace_lists())
@settings(max_examples=100, deadline=None)
def test_area_monotone_under_more_halfspaces(hs, extra):
    before = intersect_halfspaces(hs, BOX).area
    after = intersect_halfspaces(hs + extra, BOX).area
    assert after <= before + 1e-12


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=60))
@settings(max_examples=100, deadline=None)
def test_convex_hull_matches_scipy(points):
    pts = np.array(points)
    try:
        ref = ConvexHull(pts)
    except Exception:
        return  # collinear input has no 2-D hull
    if ref.volume < 1e-9:
        return
    ours = convex_hull(pts)
    assert ours.area == pytest.approx(ref.volume, rel=1e-9)
    assert np.all(contains(ours, pts, tol=1e-9))


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=30))
@settings(max_examples=100, deadline=None)
def test_boundary_distance_against_dense_sampling(points):
    pts = np.array(points)
    dense = densify_boundary(SQUARE, 1e-3).vertices
    brute = np.min(np.hypot(pts[:, None, 0] - dense[None, :, 0], pts[:, None, 1] - dense[None, :, 1]), axis=1)
    assert np.allclose(boundary_distance(SQUARE, pts), brute, atol=1e-3)
    inside = np.all(np.abs(pts) <= 1.0, axis=1)
    assert np.array_equal(contains(SQUARE, pts, tol=0.0), inside)

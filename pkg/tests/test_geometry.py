import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentverify.geometry import (
    ConvexPolygon,
    clip_polygon_to_rect,
    convex_hull,
    minkowski_expand,
    polygon_area,
    polygon_contains,
    polygons_intersect,
    rect_inside_polygon,
    rect_intersects_polygon,
    rect_polygon,
)


def brute_force_hull(points):
    """O(n^3) edge test: (a, b) is a hull edge iff all points lie on one side."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    n = pts.shape[0]
    verts = set()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = pts[j] - pts[i]
            s = d[0] * (pts[:, 1] - pts[i, 1]) - d[1] * (pts[:, 0] - pts[i, 0])
            if np.all(s <= 1e-12) or np.all(s >= -1e-12):
                verts.add(i)
                verts.add(j)
    return pts[sorted(verts)]


def test_hull_unit_square():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.2, 0.7]])
    h = convex_hull(pts)
    assert h.degeneracy == "polygon"
    assert h.n == 4
    assert set(map(tuple, h.vertices)) == {(0, 0), (1, 0), (1, 1), (0, 1)}
    # canonical: CCW from lexicographic minimum
    assert tuple(h.vertices[0]) == (0, 0)


def test_hull_collinear():
    pts = np.array([[0, 0], [1, 1], [2, 2], [0.5, 0.5]])
    h = convex_hull(pts)
    assert h.degeneracy == "segment"
    assert np.allclose(h.vertices, [[0, 0], [2, 2]])


def test_hull_single_point():
    h = convex_hull(np.array([[3.0, 4.0]]))
    assert h.degeneracy == "point"


def test_hull_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(1000, 2))
    h = convex_hull(pts)
    oracle_verts = brute_force_hull(pts)
    assert set(map(tuple, np.round(h.vertices, 9))) == set(map(tuple, np.round(oracle_verts, 9)))


def test_hull_contains_all_inputs():
    rng = np.random.default_rng(1)
    for trial in range(5):
        pts = rng.normal(size=(500, 2))
        h = convex_hull(pts)
        assert polygon_contains(h, pts, tol=1e-9).all()


def test_minkowski_eps_zero_identity():
    h = convex_hull(np.array([[0, 0], [1, 0], [0, 1]]))
    assert minkowski_expand(h, 0.0) is h


def test_minkowski_unit_square_probes():
    square = convex_hull(np.array([[0, 0], [1, 0], [1, 1], [0, 1]]))
    grown = minkowski_expand(square, 0.1)
    rng = np.random.default_rng(2)
    base = rng.uniform(0, 1, size=(10000, 2))
    ang = rng.uniform(0, 2 * np.pi, size=10000)
    rad = 0.1 * np.sqrt(rng.uniform(0, 1, size=10000))
    probes = base + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    assert polygon_contains(grown, probes, tol=1e-9).all()


def test_minkowski_area_lower_bound():
    tri = convex_hull(np.array([[0, 0], [2, 0], [0, 2]]))
    eps = 0.25
    grown = minkowski_expand(tri, eps)
    perimeter = 2 + 2 + np.sqrt(8)
    assert grown.area() >= tri.area() + perimeter * eps


def test_minkowski_degenerate_point_and_segment():
    pt = convex_hull(np.array([[1.0, 1.0]]))
    grown = minkowski_expand(pt, 0.5)
    rng = np.random.default_rng(3)
    ang = rng.uniform(0, 2 * np.pi, 500)
    rad = 0.5 * np.sqrt(rng.uniform(0, 1, 500))
    probes = np.array([1.0, 1.0]) + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    assert polygon_contains(grown, probes, tol=1e-9).all()
    seg = convex_hull(np.array([[0.0, 0.0], [1.0, 0.0]]))
    grown = minkowski_expand(seg, 0.2)
    t = rng.uniform(0, 1, 500)
    probes = np.column_stack([t, np.zeros(500)]) + 0.2 * np.sqrt(
        rng.uniform(0, 1, (500, 1))) * _unit(rng, 500)
    assert polygon_contains(grown, probes, tol=1e-9).all()


def _unit(rng, n):
    a = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([np.cos(a), np.sin(a)])


def _sat_oracle(a, b):
    """Dense point containment cross-check of polygon intersection."""
    # sample points of each polygon (vertices, edges, interior grid)
    def cloud(p):
        v = p.vertices
        pts = [v]
        for t in np.linspace(0, 1, 12):
            pts.append(v * (1 - t) + np.roll(v, -1, axis=0) * t)
        c = v.mean(axis=0)
        for t in np.linspace(0, 1, 12):
            pts.append(v * (1 - t) + c * t)
        return np.vstack(pts)

    return polygon_contains(a, cloud(b), tol=1e-12).any() or \
        polygon_contains(b, cloud(a), tol=1e-12).any()


def test_polygon_intersection_against_containment_oracle():
    rng = np.random.default_rng(4)
    disagreements = 0
    for _ in range(300):
        a = convex_hull(rng.normal(size=(6, 2)))
        b = convex_hull(rng.normal(loc=rng.uniform(-2, 2, 2), size=(6, 2)))
        if a.degeneracy != "polygon" or b.degeneracy != "polygon":
            continue
        sat = polygons_intersect(a, b)
        oracle = _sat_oracle(a, b)
        if oracle and not sat:
            disagreements += 1  # oracle found a shared point SAT missed
    assert disagreements == 0


def test_rect_predicates():
    tri = convex_hull(np.array([[0, 0], [4, 0], [0, 4]]))
    assert rect_inside_polygon(np.array([0.5, 0.5]), np.array([1.0, 1.0]), tri)
    assert not rect_inside_polygon(np.array([3, 3]), np.array([4, 4]), tri)
    assert rect_intersects_polygon(np.array([1.5, 1.5]), np.array([5, 5]), tri)
    assert not rect_intersects_polygon(np.array([4.1, 4.1]), np.array([5, 5]), tri)


def test_clip_polygon_to_rect():
    tri = convex_hull(np.array([[0, 0], [1.5, 0], [0, 1.5]]))
    v = clip_polygon_to_rect(tri, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    # unit square minus the corner cut by x + y = 1.5
    assert polygon_area(v) == pytest.approx(1.0 - 0.125, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=40))
def test_hull_property_contains_points(points):
    pts = np.array(points)
    h = convex_hull(pts)
    assert polygon_contains(h, pts, tol=1e-7).all()


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 1.0), st.integers(0, 10_000))
def test_minkowski_property_contains_original(eps, seed):
    rng = np.random.default_rng(seed)
    h = convex_hull(rng.normal(size=(8, 2)))
    grown = minkowski_expand(h, eps)
    assert polygon_contains(grown, h.vertices, tol=1e-9).all()

"""2D convex geometry kit for the latent space.

Polygon vertices are stored counter-clockwise starting from the
lexicographically smallest vertex. Degenerate hulls (a point or a segment)
are tagged rather than rejected. The Minkowski disc-sum is computed as an
intersection of supporting halfplanes, which over-approximates the exact
sum -- the direction of conservatism the abstraction needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConvexPolygon:
    vertices: np.ndarray  # (k, 2), CCW, canonical start
    degeneracy: str = "polygon"  # polygon | segment | point

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)

    @property
    def n(self):
        return self.vertices.shape[0]

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def area(self):
        return polygon_area(self.vertices)

    def contains(self, pts, tol=1e-12):
        return polygon_contains(self, pts, tol)


def polygon_area(v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _canonical(v):
    """Rotate vertex order to start at the lexicographic minimum."""
    idx = np.lexsort((v[:, 1], v[:, 0]))[0]
    return np.roll(v, -idx, axis=0)


def convex_hull(points) -> ConvexPolygon:
    """Monotone-chain hull with an Akl-Toussaint prefilter for large inputs."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    pts = np.unique(pts, axis=0)  # also lex-sorts
    if pts.shape[0] > 512:
        pts = _akl_toussaint(pts)
    if pts.shape[0] == 1:
        return ConvexPolygon(pts, "point")
    lower = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3 or polygon_area(hull) == 0.0:
        # collinear input: endpoints of the segment
        lo, hi = pts[0], pts[-1]
        if np.allclose(lo, hi):
            return ConvexPolygon(lo[None, :], "point")
        return ConvexPolygon(np.array([lo, hi]), "segment")
    return ConvexPolygon(_canonical(hull))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _akl_toussaint(pts):
    """Drop points strictly inside the quadrilateral of axis extremes."""
    corners = np.array([
        pts[pts[:, 0].argmin()], pts[pts[:, 1].argmax()],
        pts[pts[:, 0].argmax()], pts[pts[:, 1].argmin()],
    ])
    keep = np.zeros(pts.shape[0], dtype=bool)
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        # points on or outside edge (a,b) of the CCW quad
        s = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        keep |= s <= 1e-15
    return pts[keep]


def polygon_contains(poly: ConvexPolygon, pts, tol=1e-12):
    """Vectorized membership (closed set, slack tol outward)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    v = poly.vertices
    if poly.degeneracy == "point":
        return np.all(np.abs(pts - v[0]) <= tol, axis=1)
    if poly.degeneracy == "segment":
        a, b = v[0], v[1]
        ab = b - a
        denom = float(ab @ ab)
        t = ((pts - a) @ ab) / denom
        proj = a + np.clip(t, 0.0, 1.0)[:, None] * ab
        return np.linalg.norm(pts - proj, axis=1) <= tol
    ok = np.ones(pts.shape[0], dtype=bool)
    for i in range(v.shape[0]):
        a, b = v[i], v[(i + 1) % v.shape[0]]
        s = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        ok &= s >= -tol
    return ok


def _axes_of(poly: ConvexPolygon):
    v = poly.vertices
    if poly.degeneracy == "point":
        return np.zeros((0, 2)), v
    if poly.degeneracy == "segment":
        d = v[1] - v[0]
        axes = np.array([[-d[1], d[0]], d])
        return axes, v
    edges = np.roll(v, -1, axis=0) - v
    normals = np.column_stack([-edges[:, 1], edges[:, 0]])
    return normals, v


def polygons_intersect(a: ConvexPolygon, b: ConvexPolygon, tol=0.0) -> bool:
    """Separating-axis test; degenerate shapes contribute direction axes too."""
    axes = np.vstack([_axes_of(a)[0], _axes_of(b)[0]])
    if axes.shape[0] == 0:  # two points
        return bool(np.all(np.abs(a.vertices[0] - b.vertices[0]) <= tol))
    for ax in axes:
        n = np.linalg.norm(ax)
        if n == 0.0:
            continue
        ax = ax / n
        pa = a.vertices @ ax
        pb = b.vertices @ ax
        if pa.max() < pb.min() - tol or pb.max() < pa.min() - tol:
            return False
    return True


def rect_polygon(lo, hi) -> ConvexPolygon:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    v = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    return ConvexPolygon(v)


def rect_inside_polygon(lo, hi, poly: ConvexPolygon, tol=1e-12) -> bool:
    """A rect lies inside a convex polygon iff all 4 corners do."""
    corners = rect_polygon(lo, hi).vertices
    return bool(np.all(polygon_contains(poly, corners, tol)))


def rect_intersects_polygon(lo, hi, poly: ConvexPolygon, tol=0.0) -> bool:
    return polygons_intersect(rect_polygon(lo, hi), poly, tol)


def clip_polygon_halfplane(v, n, off):
    """Sutherland-Hodgman clip of polygon v by halfplane {x : n.x <= off}."""
    out = []
    k = v.shape[0]
    for i in range(k):
        a, b = v[i], v[(i + 1) % k]
        da, db = n @ a - off, n @ b - off
        if da <= 0:
            out.append(a)
            if db > 0:
                t = da / (da - db)
                out.append(a + t * (b - a))
        elif db <= 0:
            t = da / (da - db)
            out.append(a + t * (b - a))
    return np.array(out) if out else np.zeros((0, 2))


def clip_polygon_to_rect(poly: ConvexPolygon, lo, hi):
    """Convex clip; returns vertex array (possibly empty)."""
    v = poly.vertices
    if poly.degeneracy != "polygon":
        inside = polygon_contains(rect_polygon(lo, hi), v, 1e-12)
        return v[inside]
    for n, off in (
        (np.array([1.0, 0.0]), hi[0]),
        (np.array([-1.0, 0.0]), -lo[0]),
        (np.array([0.0, 1.0]), hi[1]),
        (np.array([0.0, -1.0]), -lo[1]),
    ):
        v = clip_polygon_halfplane(v, n, off)
        if v.shape[0] == 0:
            return v
    return v


def support(poly: ConvexPolygon, dirs):
    """Support function h(d) = max_v d.v for each row of dirs."""
    return (dirs @ poly.vertices.T).max(axis=1)


def minkowski_expand(poly: ConvexPolygon, eps: float, arc_step=np.pi / 16) -> ConvexPolygon:
    """Conservative outer polygon for poly (+) B_eps(0).

    Every direction d contributes the supporting halfplane
    {x : d.x <= h_poly(d) + eps}, which contains the exact disc sum; the
    intersection of halfplanes over edge normals plus a uniform angular grid
    therefore over-approximates it. eps = 0 returns the polygon unchanged.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0.0:
        return poly
    angles = set(np.arange(0.0, 2 * np.pi, arc_step).tolist())
    axes, _ = _axes_of(poly)
    for ax in axes:
        n = np.linalg.norm(ax)
        if n > 0:
            a = float(np.arctan2(ax[1], ax[0])) % (2 * np.pi)
            angles.add(a)
            angles.add((a + np.pi) % (2 * np.pi))
    ang = np.array(sorted(angles))
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    offs = support(poly, dirs) + eps
    # consecutive supporting lines intersect at the outer polygon's vertices
    verts = []
    m = dirs.shape[0]
    for i in range(m):
        n1, o1 = dirs[i], offs[i]
        n2, o2 = dirs[(i + 1) % m], offs[(i + 1) % m]
        det = n1[0] * n2[1] - n1[1] * n2[0]
        if abs(det) < 1e-14:
            continue
        x = (o1 * n2[1] - o2 * n1[1]) / det
        y = (n1[0] * o2 - n2[0] * o1) / det
        verts.append((x, y))
    return convex_hull(np.array(verts))


def polygon_centroid(poly: ConvexPolygon):
    return poly.vertices.mean(axis=0)

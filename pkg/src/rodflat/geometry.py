"""Geometric primitives with analytic gradients, the fixed triangulation used by
the no-overlap constraint, and exhaustive rod-overlap detection.

Gradient conventions
--------------------
Scalar helpers return gradients flattened point by point, e.g. a triangle
gradient is ``(dx1, dy1, dx2, dy2, dx3, dy3)``. The batch helpers return arrays
of shape ``(n, k, 2)`` (``k`` points per primitive, last axis ``(d/dx, d/dy)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

EPS_AREA = 1e-14  # floor on 16*Area^2 inside the Heron square root


class DegenerateGeometry(ValueError):
    """Raised when a gradient is undefined (coincident points, zero-length arm)."""


# ----------------------------------------------------------------- lengths


def segment_length_and_grad(p, q) -> tuple[float, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = p - q
    length = float(np.hypot(d[0], d[1]))
    if length == 0.0:
        raise DegenerateGeometry("coincident segment endpoints")
    g = d / length
    return length, np.array([g[0], g[1], -g[0], -g[1]])


def segment_lengths(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batch lengths ``|p - q|`` and ``dL/dp`` (``dL/dq`` is its negation)."""
    d = p - q
    length = np.hypot(d[:, 0], d[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        g = d / length[:, None]
    return length, g


# ------------------------------------------------------------------ angles


def cos_angles(apex: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine of the angle at ``apex`` between arms to ``b`` and ``c``.

    Works for 2D or 3D points. Returns ``(cos, grad)`` with ``grad`` of shape
    ``(n, 3, dim)`` ordered (apex, b, c), assembled by the quotient rule from
    the partials of ``a.b``, ``|a|`` and ``|b|``.
    """
    a_vec = b - apex
    b_vec = c - apex
    dot = np.einsum("ij,ij->i", a_vec, b_vec)
    na = np.linalg.norm(a_vec, axis=1)
    nb = np.linalg.norm(b_vec, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = dot / (na * nb)
        # d(dot): apex -> 2*apex - b - c, b -> c - apex, c -> b - apex
        dc = np.stack([-(a_vec + b_vec), b_vec, a_vec], axis=1)
        ua = a_vec / na[:, None]
        ub = b_vec / nb[:, None]
        zero = np.zeros_like(ua)
        dna = np.stack([-ua, ua, zero], axis=1)
        dnb = np.stack([-ub, zero, ub], axis=1)
        nab = (na * nb)[:, None, None]
        grad = (dc * nab - dot[:, None, None] * (dna * nb[:, None, None] + dnb * na[:, None, None])) / nab**2
    return np.clip(cos, -1.0, 1.0) if cos.size else cos, grad


def cos_angle_and_grad(apex, b, c) -> tuple[float, np.ndarray]:
    pts = [np.atleast_2d(np.asarray(x, dtype=float)) for x in (apex, b, c)]
    if np.allclose(pts[0], pts[1], rtol=0, atol=0) or np.allclose(pts[0], pts[2], rtol=0, atol=0):
        raise DegenerateGeometry("zero-length arm")
    cos, grad = cos_angles(*pts)
    return float(cos[0]), grad[0].ravel()


# ------------------------------------------------------------------- areas


def _heron_product(l12, l23, l31):
    """16 * Area^2 via Kahan's ordering of Heron's product (stable for needles)."""
    s = np.sort(np.stack([l12, l23, l31], axis=-1), axis=-1)
    c, b, a = s[..., 0], s[..., 1], s[..., 2]
    prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    return np.maximum(prod, 0.0)


def heron_areas(p1, p2, p3, floor: float = EPS_AREA, form: str = "closed"):
    """Batch Heron areas and gradients.

    Returns ``(area, grad, sliver)``; ``grad`` has shape ``(n, 3, 2)`` and
    ``sliver`` flags triangles whose Heron product fell under ``floor``.

    ``form="closed"`` differentiates Heron's formula through the three side
    lengths (the denominator is floored at ``floor`` for slivers).
    ``form="signed"`` uses ``sign(A) * grad(A_signed)``, which is the same
    quantity wherever the triangle is non-degenerate but avoids the
    cancellation of the closed form on thin triangles; a collinear triangle
    gets the zero subgradient.
    """
    l12, g12 = segment_lengths(p1, p2)
    l23, g23 = segment_lengths(p2, p3)
    l31, g31 = segment_lengths(p3, p1)
    prod = _heron_product(l12, l23, l31)
    area = 0.25 * np.sqrt(prod)
    sliver = prod < floor
    if form == "signed":
        p1, p2, p3 = (np.asarray(v, dtype=float) for v in (p1, p2, p3))
        sign = np.sign(_orient(p1, p2, p3))[:, None]

        def perp(d):  # gradient of the signed area w.r.t. the opposite vertex
            return 0.5 * np.column_stack([d[:, 1], -d[:, 0]])

        grad = sign[:, None] * np.stack([perp(p2 - p3), perp(p3 - p1), perp(p1 - p2)], axis=1)
        return area, grad, sliver
    if form != "closed":
        raise ValueError(f"unknown gradient form {form!r}")
    denom = 8.0 * np.sqrt(np.maximum(prod, floor))
    w12 = 4 * l12 * (l23**2 + l31**2 - l12**2)
    w23 = 4 * l23 * (l31**2 + l12**2 - l23**2)
    w31 = 4 * l31 * (l12**2 + l23**2 - l31**2)
    g12 = np.nan_to_num(g12)
    g23 = np.nan_to_num(g23)
    g31 = np.nan_to_num(g31)
    # dL12/dp1 = g12, dL12/dp2 = -g12; dL23/dp2 = g23, /dp3 = -g23; dL31/dp3 = g31, /dp1 = -g31
    with np.errstate(divide="ignore", invalid="ignore"):
        t12 = (w12 / denom)[:, None] * g12
        t23 = (w23 / denom)[:, None] * g23
        t31 = (w31 / denom)[:, None] * g31
        grad = np.stack([t12 - t31, t23 - t12, t31 - t23], axis=1)
    return area, grad, sliver


def heron_area_and_grad(p1, p2, p3) -> tuple[float, np.ndarray]:
    """Heron area and its gradient.

    For a collinear triangle the area is 0 and the gradient is all-NaN (the
    closed-form denominator vanishes).
    """
    pts = [np.atleast_2d(np.asarray(x, dtype=float)) for x in (p1, p2, p3)]
    area, grad, _ = heron_areas(*pts, floor=0.0)
    if area[0] == 0.0:
        return 0.0, np.full(6, np.nan)
    return float(area[0]), grad[0].ravel()


def shoelace_area_and_grad(points) -> tuple[float, np.ndarray]:
    """Signed polygon area (CCW positive) and ``(s, 2)`` gradient."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise ValueError("shoelace needs at least 3 points")
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    xp, yp = np.roll(x, 1), np.roll(y, 1)
    area = 0.5 * float(np.sum(x * yn - xn * y))
    grad = 0.5 * np.column_stack([yn - yp, xp - xn])
    return area, grad


def triangle_signed_areas(coords: np.ndarray, tris: np.ndarray) -> np.ndarray:
    a, b, c = coords[tris[:, 0]], coords[tris[:, 1]], coords[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


# ------------------------------------------------------------ triangulation


class TriangulationError(ValueError):
    pass


@dataclass(frozen=True)
class Triangulation:
    """Fixed triangle combinatorics over all nodes, bounded by ``boundary``."""

    triangles: np.ndarray
    boundary: tuple[int, ...]
    stage: str = "initial"

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def area_residual(self, coords: np.ndarray) -> float:
        """``sum Heron(T_i) - shoelace(B)`` at ``coords``."""
        t = self.triangles
        area, _, _ = heron_areas(coords[t[:, 0]], coords[t[:, 1]], coords[t[:, 2]])
        return float(area.sum() - shoelace_area_and_grad(coords[list(self.boundary)])[0])


def polygon_is_simple(pts: np.ndarray) -> bool:
    n = len(pts)
    segs = np.arange(n)
    edges = np.column_stack([segs, (segs + 1) % n])
    return not detect_overlaps(pts, edges)


def build_triangulation(coords: np.ndarray, boundary) -> Triangulation:
    """Constrained Delaunay triangulation of all nodes, clipped to the boundary.

    The boundary cycle enters as constraint segments; triangles outside it are
    discarded. Every node must end up as a triangle vertex.
    """
    import triangle

    coords = np.asarray(coords, dtype=float)
    loop = [int(i) for i in boundary]
    bpts = coords[loop]
    if not polygon_is_simple(bpts):
        raise TriangulationError("boundary polygon is not simple")
    segs = np.column_stack([loop, np.roll(loop, -1)])
    out = triangle.triangulate({"vertices": np.array(coords), "segments": segs}, "pQ")
    if len(out["vertices"]) != len(coords):
        raise TriangulationError(
            "triangulator inserted extra points (coincident nodes or a node on the boundary)"
        )
    tris = np.asarray(out["triangles"], dtype=np.int64)
    # keep CCW orientation with respect to the boundary's own orientation
    if shoelace_area_and_grad(bpts)[0] < 0:
        tris = tris[:, ::-1]
    missing = np.setdiff1d(np.arange(len(coords)), tris.ravel())
    if len(missing):
        raise TriangulationError(f"nodes {missing.tolist()[:5]} lie outside the boundary polygon")
    tri = Triangulation(tris, tuple(loop))
    area_b = abs(shoelace_area_and_grad(bpts)[0])
    if abs(tri.area_residual(coords)) > 1e-9 * area_b:
        raise TriangulationError("triangle areas do not sum to the boundary area")
    return tri


# ---------------------------------------------------------- overlap detection


@dataclass(frozen=True)
class OverlapRecord:
    """Two non-adjacent rods that intersect.

    ``points`` = (P1, P2, P3, P4): P1-P2 is edge ``edges[0]`` and P3-P4 is
    edge ``edges[1]``; P2 and P3 are the endpoints a correction may move.
    """

    edges: tuple[int, int]
    point: tuple[float, float]
    points: tuple[int, int, int, int]


def _orient_exact(a, b, c) -> int:
    ax, ay = Fraction(a[0]), Fraction(a[1])
    det = (Fraction(b[0]) - ax) * (Fraction(c[1]) - ay) - (Fraction(b[1]) - ay) * (Fraction(c[0]) - ax)
    return (det > 0) - (det < 0)


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _side(a, b, c, tol):
    """Sign of orient(a, b, c) with points within ``tol`` of line ab reported as 0.

    Near-zero determinants are re-evaluated exactly so the result does not
    depend on floating rounding.
    """
    det = _orient(a, b, c)
    ln = np.hypot(b[..., 0] - a[..., 0], b[..., 1] - a[..., 1])
    scale = np.maximum.reduce([np.abs(a).max(-1), np.abs(b).max(-1), np.abs(c).max(-1), np.ones_like(ln)])
    err = 8 * np.finfo(float).eps * scale**2
    sign = np.sign(det)
    flat = np.abs(det) <= tol * ln
    near = (np.abs(det) <= err) & ~flat  # tolerance already decides the flat ones
    for k in np.flatnonzero(near):
        sign[k] = _orient_exact(a[k], b[k], c[k])
    sign[flat] = 0
    return sign


def segments_intersect(a, b, c, d, tol: float = 0.0) -> np.ndarray:
    """Elementwise test of segment ``a[k]b[k]`` against ``c[k]d[k]``.

    Touching (within ``tol``) counts as intersecting. Arrays have shape
    ``(n, 2)``; the caller is responsible for skipping pairs that share an
    endpoint.
    """
    a, b, c, d = (np.asarray(v, dtype=float).reshape(-1, 2) for v in (a, b, c, d))
    o1 = _side(a, b, c, tol)
    o2 = _side(a, b, d, tol)
    o3 = _side(c, d, a, tol)
    o4 = _side(c, d, b, tol)
    hit = (o1 * o2 <= 0) & (o3 * o4 <= 0)
    colin = (o1 == 0) & (o2 == 0)
    if np.any(colin):
        # collinear pairs intersect only if their projections on ab overlap
        r = b - a
        t_c = np.einsum("ij,ij->i", c - a, r)
        t_d = np.einsum("ij,ij->i", d - a, r)
        rr = np.einsum("ij,ij->i", r, r)
        ln = np.sqrt(rr)
        overlap = (np.maximum(t_c, t_d) >= -tol * ln) & (np.minimum(t_c, t_d) <= rr + tol * ln)
        hit = np.where(colin, overlap, hit)
    return hit


def _intersection_point(a, b, c, d):
    r = b - a
    s = d - c
    den = r[0] * s[1] - r[1] * s[0]
    if abs(den) > 1e-14 * (np.hypot(*r) * np.hypot(*s)):
        t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / den
        t = min(max(t, 0.0), 1.0)
        return a + t * r
    # collinear overlap: midpoint of the shared interval
    rr = float(r @ r) or 1.0
    ts = sorted([0.0, 1.0])
    tc = sorted([float((c - a) @ r) / rr, float((d - a) @ r) / rr])
    lo, hi = max(ts[0], tc[0]), min(ts[1], tc[1])
    return a + 0.5 * (lo + hi) * r


def _pick_moving(i: int, j: int, degree) -> tuple[int, int]:
    """Order an edge as (fixed, moving): the lower-degree endpoint moves."""
    if degree is None:
        return i, j
    if (degree[j], j) <= (degree[i], i):
        return i, j
    return j, i


def detect_overlaps(coords, edges, degree=None, tol: float | None = None) -> list[OverlapRecord]:
    """Every pair of non-adjacent segments that cross or touch.

    Touching within ``tol`` (default ``1e-12`` times the bounding-box diagonal)
    counts. Records are sorted by edge pair.
    """
    coords = np.asarray(coords, dtype=float)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) < 2:
        return []
    if tol is None:
        diag = float(np.hypot(*np.ptp(coords, axis=0))) if len(coords) else 0.0
        tol = 1e-12 * diag
    pa = coords[edges[:, 0]]
    pb = coords[edges[:, 1]]
    lo = np.minimum(pa, pb) - tol
    hi = np.maximum(pa, pb) + tol
    order = np.argsort(lo[:, 0], kind="stable")
    lo_sorted = lo[order, 0]
    found: list[tuple[int, int]] = []
    for rank, i in enumerate(order):
        stop = np.searchsorted(lo_sorted, hi[i, 0], side="right")
        cand = order[rank + 1 : stop]
        if len(cand) == 0:
            continue
        box = (lo[cand, 1] <= hi[i, 1]) & (hi[cand, 1] >= lo[i, 1])
        cand = cand[box]
        shared = (
            (edges[cand, 0] == edges[i, 0])
            | (edges[cand, 0] == edges[i, 1])
            | (edges[cand, 1] == edges[i, 0])
            | (edges[cand, 1] == edges[i, 1])
        )
        cand = cand[~shared]
        if len(cand) == 0:
            continue
        a = np.broadcast_to(pa[i], (len(cand), 2))
        b = np.broadcast_to(pb[i], (len(cand), 2))
        hit = segments_intersect(a, b, pa[cand], pb[cand], tol)
        for j in cand[hit]:
            found.append((int(min(i, j)), int(max(i, j))))
    found.sort()
    records = []
    for e1, e2 in found:
        p1, p2 = _pick_moving(int(edges[e1, 0]), int(edges[e1, 1]), degree)
        p4, p3 = _pick_moving(int(edges[e2, 0]), int(edges[e2, 1]), degree)
        pt = _intersection_point(coords[p1], coords[p2], coords[p3], coords[p4])
        records.append(OverlapRecord((e1, e2), (float(pt[0]), float(pt[1])), (p1, p2, p3, p4)))
    return records


def count_overlaps(coords, edges) -> int:
    return len(detect_overlaps(coords, edges))

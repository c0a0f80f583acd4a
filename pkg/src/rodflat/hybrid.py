"""Hybrid structures: fill surface regions with auxiliary rods.

A surface region is a closed loop of existing vertices. It is triangulated
on its best-fit plane and every triangulation edge that is not already a rod
becomes a new "fill" rod, so the flattening constraints also preserve the
region's shape. Loops with more than 8 vertices get interior Steiner points
at roughly the median rod length; their heights are interpolated
harmonically from the loop.
"""

from __future__ import annotations

import copy

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .geometry import polygon_is_simple
from .structure import RodStructure, StructureError, make_structure

MAX_NORMAL_DEVIATION_DEG = 60.0
STEINER_THRESHOLD = 8


class RegionError(StructureError):
    pass


def best_fit_frame(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and orthonormal rows ``(u, v, n)`` of the least-squares plane."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c)
    u, v, n = vt
    if np.dot(np.cross(u, v), n) < 0:
        v = -v
    return c, np.vstack([u, v, n])


def _triangulate_loop(uv: np.ndarray, max_area: float | None):
    import triangle

    k = len(uv)
    segs = np.column_stack([np.arange(k), (np.arange(k) + 1) % k])
    opts = "pQY"
    if max_area is not None:
        opts = f"pqQYa{max_area:.17g}"
    out = triangle.triangulate({"vertices": np.array(uv), "segments": segs}, opts)
    return np.asarray(out["vertices"], dtype=float), np.asarray(out["triangles"], dtype=np.int64)


def _harmonic_heights(n_loop: int, n_total: int, tris: np.ndarray, loop_h: np.ndarray) -> np.ndarray:
    """Uniform-Laplacian interpolation of loop heights to Steiner vertices."""
    h = np.zeros(n_total)
    h[:n_loop] = loop_h
    if n_total == n_loop:
        return h
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    w = sparse.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), (n_total, n_total)).tocsr()
    lap = sparse.diags(np.asarray(w.sum(axis=1)).ravel()) - w
    free = np.arange(n_loop, n_total)
    fixed = np.arange(n_loop)
    a = lap[free][:, free].tocsc()
    b = -(lap[free][:, fixed] @ h[fixed])
    h[free] = np.atleast_1d(spsolve(a, b))
    return h


def mesh_region(s: RodStructure, loop, target_length: float):
    """Triangulate one region.

    Returns ``(new_points, triangles)``: 3D positions of the Steiner points
    and triangles over the index space ``loop + new points`` (local indices
    ``0..len(loop)-1`` are the loop vertices).
    """
    loop = [int(i) for i in loop]
    if len(loop) < 3:
        raise RegionError("region needs at least 3 vertices", "surface_regions")
    if len(set(loop)) != len(loop):
        raise RegionError("region loop repeats a vertex", "surface_regions")
    pts = s.vertices[loop]
    c, frame = best_fit_frame(pts)
    uv = (pts - c) @ frame[:2].T
    if not polygon_is_simple(uv):
        raise RegionError("region loop is not simple on its best-fit plane", "surface_regions")
    area_t = None
    if len(loop) > STEINER_THRESHOLD:
        area_t = float(np.sqrt(3.0) / 4.0 * target_length**2)
    verts, tris = _triangulate_loop(uv, area_t)
    if len(verts) < len(loop) or not np.allclose(verts[: len(loop)], uv):
        raise RegionError("triangulator changed the region loop", "surface_regions")
    heights = _harmonic_heights(len(loop), len(verts), tris, (pts - c) @ frame[2])
    xyz = c + verts @ frame[:2] + heights[:, None] * frame[2]
    xyz[: len(loop)] = pts
    # reject regions too folded to be represented on one plane
    a = xyz[tris[:, 1]] - xyz[tris[:, 0]]
    b = xyz[tris[:, 2]] - xyz[tris[:, 0]]
    nrm = np.cross(a, b)
    lens = np.linalg.norm(nrm, axis=1)
    ok = lens > 0
    cosd = np.abs(nrm[ok] @ frame[2]) / lens[ok]
    worst = float(np.degrees(np.arccos(np.clip(cosd.min(initial=1.0), -1.0, 1.0))))
    if worst > MAX_NORMAL_DEVIATION_DEG:
        raise RegionError(
            f"region is too folded for a planar fill: a triangle normal deviates {worst:.1f} deg "
            f"from the best-fit plane (limit {MAX_NORMAL_DEVIATION_DEG:.0f})",
            "surface_regions",
        )
    return xyz[len(loop) :], tris


def mesh_surface_regions(s: RodStructure) -> RodStructure:
    """Append fill rods (and Steiner vertices) for every surface region.

    Core vertices and rods keep their indices; new vertices and rods are
    appended. ``metadata["hybrid"]`` records which rods and vertices are fill
    so metrics can report them separately. The regions move into that record,
    so a second call is a no-op; a structure whose regions need no new rods
    is returned unchanged.
    """
    if not s.surface_regions:
        return s
    target = float(np.median(s.rest_lengths())) if s.p else 1.0
    verts = [tuple(v) for v in s.vertices]
    edges = [tuple(int(i) for i in e) for e in s.edges]
    present = set(edges)
    steiner: list[int] = []
    for loop in s.surface_regions:
        new_pts, tris = mesh_region(s, loop, target)
        ids = [int(i) for i in loop]
        for p in new_pts:
            ids.append(len(verts))
            steiner.append(len(verts))
            verts.append(tuple(float(x) for x in p))
        local = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        for a, b in local:
            key = (min(ids[a], ids[b]), max(ids[a], ids[b]))
            if key not in present:
                present.add(key)
                edges.append(key)
    # deterministic order for the appended rods
    core = edges[: s.p]
    fill = sorted(edges[s.p :])
    if not fill and not steiner:
        return s  # every fill edge already exists as a rod
    meta = copy.deepcopy(s.metadata)
    prev = meta.get("hybrid", {})
    meta["hybrid"] = {
        "fill_edges": list(prev.get("fill_edges", [])) + list(range(s.p, s.p + len(fill))),
        "steiner_vertices": list(prev.get("steiner_vertices", [])) + steiner,
        "regions": list(prev.get("regions", [])) + [list(r) for r in s.surface_regions],
    }
    return make_structure(verts, core + fill, s.boundary, (), s.name, s.units, meta)

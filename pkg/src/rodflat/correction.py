"""Geometric overlap correction between optimisation rounds.

Each crossing of two rods ``P1-P2`` and ``P4-P3`` (``P2``, ``P3`` being the
endpoints allowed to move) is resolved by sliding ``P2`` on the circle about
``P1`` and ``P3`` on the circle about ``P4``, so both crossing rods keep their
length. A candidate pair is accepted only if none of the edges it moves then
crosses another rod. If no pair on the circles works, the two points are
sampled along angle bisectors at the crossing instead, giving up the two rod
lengths. At most ``max_sweeps`` sweeps are made and a sweep that increases the
overlap count is rolled back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .embedding import PlanarEmbedding
from .geometry import OverlapRecord, detect_overlaps, segments_intersect
from .structure import RodStructure

log = logging.getLogger(__name__)

N_BISECTOR_RADII = 64
PAIR_CHUNK = 512


@dataclass
class CorrectionContext:
    """Mutable state shared by the resolutions of one correction call."""

    coords: np.ndarray
    structure: RodStructure
    rest: np.ndarray
    samples: int = 360
    sweep: int = 0
    max_sweeps: int = 10
    tol: float = 0.0
    _incident: list = field(default_factory=list, repr=False)
    _graph: sparse.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        s = self.structure
        self._incident = [[] for _ in range(s.m)]
        for k, (i, j) in enumerate(s.edges):
            self._incident[i].append(k)
            self._incident[j].append(k)
        if not self.tol:
            diag = float(np.hypot(*np.ptp(self.coords, axis=0)))
            self.tol = 1e-12 * diag

    def incident(self, v: int) -> list[int]:
        return self._incident[v]

    def weighted_graph(self) -> sparse.csr_matrix:
        """Rod graph weighted by current 2D edge lengths (rebuilt per sweep)."""
        if self._graph is None:
            e = self.structure.edges
            w = np.linalg.norm(self.coords[e[:, 0]] - self.coords[e[:, 1]], axis=1)
            w = np.maximum(w, 1e-300)  # csgraph drops explicit zeros
            m = self.structure.m
            self._graph = sparse.csr_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), (m, m))
        return self._graph

    def invalidate(self):
        self._graph = None


@dataclass
class Resolution:
    """Outcome of one attempt: new positions for ``P2``/``P3`` or ``unresolved``."""

    status: str  # "primary" | "fallback" | "unresolved" | "stale"
    p2: np.ndarray | None = None
    p3: np.ndarray | None = None
    path: list[int] = field(default_factory=list)
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0


def _leg(graph, a: int, b: int) -> list[int]:
    _, pred = dijkstra(graph, directed=False, indices=a, return_predecessors=True)
    if pred[b] < 0 and a != b:
        raise ValueError(f"no path between {a} and {b}")
    out = [b]
    while out[-1] != a:
        out.append(int(pred[out[-1]]))
    return out[::-1]


def shortest_path_through(ctx: CorrectionContext, p1: int, p2: int, p3: int, p4: int) -> list[int]:
    """Shortest walk ``P1 -> P2 -> P3 -> P4`` as three concatenated Dijkstra legs."""
    g = ctx.weighted_graph()
    path = _leg(g, p1, p2)
    path += _leg(g, p2, p3)[1:]
    path += _leg(g, p3, p4)[1:]
    return path


def _path_neighbour(path: list[int], v: int, skip: int) -> int | None:
    """Vertex next to ``v`` on the path other than ``skip`` (first occurrence)."""
    k = path.index(v)
    for w in (path[k + 1] if k + 1 < len(path) else None, path[k - 1] if k > 0 else None):
        if w is not None and w != skip and w != v:
            return w
    return None


def _rest_of(ctx: CorrectionContext, a: int, b: int) -> float:
    """3D rest length of rod ``a-b`` or, if absent, the 3D distance."""
    return float(np.linalg.norm(ctx.structure.vertices[a] - ctx.structure.vertices[b]))


def _moving_edges_ok(ctx: CorrectionContext, v: int, other: int, cand: np.ndarray) -> np.ndarray:
    """For each candidate position of ``v``: do its rods avoid every static rod?

    Rods incident to ``other`` (the second moving point) are excluded here and
    handled by :func:`_pair_ok`.
    """
    s = ctx.structure
    edges = s.edges
    xy = ctx.coords
    own = [k for k in ctx.incident(v) if other not in edges[k]]
    ok = np.ones(len(cand), dtype=bool)
    if not own:
        return ok
    skip = set(ctx.incident(v)) | set(ctx.incident(other))
    static = np.array([k for k in range(s.p) if k not in skip], dtype=np.int64)
    if len(static) == 0:
        return ok
    ends = np.array([edges[k, 0] if edges[k, 1] == v else edges[k, 1] for k in own])
    # broad phase: static rods touching the box swept by the moving rods
    pts = np.vstack([cand, xy[ends]])
    lo = pts.min(axis=0) - ctx.tol
    hi = pts.max(axis=0) + ctx.tol
    sa, sb = xy[edges[static, 0]], xy[edges[static, 1]]
    box = np.all(np.minimum(sa, sb) <= hi, axis=1) & np.all(np.maximum(sa, sb) >= lo, axis=1)
    static = static[box]
    if len(static) == 0:
        return ok
    sa, sb = xy[edges[static, 0]], xy[edges[static, 1]]
    for w, k in zip(ends, own):
        # rods sharing the fixed endpoint w cannot cross this rod in their interior
        keep = ~np.any(edges[static] == w, axis=1)
        st = static[keep]
        if len(st) == 0:
            continue
        n, q = len(cand), len(st)
        a = np.repeat(cand, q, axis=0)
        b = np.broadcast_to(xy[w], (n * q, 2))
        hit = segments_intersect(a, b, np.tile(sa[keep], (n, 1)), np.tile(sb[keep], (n, 1)), ctx.tol)
        ok &= ~hit.reshape(n, q).any(axis=1)
    return ok


def _pair_ok(ctx: CorrectionContext, p2: int, p3: int, c2: np.ndarray, c3: np.ndarray, i2, i3) -> np.ndarray:
    """Interaction test for candidate pairs ``(c2[i2], c3[i3])``.

    Checks rods of ``P2`` against rods of ``P3`` (both moved) and, if a rod
    ``P2-P3`` exists, that rod against every static rod.
    """
    edges = ctx.structure.edges
    xy = ctx.coords
    n = len(i2)
    ok = np.ones(n, dtype=bool)
    e2 = [k for k in ctx.incident(p2) if p3 not in edges[k]]
    e3 = [k for k in ctx.incident(p3) if p2 not in edges[k]]
    w2 = [edges[k, 0] if edges[k, 1] == p2 else edges[k, 1] for k in e2]
    w3 = [edges[k, 0] if edges[k, 1] == p3 else edges[k, 1] for k in e3]
    a2, a3 = c2[i2], c3[i3]
    for u in w2:
        for w in w3:
            if u == w:
                continue
            hit = segments_intersect(a2, np.broadcast_to(xy[u], (n, 2)), a3, np.broadcast_to(xy[w], (n, 2)), ctx.tol)
            ok &= ~hit
    shared = [k for k in ctx.incident(p2) if p3 in edges[k]]
    if shared:
        skip = set(ctx.incident(p2)) | set(ctx.incident(p3))
        static = np.array([k for k in range(len(edges)) if k not in skip], dtype=np.int64)
        for k in static:
            a, b = xy[edges[k, 0]], xy[edges[k, 1]]
            idx = np.flatnonzero(ok)
            if len(idx) == 0:
                break
            hit = segments_intersect(
                a2[idx], a3[idx], np.broadcast_to(a, (len(idx), 2)), np.broadcast_to(b, (len(idx), 2)), ctx.tol
            )
            ok[idx[hit]] = False
        # the shared rod also meets the other rods at P2 and P3 only at endpoints
        for u in w2:
            idx = np.flatnonzero(ok)
            hit = segments_intersect(a2[idx], np.broadcast_to(xy[u], (len(idx), 2)), a3[idx], a3[idx], ctx.tol)
            ok[idx[hit & ~np.all(np.isclose(a3[idx], a2[idx]), axis=1)]] = False
        for w in w3:
            idx = np.flatnonzero(ok)
            hit = segments_intersect(a3[idx], np.broadcast_to(xy[w], (len(idx), 2)), a2[idx], a2[idx], ctx.tol)
            ok[idx[hit & ~np.all(np.isclose(a3[idx], a2[idx]), axis=1)]] = False
    return ok


def _select(ctx, path, p1, p2, p3, p4, c2, c3):
    """Best feasible pair by length error to the neighbouring path vertices.

    Returns ``(i2, i3)`` sample indices or None; ties go to the lowest
    ``(i2, i3)`` in sample order.
    """
    f2 = _moving_edges_ok(ctx, p2, p3, c2)
    f3 = _moving_edges_ok(ctx, p3, p2, c3)
    i2 = np.flatnonzero(f2)
    i3 = np.flatnonzero(f3)
    if len(i2) == 0 or len(i3) == 0:
        return None
    n2 = _path_neighbour(path, p2, p1)
    n3 = _path_neighbour(path[::-1], p3, p4)
    g2, g3 = np.repeat(i2, len(i3)), np.tile(i3, len(i2))
    cost = np.zeros(len(g2))
    if n2 == p3:
        # P2 and P3 are adjacent on the path: a single shared length error
        l23 = _rest_of(ctx, p2, p3)
        cost += np.abs(np.linalg.norm(c2[g2] - c3[g3], axis=1) - l23) / l23
    else:
        if n2 is not None:
            l = _rest_of(ctx, p2, n2)
            cost += (np.abs(np.linalg.norm(c2 - ctx.coords[n2], axis=1) - l) / l)[g2]
        if n3 is not None:
            l = _rest_of(ctx, p3, n3)
            cost += (np.abs(np.linalg.norm(c3 - ctx.coords[n3], axis=1) - l) / l)[g3]
    # test pairs cheapest first; the stable sort keeps ties in (i2, i3) order,
    # so the first feasible pair is the argmin over all feasible pairs
    order = np.argsort(cost, kind="stable")
    for start in range(0, len(order), PAIR_CHUNK):
        idx = order[start : start + PAIR_CHUNK]
        ok = _pair_ok(ctx, p2, p3, c2, c3, g2[idx], g3[idx])
        if np.any(ok):
            best = idx[int(np.argmax(ok))]
            return int(g2[best]), int(g3[best])
    return None


def _circle_samples(center: np.ndarray, point: np.ndarray, k: int) -> np.ndarray:
    d = point - center
    r = float(np.hypot(*d))
    t0 = np.arctan2(d[1], d[0])
    t = t0 + 2 * np.pi * np.arange(k) / k
    out = center + r * np.column_stack([np.cos(t), np.sin(t)])
    out[0] = point  # sample 0 is exactly the current position
    return out


def _unit(v):
    n = float(np.hypot(*v))
    return v / n if n > 0 else np.array([1.0, 0.0])


def _bisector_samples(o: np.ndarray, towards: np.ndarray, other: np.ndarray, radius: float) -> np.ndarray:
    """Points on the bisector at ``o`` of the rays towards ``towards`` and ``other``."""
    d = _unit(_unit(towards - o) + _unit(other - o))
    radii = 2 * radius * np.arange(1, N_BISECTOR_RADII + 1) / N_BISECTOR_RADII
    return o + radii[:, None] * d


def resolve_single_overlap(ctx: CorrectionContext, record: OverlapRecord) -> Resolution:
    """Try to remove one crossing by relocating ``P2`` and ``P3``.

    Primary search: ``K`` samples on each length-preserving circle starting
    at the current angle. Fallback: ``P2`` on the bisector at the crossing of
    the rays towards ``P3`` and ``P1`` (the side of rod ``P4-P3`` away from
    ``P2``), and ``P3`` on the bisector of the rays towards ``P4`` and ``P2``;
    64 radii in ``(0, 2 r]``. Positions are not applied here.
    """
    p1, p2, p3, p4 = record.points
    xy = ctx.coords
    e = ctx.structure.edges
    e1, e2 = e[record.edges[0]], e[record.edges[1]]
    still = segments_intersect(xy[e1[0]], xy[e1[1]], xy[e2[0]], xy[e2[1]], ctx.tol)[0]
    if not still:
        return Resolution("stale")
    o = np.asarray(record.point, dtype=float)
    radius = max(float(np.hypot(*(xy[v] - o))) for v in record.points)
    path = shortest_path_through(ctx, p1, p2, p3, p4)
    c2 = _circle_samples(xy[p1], xy[p2], ctx.samples)
    c3 = _circle_samples(xy[p4], xy[p3], ctx.samples)
    pick = _select(ctx, path, p1, p2, p3, p4, c2, c3)
    if pick is not None:
        return Resolution("primary", c2[pick[0]], c3[pick[1]], path, (float(o[0]), float(o[1])), radius)
    b2 = _bisector_samples(o, xy[p3], xy[p1], radius)
    b3 = _bisector_samples(o, xy[p4], xy[p2], radius)
    pick = _select(ctx, path, p1, p2, p3, p4, b2, b3)
    if pick is not None:
        return Resolution("fallback", b2[pick[0]], b3[pick[1]], path, (float(o[0]), float(o[1])), radius)
    return Resolution("unresolved", path=path, center=(float(o[0]), float(o[1])), radius=radius)


@dataclass
class CorrectionResult:
    embedding: PlanarEmbedding
    initial_count: int
    final_count: int
    sweeps: int
    resolved: int
    unresolved: int
    rolled_back: bool


def _records(coords, s: RodStructure, tol) -> list[OverlapRecord]:
    return detect_overlaps(coords, s.edges, degree=s.degrees(), tol=tol)


def correct_overlaps_report(
    emb: PlanarEmbedding, s: RodStructure, samples: int = 360, max_sweeps: int = 10
) -> CorrectionResult:
    """Run the correction loop and report what happened."""
    coords = np.array(emb.coords, dtype=float)
    ctx = CorrectionContext(coords, s, s.rest_lengths(), samples=samples, max_sweeps=max_sweeps)
    records = _records(coords, s, ctx.tol)
    start = len(records)
    count = start
    sweeps = resolved = unresolved = 0
    rolled_back = False
    while count > 0 and sweeps < max_sweeps:
        sweeps += 1
        ctx.sweep = sweeps
        backup = ctx.coords.copy()
        unresolved = 0
        for rec in records:
            ctx.invalidate()
            res = resolve_single_overlap(ctx, rec)
            if res.status in ("primary", "fallback"):
                ctx.coords[rec.points[1]] = res.p2
                ctx.coords[rec.points[2]] = res.p3
                resolved += 1
            elif res.status == "unresolved":
                unresolved += 1
        new_records = _records(ctx.coords, s, ctx.tol)
        log.debug("correction sweep %d: %d -> %d overlaps", sweeps, count, len(new_records))
        if len(new_records) > count:
            ctx.coords[:] = backup
            rolled_back = True
            break
        if len(new_records) == count and np.array_equal(backup, ctx.coords):
            break  # nothing moved; further sweeps would repeat this one
        records, count = new_records, len(new_records)
    out = emb.with_coords(ctx.coords, stage="corrected") if sweeps else emb
    return CorrectionResult(out, start, count, sweeps, resolved, unresolved, rolled_back)


def correct_overlaps(emb: PlanarEmbedding, s: RodStructure, samples: int = 360, max_sweeps: int = 10) -> PlanarEmbedding:
    """Relocate vertices to remove rod crossings; never increases their count."""
    return correct_overlaps_report(emb, s, samples, max_sweeps).embedding

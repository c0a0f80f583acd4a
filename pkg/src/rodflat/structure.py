"""Rod-structure data model, JSON I/O and combinatorial preprocessing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class StructureError(ValueError):
    """Raised when a structure file or object violates the data model."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class RodStructure:
    """A 3D rod network.

    Attributes
    ----------
    vertices : (m, 3) float array of node positions.
    edges : (p, 2) int array, each row sorted ascending.
    boundary : ordered cyclic vertex list, or None when not supplied.
    surface_regions : list of vertex loops filled by auxiliary rods.
    name, units : free-form metadata tags.
    metadata : extra JSON-serialisable data (generator manifests, fill flags).
    """

    vertices: np.ndarray
    edges: np.ndarray
    boundary: tuple[int, ...] | None = None
    surface_regions: tuple[tuple[int, ...], ...] = ()
    name: str = ""
    units: str = "model"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        v.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edges", e)
        if self.boundary is not None:
            object.__setattr__(self, "boundary", tuple(int(i) for i in self.boundary))
        object.__setattr__(
            self,
            "surface_regions",
            tuple(tuple(int(i) for i in r) for r in self.surface_regions),
        )

    @property
    def m(self) -> int:
        return len(self.vertices)

    @property
    def p(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.m)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.m)]
        for i, j in self.edges:
            adj[i].append(int(j))
            adj[j].append(int(i))
        return adj

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.edges)}

    def rest_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.linalg.norm(d, axis=1)


def make_structure(
    vertices,
    edges,
    boundary=None,
    surface_regions=(),
    name: str = "",
    units: str = "model",
    metadata: dict | None = None,
) -> RodStructure:
    """Build a RodStructure and check every invariant; edges are canonicalised."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 3:
        raise StructureError("vertices must be a list of [x, y, z] triples", "vertices")
    if not np.all(np.isfinite(v)):
        raise StructureError("non-finite vertex coordinate", "vertices")
    m = len(v)
    raw = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    seen = set()
    canon = []
    for k, (i, j) in enumerate(raw):
        loc = f"edges[{k}]"
        if not (0 <= i < m and 0 <= j < m):
            raise StructureError(f"dangling index {max(i, j) if max(i, j) >= m else min(i, j)} (m={m})", loc)
        if i == j:
            raise StructureError(f"self-loop at vertex {i}", loc)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise StructureError(f"duplicate edge {key}", loc)
        seen.add(key)
        canon.append(key)
    s = RodStructure(
        vertices=v,
        edges=np.array(canon, dtype=np.int64).reshape(-1, 2),
        boundary=None if boundary is None else tuple(int(b) for b in boundary),
        surface_regions=tuple(tuple(int(i) for i in r) for r in surface_regions),
        name=name,
        units=units,
        metadata=dict(metadata or {}),
    )
    validate(s)
    return s


def validate(s: RodStructure) -> None:
    """Raise StructureError unless ``s`` satisfies all data-model invariants."""
    m = s.m
    if m == 0:
        raise StructureError("structure has no vertices", "vertices")
    if _components(m, s.edges) != 1:
        raise StructureError("edge graph is disconnected", "edges")
    eset = set(s.edge_index())
    if s.boundary is not None:
        b = s.boundary
        if len(b) < 3:
            raise StructureError("boundary needs at least 3 vertices", "boundary")
        for k, i in enumerate(b):
            if not 0 <= i < m:
                raise StructureError(f"dangling index {i} (m={m})", f"boundary[{k}]")
        if len(set(b)) != len(b):
            raise StructureError("boundary repeats a vertex (not a simple cycle)", "boundary")
        for k in range(len(b)):
            a, c = b[k], b[(k + 1) % len(b)]
            if (min(a, c), max(a, c)) not in eset:
                raise StructureError(f"boundary is not cyclic: {a}-{c} is not an edge", f"boundary[{k}]")
    for r, loop in enumerate(s.surface_regions):
        loc = f"surface_regions[{r}]"
        if len(loop) < 3:
            raise StructureError("region loop needs at least 3 vertices", loc)
        if len(set(loop)) != len(loop):
            raise StructureError("region loop is not simple", loc)
        for i in loop:
            if not 0 <= i < m:
                raise StructureError(f"dangling index {i} (m={m})", loc)


def _components(m: int, edges: np.ndarray) -> int:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    if len(edges) == 0:
        return m
    a = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(m, m))
    n, _ = connected_components(a, directed=False)
    return int(n)


# --------------------------------------------------------------------------- I/O


def _fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("cannot serialise non-finite float")
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def dumps(obj: Any, indent: int | None = None, _level: int = 0) -> str:
    """Deterministic JSON writer: sorted keys, floats with 17 significant digits.

    Lists of scalars are written on one line so vertex tables stay compact.
    """
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{json.dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}" for k in sorted(obj, key=str)
        ]
        return _wrap("{", "}", items, indent, _level)
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else list(obj)
        if not seq:
            return "[]"
        parts = [dumps(x, indent, _level + 1) for x in seq]
        if all(not isinstance(x, (dict, list, tuple)) for x in seq):
            return "[" + ", ".join(parts) + "]"
        return _wrap("[", "]", parts, indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if obj is None:
        return "null"
    return json.dumps(obj)


def _wrap(open_: str, close: str, items: list[str], indent: int | None, level: int) -> str:
    if indent is None:
        return open_ + ", ".join(items) + close
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    return open_ + "\n" + ",\n".join(pad + it for it in items) + "\n" + end + close


def to_dict(s: RodStructure) -> dict:
    d: dict[str, Any] = {
        "name": s.name,
        "vertices": s.vertices.tolist(),
        "edges": s.edges.tolist(),
    }
    if s.boundary is not None:
        d["boundary"] = list(s.boundary)
    if s.surface_regions:
        d["surface_regions"] = [list(r) for r in s.surface_regions]
    if s.units != "model":
        d["units"] = s.units
    if s.metadata:
        d["metadata"] = s.metadata
    return d


def serialize_structure(s: RodStructure) -> str:
    return dumps(to_dict(s), indent=1) + "\n"


def parse_structure(text: str) -> RodStructure:
    """Parse and validate a structure JSON document.

    Raises
    ------
    StructureError
        On malformed JSON, wrong field types, dangling indices, a disconnected
        graph or a non-cyclic boundary. The message carries a location.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructureError(f"malformed JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from None
    if not isinstance(doc, dict):
        raise StructureError("top level must be an object", "$")
    for key in ("vertices", "edges"):
        if key not in doc:
            raise StructureError(f"missing required field '{key}'", "$")
    verts = doc["vertices"]
    if not isinstance(verts, list) or any(
        not isinstance(v, list) or len(v) != 3 or not all(isinstance(c, (int, float)) for c in v) for v in verts
    ):
        raise StructureError("vertices must be a list of [x, y, z] number triples", "vertices")
    edges = doc["edges"]
    if not isinstance(edges, list) or any(
        not isinstance(e, list) or len(e) != 2 or not all(isinstance(c, int) for c in e) for e in edges
    ):
        raise StructureError("edges must be a list of [i, j] integer pairs", "edges")
    boundary = doc.get("boundary")
    if boundary is not None and (not isinstance(boundary, list) or not all(isinstance(c, int) for c in boundary)):
        raise StructureError("boundary must be a list of integers", "boundary")
    regions = doc.get("surface_regions") or []
    if not isinstance(regions, list) or any(
        not isinstance(r, list) or not all(isinstance(c, int) for c in r) for r in regions
    ):
        raise StructureError("surface_regions must be a list of integer lists", "surface_regions")
    return make_structure(
        verts if verts else np.zeros((0, 3)),
        edges,
        boundary=boundary,
        surface_regions=regions,
        name=str(doc.get("name", "")),
        units=str(doc.get("units", "model")),
        metadata=doc.get("metadata") or {},
    )


def load_structure(path) -> RodStructure:
    with open(path, encoding="utf-8") as fh:
        return parse_structure(fh.read())


def save_structure(s: RodStructure, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_structure(s))


# ------------------------------------------------------------------- combinatorics


@dataclass(frozen=True)
class ChainDecomposition:
    """Joints (degree >= 3) and the maximal chains between them.

    ``chains`` holds vertex sequences; a closed loop repeats its first vertex
    at the end. ``chain_edges`` holds the matching edge indices.
    """

    joints: frozenset[int]
    chains: tuple[tuple[int, ...], ...]
    chain_edges: tuple[tuple[int, ...], ...]
    degree: tuple[int, ...]


def decompose_chains(s: RodStructure) -> ChainDecomposition:
    deg = s.degrees()
    adj = s.adjacency()
    eidx = s.edge_index()
    joints = frozenset(int(i) for i in np.flatnonzero(deg >= 3))
    breakpoints = {int(i) for i in np.flatnonzero(deg != 2)}
    used = np.zeros(s.p, dtype=bool)
    chains: list[tuple[int, ...]] = []
    chain_edges: list[tuple[int, ...]] = []

    def walk(start: int, nxt: int):
        verts = [start]
        eds = []
        prev, cur = start, nxt
        while True:
            k = eidx[(min(prev, cur), max(prev, cur))]
            used[k] = True
            eds.append(k)
            verts.append(cur)
            if cur in breakpoints or cur == start:
                break
            a, b = adj[cur]
            prev, cur = cur, (b if a == prev else a)
        return tuple(verts), tuple(eds)

    for v in sorted(breakpoints):
        for w in sorted(adj[v]):
            k = eidx[(min(v, w), max(v, w))]
            if not used[k]:
                verts, eds = walk(v, w)
                chains.append(verts)
                chain_edges.append(eds)
    # pure cycles (every vertex degree 2)
    for k in range(s.p):
        if not used[k]:
            i, j = (int(x) for x in s.edges[k])
            verts, eds = walk(i, j)
            chains.append(verts)
            chain_edges.append(eds)
    return ChainDecomposition(joints, tuple(chains), tuple(chain_edges), tuple(int(d) for d in deg))


def boundary_loop(s: RodStructure) -> list[int]:
    """Return the outer boundary cycle.

    An explicit ``s.boundary`` is returned unchanged. Otherwise the convex hull
    of the (x, y) projection is taken (CCW) and consecutive hull vertices are
    joined by shortest paths through degree-2 boundary chains; if two hull
    vertices are not joined this way the structure needs an explicit boundary.
    """
    if s.boundary is not None:
        return list(s.boundary)
    from scipy.spatial import ConvexHull

    xy = s.vertices[:, :2]
    hull = ConvexHull(xy)
    hv = [int(i) for i in hull.vertices]  # CCW for 2D hulls
    on_hull = _points_on_hull(xy, hv)
    adj = s.adjacency()
    loop: list[int] = []
    for k in range(len(hv)):
        a, b = hv[k], hv[(k + 1) % len(hv)]
        seg = _hull_segment_path(xy, adj, a, b, on_hull)
        if seg is None:
            raise StructureError(
                f"hull vertices {a} and {b} are not connected along the boundary; "
                "an explicit 'boundary' field is required",
                "boundary",
            )
        loop.extend(seg[:-1])
    if len(set(loop)) != len(loop):
        raise StructureError("hull boundary is not a simple cycle; supply 'boundary'", "boundary")
    return loop


def _points_on_hull(xy: np.ndarray, hv: list[int]) -> set[int]:
    """Indices of points lying on hull edges (including collinear ones)."""
    scale = float(np.ptp(xy, axis=0).max()) or 1.0
    tol = 1e-9 * scale
    out = set(hv)
    for k in range(len(hv)):
        a, b = xy[hv[k]], xy[hv[(k + 1) % len(hv)]]
        d = b - a
        ln = np.hypot(*d)
        rel = xy - a
        dist = np.abs(d[0] * rel[:, 1] - d[1] * rel[:, 0]) / ln
        t = (rel @ d) / ln**2
        out.update(int(i) for i in np.flatnonzero((dist <= tol) & (t >= -1e-12) & (t <= 1 + 1e-12)))
    return out


def _hull_segment_path(xy, adj, a: int, b: int, on_hull: set[int]) -> list[int] | None:
    """Path a -> b using only vertices on the hull segment [a, b]."""
    d = xy[b] - xy[a]
    ln2 = float(d @ d)
    allowed = {i for i in on_hull if -1e-12 <= float((xy[i] - xy[a]) @ d) / ln2 <= 1 + 1e-12}
    # walk monotonically along the segment direction
    path = [a]
    cur = a
    while cur != b:
        t_cur = float((xy[cur] - xy[a]) @ d)
        cand = [w for w in adj[cur] if w in allowed and float((xy[w] - xy[a]) @ d) > t_cur]
        if not cand:
            return None
        cur = min(cand, key=lambda w: float((xy[w] - xy[a]) @ d))
        path.append(cur)
    return path


"""Deterministic synthetic rod structures (gridshell-like lattices over height fields).

A lattice has ``n`` chain lines in each direction over the square
``[-size/2, size/2]^2``. Crossing points are joints; each span between two
neighbouring crossings is split into ``sub`` rod segments. For ``sub >= 3``
the two vertices next to a joint sit on the chain's tangent line through the
joint, so each chain is straight through its joints and the rods meeting at a
joint are coplanar; remaining span vertices lie on the surface.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .structure import RodStructure, make_structure

KINDS = ("dome", "saddle", "multipeak", "grid", "dome_patch")


def _surface(kind: str, height: float, size: float, seed: int) -> Callable:
    half = size / 2.0
    if kind in ("dome", "dome_patch"):
        return lambda x, y: height * (1.0 - 0.5 * ((x / half) ** 2 + (y / half) ** 2))
    if kind == "saddle":
        return lambda x, y: height * ((x / half) ** 2 - (y / half) ** 2)
    if kind == "multipeak":
        rng = np.random.default_rng(seed)
        centres = rng.uniform(-0.55 * half, 0.55 * half, size=(3, 2))
        amps = height * rng.uniform(0.6, 1.0, size=3)
        sigma = 0.35 * half

        def f(x, y):
            out = 0.0
            for (cx, cy), a in zip(centres, amps):
                out = out + a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
            return out

        return f
    if kind == "grid":
        return lambda x, y: 0.0 * x
    raise ValueError(f"unknown fixture kind {kind!r}")


def _slope(f, x, y, axis, h=1e-6):
    if axis == 0:
        return (f(x + h, y) - f(x - h, y)) / (2 * h)
    return (f(x, y + h) - f(x, y - h)) / (2 * h)


def lattice(
    n: int,
    sub: int,
    surface: Callable,
    size: float = 2.0,
    name: str = "lattice",
    params: dict | None = None,
) -> tuple[RodStructure, dict]:
    """Square lattice of ``n x n`` joints with ``sub`` segments per span.

    Returns the structure and a map ``(axis, i, j) -> vertex list`` of every
    span, used to place surface regions.
    """
    if n < 2:
        raise ValueError("lattice needs n >= 2")
    if sub < 1:
        raise ValueError("sub must be >= 1")
    coords = np.linspace(-size / 2, size / 2, n)
    h = coords[1] - coords[0]
    verts: list[tuple[float, float, float]] = []
    joint = {}
    for j in range(n):
        for i in range(n):
            x, y = coords[i], coords[j]
            joint[i, j] = len(verts)
            verts.append((x, y, float(surface(x, y))))

    def span_point(x0, y0, axis, t):
        """Point at fraction t of the span starting at joint (x0, y0)."""
        d = t * h
        x, y = (x0 + d, y0) if axis == 0 else (x0, y0 + d)
        if sub >= 3 and abs(t - 1.0 / sub) < 1e-12:
            return x, y, float(surface(x0, y0) + d * _slope(surface, x0, y0, axis))
        if sub >= 3 and abs(t - (sub - 1.0) / sub) < 1e-12:
            x1, y1 = (x0 + h, y0) if axis == 0 else (x0, y0 + h)
            return x, y, float(surface(x1, y1) - (h - d) * _slope(surface, x1, y1, axis))
        return x, y, float(surface(x, y))

    edges = []
    span_verts: dict[tuple[int, int, int], list[int]] = {}
    for axis in (0, 1):
        for j in range(n):
            for i in range(n - 1):
                a = joint[(i, j)] if axis == 0 else joint[(j, i)]
                b = joint[(i + 1, j)] if axis == 0 else joint[(j, i + 1)]
                x0, y0 = verts[a][0], verts[a][1]
                chain = [a]
                for k in range(1, sub):
                    chain.append(len(verts))
                    verts.append(span_point(x0, y0, axis, k / sub))
                chain.append(b)
                span_verts[(axis, i, j)] = chain
                edges.extend(zip(chain[:-1], chain[1:]))
    # CCW rim: bottom (y min) left->right, right side up, top right->left, left side down
    rim: list[int] = []
    for i in range(n - 1):
        rim.extend(span_verts[(0, i, 0)][:-1])
    for i in range(n - 1):
        rim.extend(span_verts[(1, i, n - 1)][:-1])
    for i in reversed(range(n - 1)):
        rim.extend(span_verts[(0, i, n - 1)][::-1][:-1])
    for i in reversed(range(n - 1)):
        rim.extend(span_verts[(1, i, 0)][::-1][:-1])
    deg = np.bincount(np.asarray(edges).ravel(), minlength=len(verts))
    meta = {
        "generator": {
            "kind": name,
            "params": dict(params or {}),
            "rim": rim,
            "expected": {
                "m": len(verts),
                "p": len(edges),
                "joints": int(np.sum(deg >= 3)),
                "degree2": int(np.sum(deg == 2)),
            },
        }
    }
    return make_structure(verts, edges, boundary=None, name=name, metadata=meta), span_verts


def generate(
    kind: str,
    n: int | None = None,
    sub: int | None = None,
    height: float | None = None,
    size: float = 2.0,
    seed: int = 0,
    with_boundary: bool = False,
) -> RodStructure:
    """Build a named fixture.

    Defaults: ``grid`` n=3, sub=1, flat; curved kinds n=15, sub=4, height 0.5
    (multipeak 0.4). ``dome_patch`` adds one surface region around a cell
    next to the centre of the dome.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown fixture kind {kind!r}; choose from {', '.join(KINDS)}")
    if kind == "grid":
        n = 3 if n is None else n
        sub = 1 if sub is None else sub
        height = 0.0
    else:
        n = 15 if n is None else n
        sub = 4 if sub is None else sub
        height = (0.4 if kind == "multipeak" else 0.5) if height is None else height
    if n < 3:
        raise ValueError("grid resolution n must be >= 3")
    if height < 0:
        raise ValueError("height must be >= 0")
    params = {"n": n, "sub": sub, "height": height, "size": size, "seed": seed}
    s, spans = lattice(n, sub, _surface(kind, height, size, seed), size=size, name=kind, params=params)
    regions = ()
    if kind == "dome_patch":
        c = (n - 1) // 2
        bottom = spans[(0, c, c)]
        right = spans[(1, c, c + 1)]
        top = spans[(0, c, c + 1)][::-1]
        left = spans[(1, c, c)][::-1]
        loop = bottom[:-1] + right[:-1] + top[:-1] + left[:-1]
        regions = (tuple(loop),)
        s.metadata["generator"]["region"] = list(loop)
    boundary = s.metadata["generator"]["rim"] if with_boundary else None
    return make_structure(
        s.vertices,
        s.edges,
        boundary=boundary,
        surface_regions=regions,
        name=kind,
        metadata=s.metadata,
    )


def folded(seed: int, mode: str = "hinge", n: int = 6, sub: int = 3) -> tuple[RodStructure, np.ndarray]:
    """A small dome layout (xy projection) with exactly one rod crossing.

    ``mode="hinge"`` rotates one degree-2 vertex about one of its neighbours
    by an angle in ``[30, 330]`` degrees, which keeps that rod's length (the
    way a rod folds over). ``mode="shift"`` translates a random vertex by
    0.4 to 1.2 lattice spacings instead, stretching all of its rods. Draws
    repeat until the layout has a single crossing.
    """
    from .geometry import count_overlaps

    if mode not in ("hinge", "shift"):
        raise ValueError(f"unknown fold mode {mode!r}")
    s = generate("dome", n=n, sub=sub, height=0.3)
    xy = s.vertices[:, :2].copy()
    h = 2.0 / (n - 1)
    adj = s.adjacency()
    chain = np.flatnonzero(s.degrees() == 2)
    rng = np.random.default_rng(seed)
    for _ in range(10000):
        c = xy.copy()
        if mode == "hinge":
            v = int(rng.choice(chain))
            a = int(rng.choice(adj[v]))
            th = rng.uniform(np.pi / 6, 2 * np.pi - np.pi / 6)
            rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            c[v] = c[a] + rot @ (c[v] - c[a])
        else:
            v = int(rng.integers(s.m))
            th = rng.uniform(0, 2 * np.pi)
            c[v] += rng.uniform(0.4, 1.2) * h * np.array([np.cos(th), np.sin(th)])
        if count_overlaps(c, s.edges) == 1:
            return s, c
    raise RuntimeError("could not draw a single-crossing fold")  # pragma: no cover

import numpy as np
import pytest

from rodflat.structure import make_structure

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_jac(f, x, h=1e-6):
    """Central finite-difference Jacobian of a vector function (rows = outputs)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.column_stack(cols)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_square():
    return make_structure([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1], [1, 2], [2, 3], [3, 0]], boundary=[0, 1, 2, 3])


@pytest.fixture
def wheel():
    """6 rim vertices plus a hub (index 6) joined to every rim vertex."""
    rim = [[np.cos(t), np.sin(t), 0.0] for t in np.arange(6) * np.pi / 3]
    edges = [[k, (k + 1) % 6] for k in range(6)] + [[k, 6] for k in range(6)]
    return make_structure(rim + [[0.1, -0.2, 0.3]], edges, boundary=list(range(6)))


def brute_force_crossings(coords, edges):
    """Independent O(n^2) oracle: proper crossings plus touching/collinear overlaps."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    out = set()
    for i in range(len(edges)):
        for j in range(i + 1, len(edges)):
            if set(edges[i]) & set(edges[j]):
                continue
            a, b = coords[edges[i][0]], coords[edges[i][1]]
            c, d = coords[edges[j][0]], coords[edges[j][1]]
            d1, d2, d3, d4 = orient(c, d, a), orient(c, d, b), orient(a, b, c), orient(a, b, d)
            hit = ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4)
            hit = hit or (d1 == 0 and on_seg(c, d, a)) or (d2 == 0 and on_seg(c, d, b))
            hit = hit or (d3 == 0 and on_seg(a, b, c)) or (d4 == 0 and on_seg(a, b, d))
            if hit:
                out.add((i, j))
    return out


def brute_force_crossings_np(coords, edges):
    """Vectorised all-pairs version of :func:`brute_force_crossings` (same predicate)."""
    xy = np.asarray(coords, dtype=float)
    e = np.asarray(edges, dtype=np.int64)
    i, j = np.triu_indices(len(e), k=1)
    ei, ej = e[i], e[j]
    disjoint = (ei[:, 0] != ej[:, 0]) & (ei[:, 0] != ej[:, 1]) & (ei[:, 1] != ej[:, 0]) & (ei[:, 1] != ej[:, 1])
    i, j, ei, ej = i[disjoint], j[disjoint], ei[disjoint], ej[disjoint]
    a, b, c, d = xy[ei[:, 0]], xy[ei[:, 1]], xy[ej[:, 0]], xy[ej[:, 1]]

    def orient(p, q, r):
        return (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])

    def on_seg(p, q, r):
        return (
            (np.minimum(p[:, 0], q[:, 0]) <= r[:, 0]) & (r[:, 0] <= np.maximum(p[:, 0], q[:, 0]))
            & (np.minimum(p[:, 1], q[:, 1]) <= r[:, 1]) & (r[:, 1] <= np.maximum(p[:, 1], q[:, 1]))
        )

    d1, d2, d3, d4 = orient(c, d, a), orient(c, d, b), orient(a, b, c), orient(a, b, d)
    nz = (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0)
    hit = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0)) & nz
    hit |= (d1 == 0) & on_seg(c, d, a)
    hit |= (d2 == 0) & on_seg(c, d, b)
    hit |= (d3 == 0) & on_seg(a, b, c)
    hit |= (d4 == 0) & on_seg(a, b, d)
    return set(zip(i[hit].tolist(), j[hit].tolist()))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

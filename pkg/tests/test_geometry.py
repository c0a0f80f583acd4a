import numpy as np
import pytest
from conftest import brute_force_crossings, brute_force_crossings_np, central_diff, rel_err

from rodflat.geometry import (
    DegenerateGeometry,
    TriangulationError,
    build_triangulation,
    cos_angle_and_grad,
    count_overlaps,
    detect_overlaps,
    heron_area_and_grad,
    heron_areas,
    segment_length_and_grad,
    segments_intersect,
    shoelace_area_and_grad,
    triangle_signed_areas,
)


# ---------------------------------------------------------------- lengths


def test_segment_345():
    length, g = segment_length_and_grad((0, 0), (3, 4))
    assert length == 5.0
    assert g[0] == pytest.approx(-3 / 5) and g[1] == pytest.approx(-4 / 5)


def test_segment_coincident():
    with pytest.raises(DegenerateGeometry):
        segment_length_and_grad((1, 1), (1, 1))


def test_segment_grad_fd(rng):
    for _ in range(100):
        x = rng.normal(size=4)
        _, g = segment_length_and_grad(x[:2], x[2:])
        fd = central_diff(lambda z: segment_length_and_grad(z[:2], z[2:])[0], x)
        assert rel_err(g, fd) < 1e-6


# ----------------------------------------------------------------- angles


def test_cos_right_angle():
    c, _ = cos_angle_and_grad((0, 0), (1, 0), (0, 1))
    assert c == pytest.approx(0.0, abs=1e-15)


def test_cos_collinear_arms():
    c, g = cos_angle_and_grad((0, 0), (1, 0), (2, 0))
    assert c == pytest.approx(1.0)
    # moving an arm end along its own arm leaves the cosine unchanged
    assert g[2] == pytest.approx(0.0, abs=1e-15) and g[4] == pytest.approx(0.0, abs=1e-15)


def test_cos_zero_arm():
    with pytest.raises(DegenerateGeometry):
        cos_angle_and_grad((0, 0), (0, 0), (1, 0))


def test_cos_grad_fd(rng):
    for _ in range(100):
        x = rng.normal(size=6)
        _, g = cos_angle_and_grad(x[:2], x[2:4], x[4:])
        fd = central_diff(lambda z: cos_angle_and_grad(z[:2], z[2:4], z[4:])[0], x)
        assert rel_err(g, fd) < 1e-6


# ------------------------------------------------------------------ areas


def test_heron_right_triangle():
    a, _ = heron_area_and_grad((0, 0), (4, 0), (0, 3))
    assert a == pytest.approx(6.0, rel=1e-14)


def test_heron_collinear_signals():
    a, g = heron_area_and_grad((0, 0), (1, 0), (2, 0))
    assert a == 0.0 and not np.any(np.isfinite(g))


def _random_triangle(rng):
    while True:
        x = rng.normal(size=6)
        a = 0.5 * abs((x[2] - x[0]) * (x[5] - x[1]) - (x[3] - x[1]) * (x[4] - x[0]))
        if a > 0.05:
            return x


def test_heron_matches_shoelace_and_fd(rng):
    for _ in range(100):
        x = _random_triangle(rng)
        a, g = heron_area_and_grad(x[:2], x[2:4], x[4:])
        s, _ = shoelace_area_and_grad(x.reshape(3, 2))
        assert a == pytest.approx(abs(s), rel=1e-12)
        fd = central_diff(lambda z: heron_area_and_grad(z[:2], z[2:4], z[4:])[0], x)
        assert rel_err(g, fd) < 1e-6


def test_heron_gradient_forms_agree(rng):
    for _ in range(100):
        x = _random_triangle(rng).reshape(3, 1, 2)
        _, g1, _ = heron_areas(*x, form="closed")
        _, g2, _ = heron_areas(*x, form="signed")
        assert rel_err(g2, g1) < 1e-10


def test_heron_unknown_form():
    with pytest.raises(ValueError):
        heron_areas(np.zeros((1, 2)), np.ones((1, 2)), np.array([[0, 1.0]]), form="nope")


def test_shoelace_square_orientation():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    assert shoelace_area_and_grad(sq)[0] == 1.0
    assert shoelace_area_and_grad(sq[::-1])[0] == -1.0


def test_shoelace_grad_fd(rng):
    for _ in range(20):
        k = int(rng.integers(3, 12))
        t = np.sort(rng.uniform(0, 2 * np.pi, k))
        pts = np.column_stack([np.cos(t), np.sin(t)]) * rng.uniform(0.5, 2, (k, 1))
        _, g = shoelace_area_and_grad(pts)
        fd = central_diff(lambda z: shoelace_area_and_grad(z.reshape(-1, 2))[0], pts.ravel())
        assert rel_err(g.ravel(), fd) < 1e-8


# ----------------------------------------------------------- triangulation


def test_triangulate_square():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    tri = build_triangulation(sq, [0, 1, 2, 3])
    assert len(tri.triangles) == 2
    assert tri.area_residual(sq) == pytest.approx(0.0, abs=1e-15)


def test_triangulate_square_with_centre():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
    tri = build_triangulation(pts, [0, 1, 2, 3])
    assert len(tri.triangles) == 4
    assert abs(tri.area_residual(pts)) < 1e-15


def test_triangulation_clipped_to_concave_boundary():
    # L-shaped boundary: the hull triangle in the notch must be discarded
    pts = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)
    tri = build_triangulation(pts, range(6))
    assert abs(tri.area_residual(pts)) < 1e-12
    assert np.all(triangle_signed_areas(pts, tri.triangles) > 0)
    assert triangle_signed_areas(pts, tri.triangles).sum() == pytest.approx(3.0)


def test_triangulation_rejects_self_intersecting_boundary():
    pts = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(TriangulationError):
        build_triangulation(pts, [0, 1, 2, 3])


# ------------------------------------------------------------------ overlaps


def test_x_crossing():
    pts = np.array([[0, 0], [2, 2], [0, 2], [2, 0]], dtype=float)
    recs = detect_overlaps(pts, [[0, 1], [2, 3]])
    assert len(recs) == 1 and np.allclose(recs[0].point, (1, 1))


def test_shared_endpoint_is_not_an_overlap():
    pts = np.array([[0, 0], [2, 2], [2, 0]], dtype=float)
    assert detect_overlaps(pts, [[0, 1], [0, 2]]) == []


def test_touching_and_collinear_count():
    pts = np.array([[0, 0], [2, 0], [1, 0], [1, 1], [3, 0], [4, 0], [1.5, 0], [3.5, 0]], dtype=float)
    # T-junction: (1,0)-(1,1) touches the interior of (0,0)-(2,0)
    assert count_overlaps(pts, [[0, 1], [2, 3]]) == 1
    # collinear overlap of (3,0)-(4,0) with (1.5,0)-(3.5,0)
    assert count_overlaps(pts, [[4, 5], [6, 7]]) == 1
    # collinear but disjoint
    assert count_overlaps(pts, [[0, 6], [4, 5]]) == 0


def test_random_segments_match_oracle(rng):
    pts = rng.uniform(0, 10, (400, 2))
    edges = np.arange(400).reshape(200, 2)
    got = {r.edges for r in detect_overlaps(pts, edges)}
    assert got == brute_force_crossings(pts, edges.tolist())
    assert len(got) > 0


def test_random_graph_segments_match_oracle(rng):
    # shared endpoints and integer coordinates exercise the exact predicate
    pts = rng.integers(0, 6, (40, 2)).astype(float)
    pts = np.unique(pts, axis=0)
    n = len(pts)
    edges = set()
    while len(edges) < 120:
        i, j = sorted(rng.integers(0, n, 2).tolist())
        if i != j:
            edges.add((i, j))
    edges = sorted(edges)
    got = {r.edges for r in detect_overlaps(pts, edges, tol=0.0)}
    assert got == brute_force_crossings(pts, edges)
    assert brute_force_crossings_np(pts, edges) == got


def test_records_sorted_and_labelled():
    pts = np.array([[0, 0], [2, 2], [0, 2], [2, 0], [1, -1], [1, 3]], dtype=float)
    edges = [[0, 1], [2, 3], [4, 5]]
    recs = detect_overlaps(pts, edges)
    assert [r.edges for r in recs] == sorted(r.edges for r in recs)
    for r in recs:
        p1, p2, p3, p4 = r.points
        assert sorted((p1, p2)) == sorted(edges[r.edges[0]])
        assert sorted((p3, p4)) == sorted(edges[r.edges[1]])


def test_near_collinear_exact_fallback():
    a = np.array([[0.1, 0.1]])
    b = np.array([[0.3, 0.3]])
    c = np.array([[0.2, 0.2 + 1e-17]])  # rounds onto the line in floating point
    d = np.array([[0.2, 1.0]])
    assert segments_intersect(a, b, c, d).tolist() == [True]

import numpy as np
import pytest
from conftest import central_diff, central_jac, rel_err

from rodflat import constraints as C
from rodflat.embedding import initial_embedding
from rodflat.fixtures import generate
from rodflat.geometry import build_triangulation, detect_overlaps, triangle_signed_areas
from rodflat.structure import boundary_loop, decompose_chains, make_structure


def _refs(s, coords=None):
    if coords is None:
        coords = s.vertices[:, :2]
    return C.derive_references(s, decompose_chains(s), coords)


@pytest.fixture(scope="module")
def small_dome():
    s = generate("dome", n=4, sub=3, height=0.6)
    emb = initial_embedding(s)
    refs = _refs(s, emb.coords)
    tri = build_triangulation(emb.coords, boundary_loop(s))
    return s, emb, refs, tri


def _perturbed(emb, rng, scale=0.02):
    return emb.as_vector() + scale * rng.normal(size=2 * emb.structure.m)


# ---------------------------------------------------------------- references


def test_straight_chain_objective_angle():
    s = make_structure([[0, 0, 0], [1, 1, 1], [2, 2, 2]], [[0, 1], [1, 2]])
    refs = _refs(s)
    assert refs.r == 1 and refs.q == 0
    assert refs.bend_triples[0, 0] == 1
    assert refs.bend_cos[0] == pytest.approx(-1.0)


def test_orthogonal_cross_constraints():
    s = make_structure([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]], [[0, k] for k in range(1, 5)])
    refs = _refs(s)
    assert refs.q == 4
    assert np.allclose(refs.joint_cos, 0.0, atol=1e-15)
    assert np.all(refs.joint_triples[:, 0] == 0)


def test_dome_angle_counts():
    s = generate("dome", n=6, sub=3)
    deg = s.degrees()
    refs = _refs(s)
    assert refs.q == int(deg[deg >= 3].sum())
    assert refs.r == int(np.sum(deg == 2))


def test_zero_length_edge_rejected():
    s = make_structure([[0, 0, 0], [0, 0, 0], [1, 0, 0]], [[0, 1], [1, 2]])
    with pytest.raises(ValueError):
        _refs(s)


# ------------------------------------------------------------------ lengths


def test_length_residual_examples():
    s = make_structure([[0, 0, 0], [2, 0, 0]], [[0, 1]])
    refs = _refs(s)
    r, _ = C.eval_lengths(np.array([0.0, 2.0, 0.0, 0.0]), refs)
    assert r[0] == 0.0
    s1 = make_structure([[0, 0, 0], [1, 0, 0]], [[0, 1]])
    r, jac = C.eval_lengths(np.array([0.0, 2.0, 0.0, 0.0]), _refs(s1))
    assert r[0] == pytest.approx(1.0)
    assert jac.toarray()[0, 0] == pytest.approx(-1.0)


def test_length_jacobian_fd_and_sparsity(small_dome, rng):
    s, emb, refs, _ = small_dome
    for _ in range(5):
        x = _perturbed(emb, rng)
        r, jac = C.eval_lengths(x, refs)
        assert np.all(np.diff(jac.indptr) == 4)
        fd = central_jac(lambda z: C.eval_lengths(z, refs)[0], x)
        assert rel_err(jac.toarray(), fd) < 1e-6


# ------------------------------------------------------------------- angles


def test_angle_residual_examples():
    s = make_structure([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]], [[0, k] for k in range(1, 5)])
    refs = _refs(s)
    r, _ = C.eval_angles(s.vertices[:, :2].T.ravel(), refs)
    assert np.allclose(r, 0.0, atol=1e-15)
    # fold arm 2 onto arm 1: the angle between them becomes 0, cos 1 vs 0
    xy = s.vertices[:, :2].copy()
    xy[2] = [2, 0]
    r, _ = C.eval_angles(xy.T.ravel(), refs)
    k = [i for i, t in enumerate(refs.joint_triples.tolist()) if sorted(t[1:]) == [1, 2]][0]
    assert r[k] == pytest.approx(1.0)


def test_angle_jacobian_fd_and_sparsity(small_dome, rng):
    s, emb, refs, _ = small_dome
    for _ in range(5):
        x = _perturbed(emb, rng)
        _, jac = C.eval_angles(x, refs)
        assert np.all(np.diff(jac.indptr) == 6)
        fd = central_jac(lambda z: C.eval_angles(z, refs)[0], x)
        assert rel_err(jac.toarray(), fd) < 1e-6


# ---------------------------------------------------------------- objective


def test_objective_zero_at_preserved_angles():
    s = generate("grid", n=3, sub=3)
    refs = _refs(s)
    e, g = C.eval_objective(s.vertices[:, :2].T.ravel(), refs)
    assert e == pytest.approx(0.0, abs=1e-24) and np.abs(g).max() < 1e-12


def test_objective_single_term():
    # straight chain (cos -1); bend the middle to a right angle -> difference 1
    s = make_structure([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1], [1, 2]])
    refs = _refs(s)
    # apex angle 120 deg: cos -0.5 against -1, a difference of 0.5
    x = np.array([0.0, 1.0, 1.0 + np.cos(np.pi / 3), 0.0, 0.0, np.sin(np.pi / 3)])
    e, _ = C.eval_objective(x, refs)
    assert e == pytest.approx(0.25)


def test_objective_gradient_fd(small_dome, rng):
    s, emb, refs, _ = small_dome
    for _ in range(5):
        x = _perturbed(emb, rng)
        _, g = C.eval_objective(x, refs)
        fd = central_diff(lambda z: C.eval_objective(z, refs)[0], x)
        assert rel_err(g, fd) < 1e-6


# ------------------------------------------------------------------ overlap


def test_overlap_zero_at_initial(small_dome):
    s, emb, _, tri = small_dome
    ov = C.eval_overlap_constraint(emb.as_vector(), tri, s.m)
    assert abs(ov.value) < 1e-9 * ov.boundary_area


def test_overlap_positive_after_fold(small_dome):
    s, emb, _, tri = small_dome
    xy = emb.coords.copy()
    loop = boundary_loop(s)
    inner = [v for v in range(s.m) if v not in loop]
    # push an interior vertex next to the rim out past the rim
    v = min(inner, key=lambda k: -np.linalg.norm(xy[k]))
    xy[v] *= 1.6
    ov = C.eval_overlap_constraint(xy.T.ravel(), tri, s.m)
    tri_area = ov.heron_sum
    assert ov.value > 0 and tri_area > ov.boundary_area


@pytest.mark.parametrize("form", ["closed", "signed"])
def test_overlap_gradient_fd(small_dome, rng, form):
    # E_O is flat while every triangle keeps its orientation, so test at
    # configurations with inverted (but not thin) triangles
    s, emb, _, tri = small_dome
    done = 0
    while done < 5:
        x = _perturbed(emb, rng, 0.15)
        xy = np.column_stack([x[: s.m], x[s.m :]])
        a = triangle_signed_areas(xy, tri.triangles)
        if np.all(a > 0) or np.min(np.abs(a)) < 1e-3:
            continue
        done += 1
        ov = C.eval_overlap_constraint(x, tri, s.m, form=form)
        assert ov.value > 0
        fd = central_diff(lambda z: C.eval_overlap_constraint(z, tri, s.m).value, x)
        assert rel_err(ov.grad, fd) < 1e-5


# --------------------------------------------------------------- invariances


def test_rigid_motion_invariance(small_dome, rng):
    s, emb, refs, tri = small_dome
    x = _perturbed(emb, rng)
    th = 0.7
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    xy = np.column_stack([x[: s.m], x[s.m :]]) @ rot.T + [3.0, -2.0]
    y = np.concatenate([xy[:, 0], xy[:, 1]])
    a, b = C.evaluate(x, refs, tri), C.evaluate(y, refs, tri)
    assert np.allclose(a.residuals, b.residuals, atol=1e-10)
    assert a.objective == pytest.approx(b.objective, abs=1e-10)


def test_uniform_scaling(small_dome, rng):
    s, emb, refs, _ = small_dome
    x = _perturbed(emb, rng)
    rl, _ = C.eval_lengths(x, refs)
    rl2, _ = C.eval_lengths(1.7 * x, refs)
    assert np.allclose(rl2, 1.7 * (rl + 1) - 1, atol=1e-12)
    ra, _ = C.eval_angles(x, refs)
    ra2, _ = C.eval_angles(1.7 * x, refs)
    assert np.allclose(ra, ra2, atol=1e-12)


def test_evaluate_stacks_in_canonical_order(small_dome):
    s, emb, refs, tri = small_dome
    ev = C.evaluate(emb.as_vector(), refs, tri)
    assert len(ev.residuals) == refs.p + refs.q + 1
    assert ev.jacobian.shape == (refs.p + refs.q + 1, 2 * s.m)
    assert ev.residuals[-1] == ev.overlap.value
    assert detect_overlaps(emb.coords, s.edges) == []

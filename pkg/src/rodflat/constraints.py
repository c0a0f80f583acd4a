"""Length, joint-angle and no-overlap constraints plus the bend-angle objective.

All gradients are taken with respect to the stacked variable vector
``(x_1..x_m, y_1..y_m)``. Jacobians are returned as ``scipy.sparse`` CSR
matrices with one row per residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .geometry import (
    EPS_AREA,
    DegenerateGeometry,
    Triangulation,
    cos_angles,
    heron_areas,
    segment_lengths,
    shoelace_area_and_grad,
)
from .structure import ChainDecomposition, RodStructure


@dataclass(frozen=True)
class ReferenceQuantities:
    """3D reference data the planar embedding is measured against.

    ``joint_triples`` / ``bend_triples`` are ``(apex, b, c)`` vertex triples;
    ``joint_cos`` / ``bend_cos`` the matching 3D cosines.
    """

    m: int
    edges: np.ndarray
    rest_lengths: np.ndarray
    joint_triples: np.ndarray
    joint_cos: np.ndarray
    bend_triples: np.ndarray
    bend_cos: np.ndarray

    @property
    def p(self) -> int:
        return len(self.edges)

    @property
    def q(self) -> int:
        return len(self.joint_triples)

    @property
    def r(self) -> int:
        return len(self.bend_triples)


def derive_references(s: RodStructure, d: ChainDecomposition, initial_coords: np.ndarray) -> ReferenceQuantities:
    """Rest lengths, constrained joint angles and objective bend angles.

    At each joint the incident edges are sorted by direction in the initial
    embedding and every cyclically consecutive pair becomes one constrained
    angle. Every degree-2 vertex contributes one objective angle.
    """
    rest = s.rest_lengths()
    if np.any(rest <= 0):
        k = int(np.flatnonzero(rest <= 0)[0])
        raise DegenerateGeometry(f"zero-length 3D edge {tuple(s.edges[k])}")
    adj = s.adjacency()
    xy = np.asarray(initial_coords, dtype=float)
    joint = []
    for v in sorted(d.joints):
        nb = adj[v]
        ang = [np.arctan2(*(xy[w] - xy[v])[::-1]) for w in nb]
        ring = [w for _, w in sorted(zip(ang, nb))]
        for k in range(len(ring)):
            joint.append((v, ring[k], ring[(k + 1) % len(ring)]))
    bend = [(v, *sorted(adj[v])) for v in range(s.m) if len(adj[v]) == 2]
    jt = np.array(joint, dtype=np.int64).reshape(-1, 3)
    bt = np.array(bend, dtype=np.int64).reshape(-1, 3)
    return ReferenceQuantities(
        m=s.m,
        edges=s.edges.copy(),
        rest_lengths=rest,
        joint_triples=jt,
        joint_cos=_cos3d(s.vertices, jt),
        bend_triples=bt,
        bend_cos=_cos3d(s.vertices, bt),
    )


def _cos3d(v: np.ndarray, triples: np.ndarray) -> np.ndarray:
    if len(triples) == 0:
        return np.zeros(0)
    cos, _ = cos_angles(v[triples[:, 0]], v[triples[:, 1]], v[triples[:, 2]])
    return cos


def _xy(x: np.ndarray, m: int) -> np.ndarray:
    return np.column_stack([x[:m], x[m:]])


def _rows(vals: np.ndarray, verts: np.ndarray, m: int) -> sparse.csr_matrix:
    """Scatter per-row point gradients ``(n, k, 2)`` into an ``n x 2m`` matrix."""
    n, k = verts.shape
    rows = np.repeat(np.arange(n), 2 * k)
    cols = np.concatenate([verts, verts + m], axis=1)  # (n, 2k): x-block then y-block
    data = np.concatenate([vals[:, :, 0], vals[:, :, 1]], axis=1)
    return sparse.csr_matrix((data.ravel(), (rows, cols.ravel())), shape=(n, 2 * m))


def eval_lengths(x: np.ndarray, refs: ReferenceQuantities):
    """Residuals ``L_i / l_i - 1`` and their Jacobian (4 nonzeros per row)."""
    c = _xy(x, refs.m)
    e = refs.edges
    length, g = segment_lengths(c[e[:, 0]], c[e[:, 1]])
    if np.any(length == 0):
        raise DegenerateGeometry("coincident rod endpoints")
    res = length / refs.rest_lengths - 1.0
    g = g / refs.rest_lengths[:, None]
    return res, _rows(np.stack([g, -g], axis=1), e, refs.m)


def _angle_terms(x, triples, m):
    c = _xy(x, m)
    cos, grad = cos_angles(c[triples[:, 0]], c[triples[:, 1]], c[triples[:, 2]])
    if not np.all(np.isfinite(grad)):
        raise DegenerateGeometry("zero-length angle arm")
    return cos, grad


def eval_angles(x: np.ndarray, refs: ReferenceQuantities):
    """Residuals ``cos(theta_2D) - cos(theta_3D)`` with 6 nonzeros per row."""
    if refs.q == 0:
        return np.zeros(0), sparse.csr_matrix((0, 2 * refs.m))
    cos, grad = _angle_terms(x, refs.joint_triples, refs.m)
    return cos - refs.joint_cos, _rows(grad, refs.joint_triples, refs.m)


def objective_residuals(x: np.ndarray, refs: ReferenceQuantities):
    """Per-angle terms ``cos(phi_2D) - cos(phi_3D)``; ``E`` is their squared sum."""
    if refs.r == 0:
        return np.zeros(0), sparse.csr_matrix((0, 2 * refs.m))
    cos, grad = _angle_terms(x, refs.bend_triples, refs.m)
    return cos - refs.bend_cos, _rows(grad, refs.bend_triples, refs.m)


def eval_objective(x: np.ndarray, refs: ReferenceQuantities) -> tuple[float, np.ndarray]:
    """``E = sum (cos phi_2D - cos phi_3D)^2`` and its gradient."""
    r, jac = objective_residuals(x, refs)
    return float(r @ r), 2.0 * (jac.T @ r)


@dataclass(frozen=True)
class OverlapEval:
    value: float
    grad: np.ndarray
    heron_sum: float
    boundary_area: float
    slivers: int


def eval_overlap_constraint(
    x: np.ndarray, tri: Triangulation, m: int, floor: float = EPS_AREA, form: str = "signed"
) -> OverlapEval:
    """``E_O = H - S``: Heron area sum minus the shoelace area of the boundary.

    ``form`` selects how triangle-area gradients are evaluated; see
    :func:`rodflat.geometry.heron_areas`.
    """
    c = _xy(x, m)
    t = tri.triangles
    area, g, sliver = heron_areas(c[t[:, 0]], c[t[:, 1]], c[t[:, 2]], floor=floor, form=form)
    loop = np.asarray(tri.boundary)
    s_val, s_grad = shoelace_area_and_grad(c[loop])
    grad = np.zeros((m, 2))
    np.add.at(grad, t.ravel(), g.reshape(-1, 2))
    np.add.at(grad, loop, -s_grad)
    h = float(area.sum())
    return OverlapEval(h - s_val, np.concatenate([grad[:, 0], grad[:, 1]]), h, s_val, int(sliver.sum()))


@dataclass
class ConstraintEval:
    """Stacked residuals ``[E_L..., E_A..., (E_O)]`` with Jacobian, plus ``E``."""

    residuals: np.ndarray
    jacobian: sparse.csr_matrix
    objective: float
    objective_grad: np.ndarray
    n_length: int
    n_angle: int
    overlap: OverlapEval | None = None
    diagnostics: dict = field(default_factory=dict)


def evaluate(x: np.ndarray, refs: ReferenceQuantities, tri: Triangulation | None = None) -> ConstraintEval:
    rl, jl = eval_lengths(x, refs)
    ra, ja = eval_angles(x, refs)
    res = [rl, ra]
    jac = [jl, ja]
    ov = None
    if tri is not None:
        ov = eval_overlap_constraint(x, tri, refs.m)
        res.append(np.array([ov.value]))
        jac.append(sparse.csr_matrix(ov.grad[None, :]))
    e, ge = eval_objective(x, refs)
    return ConstraintEval(
        residuals=np.concatenate(res),
        jacobian=sparse.vstack(jac, format="csr"),
        objective=e,
        objective_grad=ge,
        n_length=len(rl),
        n_angle=len(ra),
        overlap=ov,
        diagnostics={"slivers": ov.slivers if ov else 0},
    )

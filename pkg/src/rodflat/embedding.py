"""Initial planar embeddings: Tutte (uniform graph Laplacian) and xy projection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .structure import RodStructure, StructureError, boundary_loop

STAGES = ("initial", "corrected", "optimized")


class EmbeddingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanarEmbedding:
    """2D node coordinates sharing the edge list of ``structure``.

    The flat variable vector used by the optimiser is ``(x_1..x_m, y_1..y_m)``;
    see :meth:`as_vector` / :meth:`from_vector`.
    """

    coords: np.ndarray
    structure: RodStructure
    stage: str = "initial"

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1, 2)
        if len(c) != self.structure.m:
            raise EmbeddingError(f"expected {self.structure.m} coordinates, got {len(c)}")
        if not np.all(np.isfinite(c)):
            raise EmbeddingError("embedding has non-finite coordinates")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.coords[:, 0], self.coords[:, 1]])

    def with_coords(self, coords, stage: str | None = None) -> PlanarEmbedding:
        return PlanarEmbedding(coords, self.structure, stage or self.stage)

    @classmethod
    def from_vector(cls, x: np.ndarray, structure: RodStructure, stage: str = "optimized"):
        m = structure.m
        return cls(np.column_stack([x[:m], x[m:]]), structure, stage)


def graph_laplacian(s: RodStructure) -> sparse.csr_matrix:
    """Uniform-weight Laplacian: +1 per edge off the diagonal, -degree on it."""
    m = s.m
    i, j = s.edges[:, 0], s.edges[:, 1]
    off = sparse.coo_matrix((np.ones(2 * s.p), (np.r_[i, j], np.r_[j, i])), shape=(m, m)).tocsr()
    return off - sparse.diags(np.asarray(off.sum(axis=1)).ravel())


def tutte_embed(s: RodStructure, boundary_positions: dict[int, tuple[float, float]]) -> PlanarEmbedding:
    """Solve ``L v = 0`` on interior rows with boundary vertices pinned.

    Boundary rows of the Laplacian are replaced by identity rows carrying the
    prescribed positions.
    """
    m = s.m
    pinned = np.zeros(m, dtype=bool)
    rhs = np.zeros((m, 2))
    for v, w in boundary_positions.items():
        pinned[int(v)] = True
        rhs[int(v)] = w
    lap = graph_laplacian(s)
    deg = s.degrees()
    free = np.flatnonzero(~pinned)
    coords = rhs.copy()
    if len(free):
        if np.any(deg[free] == 0):
            raise EmbeddingError("isolated interior vertex; system is singular")
        a_ff = lap[free][:, free].tocsc()
        b = -(lap[free][:, np.flatnonzero(pinned)] @ rhs[pinned])
        with warnings.catch_warnings():
            warnings.simplefilter("error", MatrixRankWarning)
            try:
                sol = spsolve(a_ff, b)
            except (MatrixRankWarning, RuntimeError) as exc:
                raise EmbeddingError(
                    "singular Tutte system: some interior vertices are not connected to the boundary"
                ) from exc
        sol = np.asarray(sol).reshape(len(free), 2)
        if not np.all(np.isfinite(sol)):
            raise EmbeddingError("singular Tutte system: some interior vertices are not connected to the boundary")
        coords[free] = sol
    return PlanarEmbedding(coords, s, "initial")


def boundary_circle_positions(s: RodStructure, loop: list[int]) -> dict[int, tuple[float, float]]:
    """Place the loop on a circle whose circumference equals its 3D length.

    Angular gaps are proportional to the 3D chord length of each loop edge and
    the walk is counter-clockwise starting at angle 0.
    """
    pts = s.vertices[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    if np.any(seg <= 0):
        k = int(np.flatnonzero(seg <= 0)[0])
        raise StructureError(f"zero-length boundary edge {loop[k]}-{loop[(k + 1) % len(loop)]}", "boundary")
    total = float(seg.sum())
    radius = total / (2 * np.pi)
    theta = 2 * np.pi * np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / total
    return {int(v): (radius * np.cos(t), radius * np.sin(t)) for v, t in zip(loop, theta)}


def project_xy(s: RodStructure) -> PlanarEmbedding:
    return PlanarEmbedding(s.vertices[:, :2].copy(), s, "initial")


def initial_embedding(s: RodStructure, method: str = "tutte") -> PlanarEmbedding:
    if method == "tutte":
        loop = boundary_loop(s)
        return tutte_embed(s, boundary_circle_positions(s, loop))
    if method == "project":
        return project_xy(s)
    raise ValueError(f"unknown init method {method!r}")

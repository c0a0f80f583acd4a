"""Flattening driver: alternating constrained solves and overlap correction.

The loop runs until both mean errors are within tolerance and there are no
crossings, or until the round cap. Round 0 solves with every constraint.
Each later round checks the current layout. If it is overlap-free, it solves
without the area constraint. Otherwise it corrects the overlaps first and
then solves with every constraint. A final correction pass runs if crossings
remain.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import constraints as C
from .correction import correct_overlaps_report
from .embedding import PlanarEmbedding, initial_embedding
from .geometry import (
    DegenerateGeometry,
    Triangulation,
    TriangulationError,
    build_triangulation,
    detect_overlaps,
    shoelace_area_and_grad,
)
from .solver import NlpProblem, SolveReport, minimize_constrained
from .structure import RodStructure, boundary_loop, decompose_chains, dumps

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlattenConfig:
    """Settings of one flatten run.

    ``inner_budget`` is the number of inner solver iterations allowed per
    round of the outer loop; ``max_inner`` caps each augmented-Lagrangian
    subproblem inside that budget.
    """

    init: str = "tutte"
    length_tol: float = 1e-4
    angle_tol: float = 1e-4
    max_outer: int = 10
    solver_ctol: float = 1e-6
    solver_gtol: float = 1e-6
    inner_budget: int = 500
    max_inner: int = 100
    solver_max_outer: int = 25
    samples: int = 360
    seed: int = 0

    def __post_init__(self):
        if self.init not in ("tutte", "project"):
            raise ValueError(f"init must be 'tutte' or 'project', not {self.init!r}")
        if self.length_tol <= 0 or self.angle_tol <= 0:
            raise ValueError("error thresholds must be positive")
        if min(self.max_outer, self.max_inner, self.inner_budget, self.samples) < 1:
            raise ValueError("iteration caps and sample counts must be >= 1")


@dataclass
class MetricsReport:
    """Distortion and overlap summary of one embedding.

    Length errors are relative (``|L - l| / l``); ``length_abs`` holds the
    absolute values. Angle errors are in radians and cover every constrained
    joint angle (vertices of degree > 2).
    """

    length_mean: float
    length_sd: float
    angle_mean: float
    angle_sd: float
    overlaps: int
    length_rel: np.ndarray = field(repr=False)
    length_abs: np.ndarray = field(repr=False)
    angle_err: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    joint_triples: np.ndarray = field(repr=False)
    outer_iterations: int = 0
    wall_time: float = 0.0
    solver_reasons: list[str] = field(default_factory=list)
    fill_edges: np.ndarray | None = field(default=None, repr=False)
    notes: list[str] = field(default_factory=list)

    def passes(self, length_tol: float, angle_tol: float) -> bool:
        return self.overlaps == 0 and self.length_mean <= length_tol and self.angle_mean <= angle_tol

    def to_dict(self) -> dict:
        """JSON-ready summary. Wall time is left out so output is reproducible."""
        out = {
            "length_error": {"mean": self.length_mean, "sd": self.length_sd, "max": _max(self.length_rel)},
            "length_error_absolute": {"mean": _mean(self.length_abs), "max": _max(self.length_abs)},
            "angle_error": {"mean": self.angle_mean, "sd": self.angle_sd, "max": _max(self.angle_err)},
            "angle_error_per_joint": _per_joint(self.joint_triples, self.angle_err),
            "overlaps": self.overlaps,
            "outer_iterations": self.outer_iterations,
            "solver_reasons": list(self.solver_reasons),
            "counts": {"edges": int(len(self.edges)), "joint_angles": int(len(self.joint_triples))},
            "notes": list(self.notes),
        }
        if self.fill_edges is not None and len(self.fill_edges):
            fill = np.zeros(len(self.edges), dtype=bool)
            fill[self.fill_edges] = True
            core = ~fill
            out["length_error_core"] = {"mean": _mean(self.length_rel[core]), "count": int(core.sum())}
            out["length_error_fill"] = {"mean": _mean(self.length_rel[fill]), "count": int(fill.sum())}
        return out

    def to_json(self) -> str:
        return dumps(self.to_dict(), indent=2) + "\n"

    def breakdown_csv(self) -> str:
        """Per-rod and per-joint-angle errors as CSV."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "index", "vertices", "relative_error", "absolute_error"])
        for k, (i, j) in enumerate(self.edges):
            w.writerow(["edge", k, f"{i}-{j}", repr(float(self.length_rel[k])), repr(float(self.length_abs[k]))])
        for k, (v, a, b) in enumerate(self.joint_triples):
            w.writerow(["angle", k, f"{a}-{v}-{b}", "", repr(float(self.angle_err[k]))])
        return buf.getvalue()


def _mean(a) -> float:
    return float(np.mean(a)) if len(a) else 0.0


def _sd(a) -> float:
    return float(np.std(a)) if len(a) else 0.0


def _per_joint(triples: np.ndarray, err: np.ndarray) -> dict:
    """Angle error averaged per joint first, then over joints."""
    if not len(triples):
        return {"mean": 0.0, "max": 0.0, "joints": 0}
    joints, inv = np.unique(triples[:, 0], return_inverse=True)
    per = np.bincount(inv, weights=err) / np.bincount(inv)
    return {"mean": float(per.mean()), "max": float(per.max()), "joints": int(len(joints))}


def _max(a) -> float:
    return float(np.max(a)) if len(a) else 0.0


def _angles(p: np.ndarray, triples: np.ndarray) -> np.ndarray:
    """Unsigned angle at ``triples[:, 0]``; works for 2D and 3D points."""
    u = p[triples[:, 1]] - p[triples[:, 0]]
    v = p[triples[:, 2]] - p[triples[:, 0]]
    if p.shape[1] == 2:
        cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    else:
        cross = np.linalg.norm(np.cross(u, v), axis=1)
    return np.arctan2(cross, np.einsum("ij,ij->i", u, v))


def compute_metrics(s: RodStructure, emb: PlanarEmbedding, refs: C.ReferenceQuantities) -> MetricsReport:
    """Length, angle and overlap errors of ``emb`` against the 3D structure."""
    xy = np.asarray(emb.coords, dtype=float)
    e = refs.edges
    length = np.linalg.norm(xy[e[:, 0]] - xy[e[:, 1]], axis=1)
    absolute = np.abs(length - refs.rest_lengths)
    rel = absolute / refs.rest_lengths
    jt = refs.joint_triples
    ang = np.abs(_angles(xy, jt) - _angles(s.vertices, jt)) if len(jt) else np.zeros(0)
    fill = s.metadata.get("hybrid", {}).get("fill_edges") if isinstance(s.metadata, dict) else None
    return MetricsReport(
        length_mean=_mean(rel),
        length_sd=_sd(rel),
        angle_mean=_mean(ang),
        angle_sd=_sd(ang),
        overlaps=len(detect_overlaps(xy, s.edges)),
        length_rel=rel,
        length_abs=absolute,
        angle_err=ang,
        edges=e.copy(),
        joint_triples=jt.copy(),
        fill_edges=None if fill is None else np.asarray(fill, dtype=np.int64),
    )


def metrics_for(s: RodStructure, emb: PlanarEmbedding) -> MetricsReport:
    """Metrics of a stand-alone embedding; joint angles are ordered by ``emb`` itself."""
    refs = C.derive_references(s, decompose_chains(s), emb.coords)
    return compute_metrics(s, emb, refs)


@dataclass
class FlattenResult:
    embedding: PlanarEmbedding
    metrics: MetricsReport
    initial: PlanarEmbedding
    refs: C.ReferenceQuantities
    triangulation: Triangulation
    reports: list[SolveReport] = field(default_factory=list)


def _triangulate(s: RodStructure, emb: PlanarEmbedding, loop: list[int], notes: list[str]) -> Triangulation:
    """Triangulation fixed for the whole run, on the initial layout.

    If the initial layout cannot be triangulated (for instance a projection
    whose rim self-intersects) the combinatorics are taken from the Tutte
    layout instead, which always has a convex rim.
    """
    try:
        return build_triangulation(emb.coords, loop)
    except TriangulationError as exc:
        if emb.stage == "initial" and np.allclose(emb.coords, initial_embedding(s, "tutte").coords):
            raise
        notes.append(f"triangulation built on the Tutte layout ({exc})")
        return build_triangulation(initial_embedding(s, "tutte").coords, loop)


def _problem(refs: C.ReferenceQuantities, tri: Triangulation, area0: float, cfg: FlattenConfig) -> NlpProblem:
    m = refs.m

    def cons(x):
        rl, jl = C.eval_lengths(x, refs)
        ra, ja = C.eval_angles(x, refs)
        ov = C.eval_overlap_constraint(x, tri, m)
        row = sparse.csr_matrix(ov.grad[None, :] / area0)
        return np.concatenate([rl, ra, [ov.value / area0]]), sparse.vstack([jl, ja, row], format="csr")

    return NlpProblem(
        n=2 * m,
        objective=lambda x: C.eval_objective(x, refs),
        constraints=cons,
        objective_residuals=lambda x: C.objective_residuals(x, refs),
        max_inner=cfg.max_inner,
        max_total=cfg.inner_budget,
        max_outer=cfg.solver_max_outer,
        ctol=cfg.solver_ctol,
        gtol=cfg.solver_gtol,
        dense_rows=(refs.p + refs.q,),
    )


def _suspect_vertices(x: np.ndarray, refs: C.ReferenceQuantities, tri: Triangulation) -> np.ndarray:
    """Vertices touching a collapsed rod, angle arm or sliver triangle."""
    m = refs.m
    xy = np.column_stack([x[:m], x[m:]])
    scale = max(float(np.hypot(*np.ptp(xy, axis=0))), 1.0)
    e = refs.edges
    short = np.linalg.norm(xy[e[:, 0]] - xy[e[:, 1]], axis=1) <= 1e-12 * scale
    bad = set(e[short].ravel().tolist())
    t = tri.triangles
    a = xy[t[:, 1]] - xy[t[:, 0]]
    b = xy[t[:, 2]] - xy[t[:, 0]]
    area2 = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    bad |= set(t[area2 <= 1e-12 * scale**2].ravel().tolist())
    return np.array(sorted(bad), dtype=np.int64) if bad else np.arange(m)


def _solve(problem: NlpProblem, x, with_overlap: bool, refs, tri, rng, notes) -> SolveReport:
    n_rows = refs.p + refs.q + 1
    mask = np.ones(n_rows, dtype=bool)
    mask[-1] = with_overlap
    prob = problem.with_mask(mask)
    try:
        rep = minimize_constrained(prob, x)
    except (ValueError, DegenerateGeometry) as exc:
        rep = SolveReport(np.array(x, dtype=float), np.nan, np.nan, np.nan, 0, 0, "degeneracy-signal")
        notes.append(f"solver could not start: {exc}")
    if rep.reason != "degeneracy-signal":
        return rep
    # jitter the vertices involved in the degeneracy once and retry
    m = refs.m
    verts = _suspect_vertices(rep.x, refs, tri)
    xy = np.column_stack([rep.x[:m], rep.x[m:]])
    bbox = max(float(np.hypot(*np.ptp(xy, axis=0))), 1e-300)
    x2 = rep.x.copy()
    noise = rng.standard_normal((len(verts), 2)) * 1e-9 * bbox
    x2[verts] += noise[:, 0]
    x2[verts + m] += noise[:, 1]
    notes.append(f"degeneracy signal: jittered {len(verts)} vertices and retried")
    try:
        return minimize_constrained(prob, x2)
    except (ValueError, DegenerateGeometry) as exc:
        notes.append(f"retry could not start: {exc}")
        return rep


def _errors(s, x, refs) -> tuple[float, float, int]:
    emb = PlanarEmbedding.from_vector(x, s)
    mr = compute_metrics(s, emb, refs)
    return mr.length_mean, mr.angle_mean, mr.overlaps


def flatten_full(s: RodStructure, cfg: FlattenConfig | None = None) -> FlattenResult:
    """Flatten ``s`` and return the embedding with all intermediate data."""
    cfg = cfg or FlattenConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    notes: list[str] = []
    emb0 = initial_embedding(s, cfg.init)
    refs = C.derive_references(s, decompose_chains(s), emb0.coords)
    loop = list(boundary_loop(s))
    if shoelace_area_and_grad(emb0.coords[loop])[0] < 0:
        loop = loop[::-1]  # keep the rim counter-clockwise so the area term is positive
    tri = _triangulate(s, emb0, loop, notes)
    area0 = abs(shoelace_area_and_grad(emb0.coords[loop])[0])
    if area0 <= 0:
        raise DegenerateGeometry("initial boundary encloses no area")
    problem = _problem(refs, tri, area0, cfg)

    x = emb0.as_vector()
    e_len, e_ang, n_ov = _errors(s, x, refs)
    reports: list[SolveReport] = []
    n_iter = 0
    while (e_len > cfg.length_tol or e_ang > cfg.angle_tol or n_ov > 0) and n_iter <= cfg.max_outer:
        if n_iter == 0:
            rep = _solve(problem, x, True, refs, tri, rng, notes)
        elif n_ov == 0:
            rep = _solve(problem, x, False, refs, tri, rng, notes)
        else:
            cur = PlanarEmbedding.from_vector(x, s)
            x = correct_overlaps_report(cur, s, samples=cfg.samples).embedding.as_vector()
            rep = _solve(problem, x, True, refs, tri, rng, notes)
        reports.append(rep)
        x = rep.x
        e_len, e_ang, n_ov = _errors(s, x, refs)
        log.info(
            "round %d: %s, length %.3e, angle %.3e, overlaps %d", n_iter, rep.reason, e_len, e_ang, n_ov
        )
        n_iter += 1
    stage = "optimized" if reports else "initial"
    final = PlanarEmbedding.from_vector(x, s, stage=stage)
    if n_ov > 0:
        corr = correct_overlaps_report(final, s, samples=cfg.samples)
        final = corr.embedding
        notes.append(f"final correction: {corr.initial_count} -> {corr.final_count} overlaps")
    metrics = compute_metrics(s, final, refs)
    metrics.outer_iterations = n_iter
    metrics.solver_reasons = [r.reason for r in reports]
    metrics.notes = notes
    metrics.wall_time = time.perf_counter() - t0
    return FlattenResult(final, metrics, emb0, refs, tri, reports)


def flatten(s: RodStructure, cfg: FlattenConfig | None = None) -> tuple[PlanarEmbedding, MetricsReport]:
    """Low-distortion, overlap-free planar embedding of ``s`` plus its metrics."""
    res = flatten_full(s, cfg)
    return res.embedding, res.metrics


def embedding_to_dict(emb: PlanarEmbedding) -> dict:
    s = emb.structure
    return {
        "format": "rodflat-embedding",
        "version": 1,
        "name": s.name,
        "stage": emb.stage,
        "m": s.m,
        "p": s.p,
        "coords": [[float(a), float(b)] for a, b in emb.coords],
        "edges": [[int(i), int(j)] for i, j in s.edges],
    }


def embedding_to_json(emb: PlanarEmbedding) -> str:
    return dumps(embedding_to_dict(emb), indent=1) + "\n"


def parse_embedding(text: str, s: RodStructure) -> PlanarEmbedding:
    """Read an embedding written by :func:`embedding_to_json` for structure ``s``."""
    import json

    from .structure import StructureError

    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructureError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(data, dict) or "coords" not in data:
        raise StructureError("embedding file has no 'coords'", "$")
    coords = np.asarray(data["coords"], dtype=float)
    edges = data.get("edges")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise StructureError("coords must be a list of [x, y] pairs", "$.coords")
    if len(coords) != s.m:
        raise StructureError(f"embedding has {len(coords)} vertices, structure has {s.m}", "$.coords")
    if edges is not None:
        e = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
        if len(e) != s.p or not np.array_equal(e, s.edges):
            raise StructureError("embedding edge list does not match the structure", "$.edges")
    stage = data.get("stage", "optimized")
    return PlanarEmbedding(coords, s, stage if stage in ("initial", "corrected", "optimized") else "optimized")

"""Quasi-static deployment from the flat layout back to the 3D shape.

Every rod is a linear spring with energy ``k (|p_i - p_j| - l_ij)^2`` and
rest length ``l_ij`` equal to its 3D length. The pulled vertices (joints by
default) move on straight lines from their planar position to their 3D
target in ``N`` equal steps. After each step the free vertices relax to a
spring-energy minimum, warm-started from the previous frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .embedding import PlanarEmbedding
from .geometry import DegenerateGeometry
from .structure import RodStructure, dumps


def spring_energy_and_grad(coords, edges, rest, k: float = 1.0) -> tuple[float, np.ndarray]:
    """``sum k (|p_i - p_j| - l)^2`` over rods and its ``(m, 3)`` gradient."""
    coords = np.asarray(coords, dtype=float)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    d = coords[edges[:, 0]] - coords[edges[:, 1]]
    length = np.linalg.norm(d, axis=1)
    if np.any(length == 0):
        i = int(np.flatnonzero(length == 0)[0])
        raise DegenerateGeometry(f"coincident spring endpoints {tuple(edges[i])}")
    stretch = length - np.asarray(rest, dtype=float)
    energy = float(k * np.sum(stretch**2))
    g = (2 * k * stretch / length)[:, None] * d
    m = len(coords)
    idx = np.concatenate([edges[:, 0], edges[:, 1]])
    gg = np.concatenate([g, -g])
    grad = np.column_stack([np.bincount(idx, weights=gg[:, c], minlength=m) for c in range(coords.shape[1])])
    return energy, grad


@dataclass(frozen=True)
class DeployConfig:
    """``pulled`` defaults to every joint (degree >= 3, or all vertices if none).

    Before each relaxation the free vertices are nudged by seeded noise of
    size ``perturb`` times the bounding-box diagonal of the target. A flat
    start is often an exact saddle of the spring energy (a straight chain
    being compressed, for instance) where the gradient vanishes; the nudge
    lets the relaxation leave it, as a physical structure would buckle.
    """

    pulled: tuple[int, ...] | None = None
    steps: int = 50
    gtol: float = 1e-8
    max_iter: int = 2000
    stiffness: float = 1.0
    align: bool = True
    perturb: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.stiffness <= 0:
            raise ValueError("stiffness must be positive")
        if self.perturb < 0:
            raise ValueError("perturb must be >= 0")
        if self.pulled is not None and len(self.pulled) == 0:
            raise ValueError("pulled vertex set is empty")


@dataclass
class DeployTrajectory:
    frames: list[np.ndarray]
    energy: list[float]
    pulled: np.ndarray
    edges: np.ndarray
    flags: list[str] = field(default_factory=list)
    traces: list[list[float]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "format": "rodflat-trajectory",
            "version": 1,
            "pulled": [int(i) for i in self.pulled],
            "energy": [float(e) for e in self.energy],
            "flags": list(self.flags),
            "frames": [[[float(a) for a in p] for p in f] for f in self.frames],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict(), indent=1) + "\n"

    def frame_obj(self, t: int) -> str:
        """Plain-text ``v``/``l`` dump of one frame (1-based indices)."""
        lines = [f"# frame {t} energy {self.energy[t]!r}"]
        lines += [f"v {p[0]!r} {p[1]!r} {p[2]!r}" for p in self.frames[t].tolist()]
        lines += [f"l {i + 1} {j + 1}" for i, j in self.edges.tolist()]
        return "\n".join(lines) + "\n"


def _align_planar(xy: np.ndarray, target: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Rotate and translate ``xy`` to best match ``target[:, :2]`` on ``idx``.

    The flat layout is only defined up to a rigid motion of the plane; this
    fixes that motion so the pulls are as short as possible. Reflections are
    not allowed.
    """
    a = xy[idx]
    b = target[idx, :2]
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, _, vt = np.linalg.svd(h)
    r = (u @ vt).T
    if np.linalg.det(r) < 0:
        vt[-1] *= -1
        r = (u @ vt).T
    return (xy - ca) @ r.T + cb


def default_pulled(s: RodStructure) -> np.ndarray:
    deg = s.degrees()
    joints = np.flatnonzero(deg >= 3)
    return joints if len(joints) else np.arange(s.m)


def deploy(s: RodStructure, emb: PlanarEmbedding, cfg: DeployConfig | None = None) -> DeployTrajectory:
    """Morph the flat layout into the 3D structure by pulling vertices."""
    cfg = cfg or DeployConfig()
    if emb.structure.m != s.m or emb.structure.p != s.p:
        raise ValueError(f"embedding ({emb.structure.m} vertices) does not belong to this structure ({s.m})")
    target = s.vertices
    pulled = np.asarray(cfg.pulled if cfg.pulled is not None else default_pulled(s), dtype=np.int64)
    if np.any(pulled < 0) or np.any(pulled >= s.m):
        raise ValueError("pulled vertex index out of range")
    pulled = np.unique(pulled)
    xy = np.asarray(emb.coords, dtype=float)
    if cfg.align:
        xy = _align_planar(xy, target, pulled)
    start = np.column_stack([xy, np.zeros(s.m)])
    free = np.setdiff1d(np.arange(s.m), pulled)
    rest = s.rest_lengths()
    edges = s.edges
    frames = [start.copy()]
    energy = [cfg.stiffness * spring_energy_and_grad(start, edges, rest)[0]]
    flags: list[str] = []
    traces: list[list[float]] = []
    cur = start.copy()
    rng = np.random.default_rng(cfg.seed)
    nudge = cfg.perturb * float(np.linalg.norm(np.ptp(target, axis=0)))
    for t in range(1, cfg.steps + 1):
        lam = t / cfg.steps
        cur[pulled] = (1 - lam) * start[pulled] + lam * target[pulled]
        if t == cfg.steps:
            cur[pulled] = target[pulled]
        trace: list[float] = []
        if len(free):
            if nudge > 0:
                cur[free] += nudge * rng.standard_normal((len(free), 3))
            base = cur.copy()

            # uniform stiffness only scales the energy, so the minimisation
            # runs on the unit-stiffness energy and the result is k-invariant
            def fun(z):
                base[free] = z.reshape(-1, 3)
                e, g = spring_energy_and_grad(base, edges, rest)
                return e, g[free].ravel()

            def record(intermediate_result):
                trace.append(float(intermediate_result.fun))

            try:
                trace.append(fun(cur[free].ravel())[0])
                res = minimize(
                    fun,
                    cur[free].ravel(),
                    jac=True,
                    method="L-BFGS-B",
                    callback=record,
                    options={"gtol": cfg.gtol, "ftol": 0.0, "maxiter": cfg.max_iter},
                )
                cur[free] = res.x.reshape(-1, 3)
                # a line-search stop at machine precision still counts as converged
                ginf = float(np.max(np.abs(res.jac))) if res.jac.size else 0.0
                if not res.success and (res.nit >= cfg.max_iter or ginf > 10 * cfg.gtol):
                    flags.append(f"step {t}: relaxation did not converge ({res.message}, |g| {ginf:.2e})")
            except DegenerateGeometry as exc:
                flags.append(f"step {t}: {exc}")
        traces.append(trace)
        frames.append(cur.copy())
        energy.append(cfg.stiffness * spring_energy_and_grad(cur, edges, rest)[0])
    return DeployTrajectory(frames, energy, pulled, edges.copy(), flags, traces)

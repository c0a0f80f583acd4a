"""Low-distortion, overlap-free planar embeddings of 3D rod structures."""

import os as _os

# RODFLAT_THREADS caps BLAS/OpenMP threads; it only takes effect if set before
# numpy is first imported, which is the case for the command line tool.
# Invalid values are ignored here and reported by the command line tool.
_threads = _os.environ.get("RODFLAT_THREADS", "").strip()
if _threads.isdigit() and int(_threads) >= 1:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ[_var] = _threads

from .embedding import PlanarEmbedding, initial_embedding, tutte_embed  # noqa: E402
from .fixtures import generate  # noqa: E402
from .geometry import DegenerateGeometry, count_overlaps, detect_overlaps  # noqa: E402
from .hybrid import mesh_surface_regions  # noqa: E402
from .morph import DeployConfig, DeployTrajectory, deploy, spring_energy_and_grad  # noqa: E402
from .pipeline import FlattenConfig, MetricsReport, compute_metrics, flatten, metrics_for  # noqa: E402
from .correction import correct_overlaps  # noqa: E402
from .solver import NlpProblem, minimize_constrained  # noqa: E402
from .structure import RodStructure, StructureError, load_structure, parse_structure, save_structure  # noqa: E402
from .svg import export_svg  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "DegenerateGeometry",
    "DeployConfig",
    "DeployTrajectory",
    "FlattenConfig",
    "MetricsReport",
    "NlpProblem",
    "PlanarEmbedding",
    "RodStructure",
    "StructureError",
    "compute_metrics",
    "correct_overlaps",
    "count_overlaps",
    "deploy",
    "detect_overlaps",
    "export_svg",
    "flatten",
    "generate",
    "initial_embedding",
    "load_structure",
    "mesh_surface_regions",
    "metrics_for",
    "minimize_constrained",
    "parse_structure",
    "save_structure",
    "spring_energy_and_grad",
    "tutte_embed",
]

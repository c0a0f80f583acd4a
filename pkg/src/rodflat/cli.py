"""``rodflat`` command line: gen, flatten, deploy, metrics, svg.

Exit codes: 0 success, 1 quality gate failed (or numerical failure),
2 usage error, 3 input/output or parse error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

EXIT_OK, EXIT_GATE, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("rodflat")


class InputError(Exception):
    """Unreadable, unwritable or inconsistent input files (exit code 3)."""


def _read(path: str) -> str:
    try:
        if path == "-":
            return sys.stdin.read()
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path: str, text: str) -> None:
    try:
        if path == "-":
            sys.stdout.write(text)
            return
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror or exc}") from None


def _load_structure(path: str):
    from .structure import StructureError, parse_structure

    try:
        return parse_structure(_read(path))
    except StructureError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_pair(struct_path: str, emb_path: str):
    """Structure and embedding; augments the structure if the embedding was made hybrid."""
    from .embedding import EmbeddingError
    from .hybrid import mesh_surface_regions
    from .pipeline import parse_embedding
    from .structure import StructureError

    s = _load_structure(struct_path)
    text = _read(emb_path)
    candidates = [s]
    if s.surface_regions:
        try:
            candidates.insert(0, mesh_surface_regions(s))
        except StructureError as exc:
            raise InputError(f"{struct_path}: {exc}") from None
    for k, cand in enumerate(candidates):
        try:
            return cand, parse_embedding(text, cand)
        except (StructureError, EmbeddingError) as exc:
            if k == len(candidates) - 1:
                raise InputError(f"{emb_path} does not match {struct_path}: {exc}") from None
    raise AssertionError("unreachable")


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    from .fixtures import generate
    from .structure import serialize_structure

    try:
        s = generate(
            args.kind,
            n=args.n,
            sub=args.sub,
            height=args.height,
            size=args.size,
            seed=args.seed,
            with_boundary=args.with_boundary,
        )
    except ValueError as exc:
        print(f"rodflat gen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _write(args.output, serialize_structure(s))
    log.info("wrote %s: %d vertices, %d rods", args.output, s.m, s.p)
    return EXIT_OK


def _summary(mr, tol: float) -> str:
    verdict = "PASS" if mr.passes(tol, tol) else "FAIL"
    return (
        f"{verdict}: length error mean {mr.length_mean:.3e}, angle error mean {mr.angle_mean:.3e} rad, "
        f"overlaps {mr.overlaps} (threshold {tol:g})"
    )


def cmd_flatten(args) -> int:
    from .geometry import DegenerateGeometry, TriangulationError
    from .hybrid import mesh_surface_regions
    from .pipeline import FlattenConfig, flatten_full, embedding_to_json
    from .svg import export_svg

    s = _load_structure(args.input)
    if s.surface_regions:
        if args.no_hybrid:
            log.info("ignoring %d surface region(s)", len(s.surface_regions))
        else:
            try:
                s = mesh_surface_regions(s)
            except ValueError as exc:
                raise InputError(f"{args.input}: {exc}") from None
    cfg = FlattenConfig(
        init=args.init, length_tol=args.tol, angle_tol=args.tol, max_outer=args.max_outer, seed=args.seed
    )
    t0 = time.perf_counter()
    try:
        res = flatten_full(s, cfg)
    except (DegenerateGeometry, TriangulationError) as exc:
        print(f"rodflat flatten: numerical failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    mr = res.metrics
    _write(args.output, embedding_to_json(res.embedding))
    if args.metrics:
        _write(args.metrics, mr.to_json())
    if args.breakdown:
        _write(args.breakdown, mr.breakdown_csv())
    if args.svg:
        _write(args.svg, export_svg(res.embedding.coords, s.edges, mr.length_rel, title=s.name or None))
    print(_summary(mr, args.tol) + f" in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return EXIT_OK if mr.passes(args.tol, args.tol) else EXIT_GATE


def cmd_deploy(args) -> int:
    from .morph import DeployConfig, deploy

    s, emb = _load_pair(args.structure, args.embedding)
    pulled = None
    if args.pull == "all":
        pulled = tuple(range(s.m))
    try:
        cfg = DeployConfig(pulled=pulled, steps=args.steps, gtol=args.gtol)
    except ValueError as exc:
        print(f"rodflat deploy: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    tr = deploy(s, emb, cfg)
    _write(args.output, tr.to_json())
    if args.frames_dir:
        try:
            os.makedirs(args.frames_dir, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create {args.frames_dir}: {exc.strerror or exc}") from None
        width = len(str(len(tr.frames) - 1))
        for t in range(len(tr.frames)):
            _write(os.path.join(args.frames_dir, f"frame_{t:0{width}d}.obj"), tr.frame_obj(t))
    for f in tr.flags:
        print(f"rodflat deploy: warning: {f}", file=sys.stderr)
    print(f"{len(tr.frames)} frames, final spring energy {tr.energy[-1]:.3e}", file=sys.stderr)
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .pipeline import metrics_for

    s, emb = _load_pair(args.structure, args.embedding)
    mr = metrics_for(s, emb)
    _write(args.metrics or "-", mr.to_json())
    if args.breakdown:
        _write(args.breakdown, mr.breakdown_csv())
    print(_summary(mr, args.tol), file=sys.stderr)
    return EXIT_OK if mr.passes(args.tol, args.tol) else EXIT_GATE


def cmd_svg(args) -> int:
    from .pipeline import metrics_for
    from .svg import export_svg

    s, emb = _load_pair(args.structure, args.embedding)
    errors = metrics_for(s, emb).length_rel if args.color == "length" else None
    _write(args.output, export_svg(emb.coords, s.edges, errors, title=s.name or None))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    from .fixtures import KINDS

    p = argparse.ArgumentParser(
        prog="rodflat",
        description="Flatten 3D rod structures into low-distortion, overlap-free planar layouts.",
        epilog="Set RODFLAT_THREADS to cap the number of BLAS/OpenMP threads.",
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    g = sub.add_parser("gen", help="write a synthetic fixture structure", description="Write a synthetic fixture.")
    g.add_argument("kind", choices=KINDS)
    g.add_argument("-o", "--output", default="-", help="output JSON path ('-' for stdout)")
    g.add_argument("--n", type=int, default=None, help="joints per side (>= 3)")
    g.add_argument("--sub", type=int, default=None, help="rod segments per span")
    g.add_argument("--height", type=float, default=None, help="surface amplitude (>= 0)")
    g.add_argument("--size", type=_positive_float, default=2.0, help="side length of the footprint")
    g.add_argument("--seed", type=int, default=0, help="seed for randomised kinds")
    g.add_argument("--with-boundary", action="store_true", help="store the rim loop in the file")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("flatten", help="flatten a structure", description="Flatten a structure JSON file.")
    f.add_argument("input", help="structure JSON")
    f.add_argument("-o", "--output", default="-", help="embedding JSON path ('-' for stdout)")
    f.add_argument("--init", choices=("tutte", "project"), default="tutte", help="initial layout")
    f.add_argument("--tol", type=_positive_float, default=1e-4, help="threshold on both mean errors")
    f.add_argument("--max-outer", type=_positive_int, default=10, help="cap on optimise/correct rounds")
    f.add_argument("--seed", type=int, default=0, help="seed for degeneracy jitter")
    f.add_argument("--svg", metavar="PATH", help="also write an SVG coloured by length error")
    f.add_argument("--metrics", metavar="PATH", help="also write the metrics JSON")
    f.add_argument("--breakdown", metavar="PATH", help="also write per-rod and per-angle errors as CSV")
    f.add_argument("--no-hybrid", action="store_true", help="ignore surface regions instead of filling them")
    f.set_defaults(func=cmd_flatten)

    d = sub.add_parser("deploy", help="simulate 2D to 3D deployment", description="Pull a flat layout into 3D.")
    d.add_argument("structure", help="structure JSON")
    d.add_argument("embedding", help="embedding JSON from 'rodflat flatten'")
    d.add_argument("-o", "--output", default="-", help="trajectory JSON path ('-' for stdout)")
    d.add_argument("--steps", type=_positive_int, default=50, help="number of pull steps")
    d.add_argument("--pull", choices=("joints", "all"), default="joints", help="which vertices are pulled")
    d.add_argument("--gtol", type=_positive_float, default=1e-8, help="gradient tolerance of each relaxation")
    d.add_argument("--frames-dir", metavar="DIR", help="also write one OBJ-style file per frame")
    d.set_defaults(func=cmd_deploy)

    m = sub.add_parser("metrics", help="report distortion of an embedding", description="Report metrics.")
    m.add_argument("structure", help="structure JSON")
    m.add_argument("embedding", help="embedding JSON")
    m.add_argument("--metrics", metavar="PATH", help="metrics JSON path (default stdout)")
    m.add_argument("--breakdown", metavar="PATH", help="also write per-rod and per-angle errors as CSV")
    m.add_argument("--tol", type=_positive_float, default=1e-4, help="threshold on both mean errors")
    m.set_defaults(func=cmd_metrics)

    v = sub.add_parser("svg", help="draw an embedding as SVG", description="Export an embedding as SVG.")
    v.add_argument("structure", help="structure JSON")
    v.add_argument("embedding", help="embedding JSON")
    v.add_argument("-o", "--output", default="-", help="SVG path ('-' for stdout)")
    v.add_argument("--color", choices=("none", "length"), default="length", help="rod colouring")
    v.set_defaults(func=cmd_svg)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    threads = os.environ.get("RODFLAT_THREADS", "").strip()
    if threads and not (threads.isdigit() and int(threads) >= 1):
        print(f"rodflat: error: RODFLAT_THREADS must be a positive integer, not {threads!r}", file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"rodflat {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

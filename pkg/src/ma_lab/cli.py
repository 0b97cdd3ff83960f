"""Command-line entry point: ``ma-lab <subcommand> ...``.

Exit codes: 0 success/pass, 1 a check failed, 2 bad input.  Negative
numbers in list options need the ``--opt=-1,0`` spelling.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import FAMILIES, RADIAL_R_MIN, ParameterError, parse_reference
from .convex import DegenerateInputError, build_extrinsic_ball, build_section, section_diameter_scan
from .fieldio import file_hash, read_field, read_header, write_columns, write_field
from .grid import GridError, GridSpec, PotentialField
from .inequalities import (
    CheckTolerances,
    DoublingSpec,
    InvalidSpecError,
    NotCertifiedError,
    check_doubling,
    check_identities,
    check_jacobi,
    korevaar_probe,
)
from .lagrangian import geometry_fields
from .pipeline import PipelineAbort, PipelineConfig, load_config, run_pipeline
from .reporting import dumps
from .solver import (
    Certificate,
    DirichletProblem,
    SolverConfig,
    SolverInputError,
    solve_dirichlet,
    solve_reference,
)

INPUT_ERRORS = (
    GridError,
    ParameterError,
    InvalidSpecError,
    NotCertifiedError,
    SolverInputError,
    DegenerateInputError,
    ValueError,
    OSError,
    KeyError,
)


class InputError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _threads() -> int:
    raw = os.environ.get("MA_LAB_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"MA_LAB_THREADS must be an integer, got {raw!r}")
    import numba

    if n < 0:
        raise InputError("MA_LAB_THREADS must be >= 0")
    if n == 0:
        return int(numba.config.NUMBA_NUM_THREADS)
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def _grid(args, dim: int) -> GridSpec:
    lo = args.lo if args.lo is not None else [-1.0]
    hi = args.hi if args.hi is not None else [1.0]
    if len(lo) == 1:
        lo = lo * dim
    if len(hi) == 1:
        hi = hi * dim
    if len(lo) != dim or len(hi) != dim:
        raise InputError(f"box bounds must have {dim} entries")
    return GridSpec.box(lo, hi, args.grid)


def _load(path: str):
    u = read_field(path)
    meta = read_header(path).get("meta") or {}
    return u, Certificate.from_dict(meta.get("certificate")), meta


def _exclusion(u: PotentialField, meta: dict):
    ex = meta.get("exclude")
    if not ex:
        return None
    x = u.grid.coords()
    return np.linalg.norm(x - np.asarray(ex["center"], float), axis=-1) < float(ex["radius"])


def _exclude_meta(ref, grid: GridSpec) -> dict | None:
    for loc, _ in ref.atoms():
        if np.any(ref.excluded(grid.points())):
            return {"center": loc.tolist(), "radius": RADIAL_R_MIN}
    return None


def _emit(report: dict, out: str | None):
    text = dumps(report)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _envelope(args, inputs: dict, extra: dict | None = None) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    env = {
        "tool": "ma-lab",
        "version": __version__,
        "command": args.command,
        "config": cfg,
        "inputs": {k: file_hash(v) for k, v in inputs.items() if v},
        "seed": getattr(args, "seed", None),
        "threads": _threads(),
    }
    if extra:
        env.update(extra)
    return env


def _center(args, grid: GridSpec) -> np.ndarray:
    c = np.asarray(args.center, float)
    if c.shape != (grid.dim,):
        raise InputError(f"--center needs {grid.dim} coordinates")
    if not grid.contains(c):
        raise GridError("centre lies outside the grid box")
    return c


# ------------------------------------------------------------ subcommands

def cmd_solve(args) -> int:
    cfg = SolverConfig(newton_tol=args.newton_tol, max_newton_iters=args.max_iters, init=args.init)
    inputs = {}
    if Path(args.boundary).is_file():
        # boundary data taken from an existing field file on its own grid
        src = read_field(args.boundary)
        inputs["boundary"] = args.boundary
        ref, grid = None, src.grid
        u, rep = solve_dirichlet(DirichletProblem(grid, src.values), cfg)
        label = f"file:{Path(args.boundary).name}"
    else:
        ref = parse_reference(args.boundary)
        grid = _grid(args, ref.dim)
        u, rep = solve_reference(ref, grid, cfg)
        label = ref.label()
    cert = Certificate.from_report(rep)
    if args.out:
        write_field(
            args.out,
            u,
            {"reference": label, "certificate": cert.to_dict() if cert else None, "solve": rep.to_dict()},
        )
    body = {"solve": rep.to_dict(), "reference": label, "grid": grid.to_dict()}
    if args.exact_error and ref is not None:
        exact = np.asarray(ref(grid.points()), float).reshape(grid.shape)
        body["sup_error"] = float(np.abs(u.values - exact)[grid.interior(1)].max())
    _emit(_envelope(args, inputs, body), args.report)
    return 0 if rep.converged else 1


def cmd_geometry(args) -> int:
    u, _, _ = _load(args.field)
    p = _center(args, u.grid)
    fields_ = geometry_fields(u, p)
    unknown = set(args.emit) - set(fields_)
    if unknown:
        raise InputError(f"unknown geometry fields {sorted(unknown)}; choose from {sorted(fields_)}")
    cols = {k: fields_[k] for k in args.emit}
    if args.out:
        write_columns(args.out, u.grid, cols)
    valid = fields_["valid"] > 0
    summary = {
        k: {"min": float(np.nanmin(v[valid])), "max": float(np.nanmax(v[valid]))} if valid.any() else None
        for k, v in cols.items()
    }
    _emit(_envelope(args, {"field": args.field}, {"center": p.tolist(), "summary": summary}), args.report)
    return 0


def _index_list(mask: np.ndarray) -> list:
    return [list(map(int, i)) for i in np.argwhere(mask)]


def cmd_sections(args) -> int:
    u, _, _ = _load(args.field)
    p = _center(args, u.grid)
    body = {"center": p.tolist(), "r": args.r}
    masks = {}
    for what in args.emit:
        if what == "section":
            s = build_section(u, p, args.r)
            masks["section"] = s.mask
            body["section"] = {"nodes": _index_list(s.mask), "slopes": s.sub.slopes.tolist()}
        elif what == "ball":
            b = build_extrinsic_ball(u, p, args.r)
            masks["ball"] = b.mask
            body["ball"] = {
                "nodes": _index_list(b.mask),
                "component": _index_list(b.component),
                "star_shaped": b.star_shaped,
            }
        else:
            raise InputError(f"unknown mask {what!r}; choose section or ball")
    if "section" in masks and "ball" in masks:
        body["ball_in_section"] = not bool(np.any(masks["ball"] & ~masks["section"]))
    if args.diameter_scan:
        body["diameter_scan"] = section_diameter_scan(u, args.diameter_scan)
    if args.emit_csv:
        write_columns(args.emit_csv, u.grid, {k: v.astype(float) for k, v in masks.items()})
    env = _envelope(args, {"field": args.field}, body)
    if args.out:
        Path(args.out).write_text(dumps(env) + "\n")
        print(dumps({k: v for k, v in env.items() if k not in ("section", "ball")}))
    else:
        print(dumps(env))
    return 0 if body.get("ball_in_section", True) else 1


def _tolerances(args) -> CheckTolerances:
    return CheckTolerances(id_coef=args.id_coef, jac_coef=args.jac_coef, region=args.region)


def cmd_check(args) -> int:
    u, cert, meta = _load(args.field)
    inputs = {"field": args.field}
    exclude = _exclusion(u, meta)
    if args.check == "jacobi":
        rep = check_jacobi(u, cert, args.diagnostic, _tolerances(args), exclude)
        ok = rep.passed or not rep.certified
    elif args.check == "identities":
        if cert is None and not args.diagnostic:
            raise NotCertifiedError("identities hold for solutions only (use --diagnostic)")
        rng = np.random.default_rng(args.seed)
        half = u.grid.sub_box(0.5) & u.grid.interior(2)
        if exclude is not None:
            half &= ~exclude
        pts = u.grid.points()[half.reshape(-1)]
        centers = pts[rng.choice(len(pts), size=min(args.centers, len(pts)), replace=False)]
        rep = check_identities(u, centers, _tolerances(args), exclude)
        ok = rep.passed
    else:
        if len(args.radii) != 4:
            raise InputError("--radii needs r1,r2,r3,r4")
        spec = DoublingSpec(tuple(_center(args, u.grid)), *args.radii)
        if args.check == "doubling":
            rep = check_doubling(u, spec, cert, args.diagnostic)
        else:
            rep = korevaar_probe(u, spec, cert, args.diagnostic)
        ok = rep.passed
    body = {"check": args.check, "report": rep, "reference": meta.get("reference")}
    _emit(_envelope(args, inputs, body), args.out)
    return 0 if ok else 1


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = cfg.to_dict()
    if args.boundary:
        over["boundary"] = args.boundary
    if args.grid_n:
        over["grid"] = args.grid_n
    if args.lo is not None:
        over["lo"] = args.lo
    if args.hi is not None:
        over["hi"] = args.hi
    if args.seed is not None:
        over["seed"] = args.seed
    cfg = PipelineConfig.from_dict(over)
    rep = run_pipeline(cfg)
    env = _envelope(args, {"config": args.config}, {"report": rep})
    env["seed"] = cfg.seed
    _emit(env, args.out)
    if rep.failed_step == "input":
        return 2
    return 0 if rep.passed else 1


def _family_spec(args) -> str:
    if args.kind is None:
        return args.family
    if args.kind == "radial":
        return f"radial:c={args.c}"
    if args.kind == "pogorelov":
        return f"pogorelov:n={args.n}"
    if args.A:
        return f"quadratic:A={args.A}"
    return f"quadratic:identity{args.n}"


def cmd_library(args) -> int:
    if args.action == "list":
        print(dumps({"families": FAMILIES, "version": __version__}))
        return 0
    ref = parse_reference(_family_spec(args))
    grid = _grid(args, ref.dim)
    vals = np.asarray(ref(grid.points()), float).reshape(grid.shape)
    u = PotentialField(grid, vals)
    cert = None
    if ref.is_solution and not any(grid.contains(loc) for loc, _ in ref.atoms()):
        cert = Certificate("exact", label=ref.label())
    meta = {"reference": ref.label(), "certificate": cert.to_dict() if cert else None, "exclude": _exclude_meta(ref, grid)}
    if args.out:
        write_field(args.out, u, meta)
    _emit(_envelope(args, {}, {"reference": ref.label(), "grid": grid.to_dict(), "certified": cert is not None}), None)
    return 0


# ---------------------------------------------------------------- parser

def _add_box(p, default_grid=65):
    p.add_argument("--grid", type=int, default=default_grid, help="nodes per axis")
    p.add_argument("--lo", type=_floats, help="lower box corner, e.g. --lo=-1,-1 (scalar broadcasts)")
    p.add_argument("--hi", type=_floats, help="upper box corner")


def _add_tols(p):
    p.add_argument("--id-coef", type=float, default=CheckTolerances.id_coef, help="tol_id = coef * h^2")
    p.add_argument("--jac-coef", type=float, default=CheckTolerances.jac_coef, help="tol_jac = coef * h^2")
    p.add_argument("--region", type=float, default=CheckTolerances.region, help="checked concentric sub-box fraction")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ma-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve det D^2u = 1 with boundary data from a reference function")
    s.add_argument("--boundary", required=True, help="reference spec (radial:c=1, quadratic:diag=4,0.25, ...) or a field file")
    _add_box(s)
    s.add_argument("--tol", "--newton-tol", dest="newton_tol", type=float, default=1e-10)
    s.add_argument("--max-iters", type=int, default=50)
    s.add_argument("--init", choices=("envelope", "poisson"), default="envelope")
    s.add_argument("--exact-error", action="store_true", help="report sup |u - reference| over interior nodes")
    s.add_argument("--out", help="field file (.csv or binary)")
    s.add_argument("--report", help="write the JSON report here as well")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("geometry", help="extrinsic distance, a, b and their g-derivatives as CSV columns")
    g.add_argument("--field", required=True)
    g.add_argument("--center", type=_floats, required=True)
    g.add_argument("--emit", type=_names, default=["z", "a", "b", "lap_z", "grad_z_sq"])
    g.add_argument("--out", help="CSV output")
    g.add_argument("--report")
    g.set_defaults(func=cmd_geometry)

    c = sub.add_parser("sections", help="section and extrinsic-ball node masks")
    c.add_argument("--field", required=True)
    c.add_argument("--center", type=_floats, required=True)
    c.add_argument("--r", type=float, required=True)
    c.add_argument("--emit", type=_names, default=["section", "ball"])
    c.add_argument("--diameter-scan", type=_floats, help="radii for a section-diameter scan over half-box centres")
    c.add_argument("--emit-csv", help="write mask columns for plotting")
    c.add_argument("--out", help="JSON with sorted node-index lists")
    c.set_defaults(func=cmd_sections)

    k = sub.add_parser("check", help="Jacobi, identity, doubling and Korevaar-probe checks")
    k.add_argument("check", choices=("jacobi", "identities", "doubling", "probe"))
    k.add_argument("--field", required=True)
    k.add_argument("--center", type=_floats)
    k.add_argument("--radii", type=_floats, help="r1,r2,r3,r4")
    k.add_argument("--diagnostic", action="store_true", help="allow fields without a solution certificate")
    k.add_argument("--centers", type=int, default=20, help="random centres for the identity check")
    k.add_argument("--seed", type=int, default=0)
    _add_tols(k)
    k.add_argument("--out")
    k.set_defaults(func=cmd_check)

    q = sub.add_parser("pipeline", help="approximation, singular mask, centre selection, doubling, Hessian bound")
    q.add_argument("--boundary")
    q.add_argument("--grid", dest="grid_n", type=int)
    q.add_argument("--lo", type=_floats)
    q.add_argument("--hi", type=_floats)
    q.add_argument("--config", help="TOML file with a [pipeline] table")
    q.add_argument("--seed", type=int)
    q.add_argument("--out")
    q.set_defaults(func=cmd_pipeline)

    lib = sub.add_parser("library", help="list or sample the reference families")
    lib.add_argument("action", choices=("list", "sample"))
    lib.add_argument("--family", default="quadratic:identity2", help="reference spec, e.g. radial:c=1")
    lib.add_argument("--kind", choices=("quadratic", "radial", "pogorelov"), help="alternative to --family")
    lib.add_argument("--c", type=float, default=1.0, help="radial parameter")
    lib.add_argument("--n", type=int, default=3, help="dimension for pogorelov / identity quadratic")
    lib.add_argument("--A", help="quadratic matrix rows, e.g. 4,0;0,0.25")
    _add_box(lib)
    lib.add_argument("--out")
    lib.set_defaults(func=cmd_library)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "check" and args.check in ("doubling", "probe") and (args.center is None or args.radii is None):
        print(f"check {args.check} needs --center and --radii", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except PipelineAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InputError, argparse.ArgumentTypeError) + INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

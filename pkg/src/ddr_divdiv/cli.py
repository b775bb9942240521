"""Command-line front end for the div-div complex verification harness."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import verify
from .ddr_full import FullComplex
from .mesh import FAMILIES, SHAPES, MeshError, load_mesh
from .serendipity import SerendipityComplex, SerendipityError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# coarsest family parameter and number of levels when the flags are omitted
DEFAULT_LEVELS = {
    "check": (2, 1),
    "dof": (8, 1),
    "poincare": (16, 3),
    "converge": (4, 4),
    "plate": (4, 3),
}


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _theta(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"theta must lie in (0, 1), got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--mesh", metavar="PATH", help="JSON mesh file with 'vertices' and 'cells'")
    src.add_argument("--family", choices=sorted(FAMILIES), help="built-in mesh family")
    common.add_argument("--k", type=int, default=3, help="polynomial degree (k >= 3)")
    common.add_argument("--theta", type=_theta, default=0.1, help="serendipity edge-selection threshold")
    common.add_argument("--levels", type=_positive_int, help="number of refinement levels")
    common.add_argument("--start", type=_positive_int, help="family parameter of the coarsest level")
    common.add_argument("--seed", type=int, default=0, help="random seed for sampled checks")
    common.add_argument("--tol", type=float, help="override the tolerance of residual checks")
    common.add_argument("--out", metavar="PATH", help="write the report as JSON here and CSV beside it")
    common.add_argument("--workers", type=_positive_int, default=1, help="worker processes across levels")

    parser = argparse.ArgumentParser(prog="ddr-divdiv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", parents=[common], help="run the identity and cohomology suites")
    p.add_argument("--mode", choices=("full", "serendipity", "cross", "all"), default="all")
    p.add_argument("--draws", type=_positive_int, default=50, help="random inputs per sampled identity")
    p = sub.add_parser("dof", parents=[common], help="full versus serendipity DOF counts")
    p.add_argument("--shape", choices=SHAPES, action="append", help="reference cell (repeatable)")
    sub.add_parser("poincare", parents=[common], help="discrete Poincare, Korn and norm constants")
    p = sub.add_parser("converge", parents=[common], help="consistency rates on a manufactured solution")
    p.add_argument("--draws", type=int, default=0, help="random fields for the sampled sup (reported only)")
    p = sub.add_parser("plate", parents=[common], help="mixed clamped plate solve")
    p.add_argument("--serendipity", action="store_true", help="solve in the serendipity spaces")
    return parser


def _levels(args) -> list[int]:
    start, count = DEFAULT_LEVELS[args.command]
    start = args.start or start
    count = args.levels or count
    return [start * 2 ** i for i in range(count)]


def _apply_tolerance(rep: verify.Report, tol: float | None) -> None:
    if tol is None:
        return
    for c in rep.checks:
        if c.kind == "residual":
            c.tolerance = tol
            c.passed = bool(np.isfinite(c.value) and c.value <= tol)


def _mesh_constants(mesh, k: int, theta: float) -> verify.Report:
    cx = FullComplex(mesh, k)
    sc = SerendipityComplex(cx, theta)
    rep = verify.Report("constants", {"k": k, "cells": mesh.n_cells, "theta_min": theta})
    values = {
        "poincare_V": verify.poincare_v(cx),
        "poincare_Sigma": verify.poincare_sigma(cx),
        "inf_sup": float(sc.inf_sup_constants().min()),
    }
    for which in ("grad", "symcurl", "symgrad"):
        values[f"pk_{which}"] = verify.hybrid_poincare_korn(mesh, k, which, cx)
    for key, v in values.items():
        rep.add(key, "discrete constant on a single mesh", v, np.inf, kind="constant",
                passed=bool(np.isfinite(v) and v > 0))
    return rep


def run(args) -> verify.Report:
    if args.k < 3:
        raise UsageError(f"--k {args.k} is not supported: the discrete complex requires degree k >= 3")
    mesh = load_mesh(args.mesh) if args.mesh else None
    family = args.family or ("square" if args.command in ("poincare", "converge", "plate") else "tri")
    levels = _levels(args)

    if args.command == "check":
        if mesh is not None:
            return verify.run_identity_suite(mesh, args.k, args.mode, args.seed, args.draws, args.theta)
        return verify.identity_study(family, args.k, levels, args.mode, args.seed, args.draws, args.theta,
                                     args.workers)
    if args.command == "dof":
        rep = verify.dof_report((args.k,), tuple(args.shape or SHAPES), args.theta,
                                families=(args.family,) if args.family else None, family_n=levels[0])
        if mesh is not None:
            sc = SerendipityComplex(FullComplex(mesh, args.k), args.theta)
            rep.metadata["mesh"] = sc.dof_counts()
        return rep
    if args.command == "poincare":
        if mesh is not None:
            return _mesh_constants(mesh, args.k, args.theta)
        return verify.uniformity_study(family, args.k, levels, args.theta, args.workers)
    if mesh is not None:
        raise UsageError(f"{args.command} runs on a refinement family; use --family instead of --mesh")
    if args.command == "converge":
        return verify.convergence_study(family, args.k, levels, args.theta, args.seed, args.draws, args.workers)
    return verify.plate_study(family, args.k, levels, args.serendipity, args.theta, args.workers)


def write_report(rep: verify.Report, path) -> None:
    path = Path(path)
    verify.write_atomic(path, verify.dumps(rep.to_dict()))
    verify.write_atomic(path.with_suffix(".csv"), rep.to_csv())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        rep = run(args)
    except UsageError as exc:
        print(f"ddr-divdiv: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MeshError, SerendipityError, ValueError) as exc:
        print(f"ddr-divdiv: input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _apply_tolerance(rep, args.tol)
    for line in rep.summary_lines():
        print(line)
    if args.out:
        write_report(rep, args.out)
    print(f"{'PASSED' if rep.passed else 'FAILED'}: {len(rep.checks) - len(rep.failures())}/{len(rep.checks)} checks")
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

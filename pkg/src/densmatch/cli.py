"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 registration diverged.
Volumes are MetaImage files; maps are given by their unsuffixed name and
stored as ``<name>_x``, ``<name>_y``, ``<name>_z``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from densmatch.density import as_density, fisher_rao_sphere, hellinger_sq, pushforward
from densmatch.errors import DensMatchError, DivergedError
from densmatch.grid import GridGeometry, check_geometry, jacobian_determinant_fd
from densmatch.io import read_vector, read_volume, write_volume
from densmatch.matching import (
    InverseTransform,
    Penalty,
    RegistrationConfig,
    default_sigmoid_params,
    register,
    sigmoid_penalty,
    support_mean,
    write_trace,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, count: int, what: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"{what} must be {count} comma-separated numbers, got {text!r}") from None
    if len(vals) != count:
        raise UsageError(f"{what} must be {count} comma-separated numbers, got {text!r}")
    return vals


def _size(text: str) -> tuple[int, int, int]:
    vals = _floats(text, 3, "--size")
    if any(v != int(v) or v < 2 for v in vals):
        raise UsageError(f"--size entries must be integers >= 2, got {text!r}")
    return tuple(int(v) for v in vals)


# --------------------------------------------------------------------------
# subcommands


def cmd_register(args) -> int:
    i0 = as_density(read_volume(args.source))
    i1 = as_density(read_volume(args.target))
    check_geometry(i0, i1)
    if args.penalty:
        f = Penalty(i0.geometry, read_volume(args.penalty).values)
        check_geometry(i0, f)
    else:
        params = (
            _floats(args.penalty_sigmoid, 4, "--penalty-sigmoid")
            if args.penalty_sigmoid
            else default_sigmoid_params(i0)
        )
        f = sigmoid_penalty(i0, *params)
    try:
        cfg = RegistrationConfig(
            step_size=args.eps,
            max_iters=args.iters,
            backtracking=args.backtrack,
            pad=args.pad,
            stop_tol=args.stop_tol,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = register(i0, i1, f, cfg)
    write_volume(result.transform.map, args.out_map)
    write_volume(result.transform.jacdet, args.out_jacdet)
    if args.trace:
        write_trace(args.trace, result.trace)
    last = result.trace[-1]
    print(f"iterations {result.iterations}  e1 {last.e1:.6g}  e2 {last.e2:.6g}  total {last.total:.6g}")
    return EXIT_OK


def cmd_apply(args) -> int:
    d = as_density(read_volume(args.density))
    t = InverseTransform(read_vector(args.map), read_volume(args.jacdet))
    write_volume(pushforward(d, t), args.out)
    return EXIT_OK


def cmd_distance(args) -> int:
    a = as_density(read_volume(args.a))
    b = as_density(read_volume(args.b))
    value = fisher_rao_sphere(a, b) if args.sphere else hellinger_sq(a, b)
    print(f"{value:.15g}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    from densmatch.phantom import bump_phantom, two_compartment_phantom

    dims = _size(args.size)
    # isotropic spacing, longest side of unit length
    geom = GridGeometry(dims, (1.0 / (max(dims) - 1),) * 3)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "bump":
        i0, i1, truth = bump_phantom(geom)
        f = Penalty(geom, np.full(geom.dims, 0.1 * support_mean(i0)))
        write_volume(truth.map, f"{prefix}_truth_map.mha")
        write_volume(truth.jacdet, f"{prefix}_truth_jacdet.mha")
    else:
        i0, i1, f = two_compartment_phantom(geom)
    write_volume(i0, f"{prefix}_source.mha")
    write_volume(i1, f"{prefix}_target.mha")
    write_volume(f, f"{prefix}_penalty.mha")
    return EXIT_OK


def cmd_jacobian(args) -> int:
    write_volume(jacobian_determinant_fd(read_vector(args.map)), args.out)
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from densmatch.validate import format_table, selfcheck

    if args.size < 8:
        raise UsageError("--size must be at least 8")
    rows = selfcheck(args.size)
    print(format_table(rows))
    return EXIT_OK if all(r.passed for r in rows) else EXIT_DATA


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="densmatch", description="Weighted Fisher-Rao density registration.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(
        dest="command", required=True, parser_class=_Parser,
        metavar="{register,apply,distance,phantom,jacobian}",
    )

    r = sub.add_parser("register", help="estimate the inverse map taking source to target")
    r.add_argument("--source", required=True)
    r.add_argument("--target", required=True)
    pen = r.add_mutually_exclusive_group()
    pen.add_argument("--penalty", help="penalty volume f")
    pen.add_argument("--penalty-sigmoid", metavar="LOW,HIGH,MIDPOINT,STEEPNESS",
                     help="logistic penalty of the source (default: data-driven)")
    r.add_argument("--eps", type=float, default=1.0, help="step size")
    r.add_argument("--iters", type=int, default=200)
    r.add_argument("--backtrack", action="store_true", help="halve the step until the energy decreases")
    r.add_argument("--pad", type=int, default=8, help="zero padding in voxels")
    r.add_argument("--stop-tol", type=float, default=1e-6)
    r.add_argument("--out-map", required=True)
    r.add_argument("--out-jacdet", required=True)
    r.add_argument("--trace", help="CSV energy trace")
    r.set_defaults(func=cmd_register)

    a = sub.add_parser("apply", help="push a density forward along a map")
    a.add_argument("--density", required=True)
    a.add_argument("--map", required=True)
    a.add_argument("--jacdet", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_apply)

    d = sub.add_parser("distance", help="print the Hellinger (or sphere Fisher-Rao) distance")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--sphere", action="store_true", help="arccos form on the sphere of densities")
    d.set_defaults(func=cmd_distance)

    ph = sub.add_parser("phantom", help="write a synthetic source/target pair")
    ph.add_argument("--kind", choices=("bump", "two-compartment"), required=True)
    ph.add_argument("--size", required=True, metavar="NX,NY,NZ")
    ph.add_argument("--out-prefix", required=True)
    ph.set_defaults(func=cmd_phantom)

    j = sub.add_parser("jacobian", help="finite-difference Jacobian determinant of a map")
    j.add_argument("--map", required=True)
    j.add_argument("--out", required=True)
    j.set_defaults(func=cmd_jacobian)

    s = sub.add_parser("selfcheck")
    s.add_argument("--size", type=int, default=32)
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"densmatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedError as exc:
        print(f"densmatch: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DensMatchError, ValueError, OSError) as exc:
        print(f"densmatch: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

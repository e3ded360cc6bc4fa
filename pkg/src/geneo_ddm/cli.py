"""Command-line entry point: ``geneo-ddm {solve,sweep,export-eigs,preview-coefficient}``.

Exit status is 0 on success, 2 when some sweep cells failed and 1 on a fatal
error.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .coarse import export_eigenfunction, midline_sign_changes
from .errors import GeneoError
from .problem import CoefficientField, build_mesh, sample_coefficient_grid, write_grid
from .workbench import Workbench, emit_table, parse_spec, run_sweep

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _spec_flags(p, lists=True):
    p.add_argument("--profile", choices=["homogeneous", "increasing", "alternating", "diagonal"])
    p.add_argument("--n-glob", dest="n_glob")
    p.add_argument("--N", dest="N")
    p.add_argument("--kappa")
    p.add_argument("--a-max", dest="a_max")
    p.add_argument("--lambda-max", dest="lambda_max")
    p.add_argument("--coarse", help="none, delta or h" + (" (comma-separated)" if lists else ""))
    p.add_argument("--precond", help="e.g. ras+deflation, as+additive, ras")
    p.add_argument("--rtol")
    p.add_argument("--max-iters", dest="max_iters")
    p.add_argument("--restart")
    p.add_argument("--orientation", choices=["left", "right"])
    p.add_argument("--norm", choices=["euclidean", "energy"])
    p.add_argument("--eig-method", dest="eig_method", choices=["auto", "dense", "shift_invert"])
    p.add_argument("--out", help="directory for artifacts")


_SPEC_KEYS = ["profile", "n_glob", "N", "kappa", "a_max", "lambda_max", "coarse", "precond",
              "rtol", "max_iters", "restart", "orientation", "norm", "eig_method"]


def _spec_from_args(args, base_text=""):
    """Config file text (if any) overridden by command-line flags."""
    lines = [base_text]
    for key in _SPEC_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            lines.append(f"{key} = {value}")
    return parse_spec("\n".join(lines))


def _single_point(spec):
    points = list(spec.points())
    if len(points) != 1:
        raise GeneoError(f"expected a single point, the flags describe {len(points)}")
    return points[0]


def cmd_solve(args):
    spec = _spec_from_args(args)
    p = _single_point(spec)
    wb = Workbench(spec, args.out)
    _, report = wb.run_point(p)
    print(f"point         {p.slug()}")
    print(f"iterations    {report.iterations}")
    print(f"converged     {report.converged}")
    print(f"coarse size   {report.coarse_size}")
    print(f"true residual {report.true_residual:.3e}")
    print(f"wall time     {report.wall_time:.2f} s")
    return EXIT_OK if report.converged else EXIT_PARTIAL


def cmd_sweep(args):
    base = Path(args.spec).read_text() if args.spec else ""
    spec = _spec_from_args(args, base)
    out = args.out or spec.out

    def progress(cell):
        status = "ok" if cell.error is None else f"FAILED ({cell.error})"
        print(f"{cell.point.slug():55s} it={cell.iterations} coarse={cell.coarse_size} "
              f"{cell.wall_time:7.1f}s {status}", flush=True)

    table = run_sweep(spec, out=out, progress=progress if not args.quiet else None)
    print(emit_table(table, args.format))
    return EXIT_OK if table.ok else EXIT_PARTIAL


def cmd_export_eigs(args):
    spec = _spec_from_args(args)
    p = _single_point(spec)
    if p.coarse == "none":
        raise GeneoError("export-eigs needs --coarse delta or h")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    wb = Workbench(spec)
    cs = wb.coarse_space(p)
    mesh = wb.system(p).mesh
    d = wb.decomposition(p)
    j = args.subdomain if args.subdomain is not None else d.N // 2
    modes = cs.local_modes[j]
    count = modes.eigenvalues.size if args.modes is None else min(args.modes, modes.eigenvalues.size)
    print(f"subdomain {j}: {modes.eigenvalues.size} selected modes")
    for l in range(1, count + 1):
        path = out / f"eig_{p.coarse}_sub{j}_mode{l}.txt"
        grid = export_eigenfunction(cs, d, mesh, j, l, path)
        print(f"  mode {l:3d}  lambda = {modes.eigenvalues[l - 1]: .6e}  "
              f"midline sign changes = {midline_sign_changes(grid)}  -> {path}")
    return EXIT_OK


def cmd_preview(args):
    cfield = CoefficientField(args.profile, float(args.a_max))
    mesh = build_mesh(int(args.n_glob))
    grid = sample_coefficient_grid(mesh, cfield)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"coefficient_{cfield.profile.value}.txt"
    write_grid(path, grid)
    print(f"{path}: {grid.shape[0]}x{grid.shape[1]} grid, a in [{np.min(grid):g}, {np.max(grid):g}]")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="geneo-ddm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one configuration")
    _spec_flags(p, lists=False)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a parameter sweep and print the table")
    p.add_argument("spec", nargs="?", help="key = value configuration file")
    _spec_flags(p)
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-eigs", help="write selected local eigenvectors as grid files")
    _spec_flags(p, lists=False)
    p.add_argument("--subdomain", type=int, help="0-based, row-major from the bottom left (default: central)")
    p.add_argument("--modes", type=int, help="export only the first MODES selected modes")
    p.set_defaults(func=cmd_export_eigs)

    p = sub.add_parser("preview-coefficient", help="write the coefficient sampled at the grid nodes")
    p.add_argument("--profile", required=True, choices=["homogeneous", "increasing", "alternating", "diagonal"])
    p.add_argument("--a-max", dest="a_max", default="10")
    p.add_argument("--n-glob", dest="n_glob", default="101")
    p.add_argument("--out")
    p.set_defaults(func=cmd_preview)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GeneoError, OSError) as exc:
        print(f"geneo-ddm: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())

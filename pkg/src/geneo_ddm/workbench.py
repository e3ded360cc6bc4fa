"""Experiment driver: single runs, parameter sweeps and result tables.

A sweep is the Cartesian product of its list-valued settings. Assemblies,
decompositions, local factorizations and Delta-GenEO local modes (which do not
depend on kappa) are cached inside one :class:`Workbench` so that the table
sweeps reuse them across cells.
"""
import csv
import io
import itertools
import logging
import time
import traceback
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coarse import CoarseKind, assemble_local, build_coarse_space, summary_rows
from .decomposition import build_decomposition
from .errors import GeneoError, ParseError, UnknownKey
from .krylov import GmresConfig, gmres
from .problem import CoefficientField, Profile, assemble, build_mesh
from .schwarz import CoarseVariant, LocalVariant, PrecondConfig, Preconditioner, factorize_local

log = logging.getLogger(__name__)

COARSE_CHOICES = ("none", "delta", "h")
EIG_METHODS = ("auto", "dense", "shift_invert")


@dataclass
class ExperimentSpec:
    profile: Profile
    n_glob: list
    N: list
    kappa: list = field(default_factory=lambda: [0.0])
    a_max: list = field(default_factory=lambda: [1.0])
    lambda_max: list = field(default_factory=lambda: [0.5])
    coarse: list = field(default_factory=lambda: ["delta", "h"])
    precond: str = "ras+deflation"
    rtol: float = 1e-6
    max_iters: int = 1000
    restart: int | None = None
    orientation: str = "right"
    norm: str = "euclidean"
    eig_method: str = "shift_invert"
    out: str | None = None

    def __post_init__(self):
        self.profile = Profile(self.profile)
        for name in ("n_glob", "N", "kappa", "a_max", "lambda_max", "coarse"):
            value = getattr(self, name)
            if not isinstance(value, (list, tuple)):
                value = [value]
            if not value:
                raise ParseError(f"{name} must not be empty")
            setattr(self, name, list(value))
        self.n_glob = [int(v) for v in self.n_glob]
        self.N = [int(v) for v in self.N]
        for v in self.N:
            if int(round(v**0.5)) ** 2 != v:
                raise ParseError(f"N = {v} is not a perfect square")
        self.kappa = [float(v) for v in self.kappa]
        self.a_max = [float(v) for v in self.a_max]
        self.lambda_max = [float(v) for v in self.lambda_max]
        self.coarse = [str(v).lower() for v in self.coarse]
        for c in self.coarse:
            if c not in COARSE_CHOICES:
                raise ParseError(f"unknown coarse kind {c!r}")
        if self.eig_method not in EIG_METHODS:
            raise ParseError(f"unknown eig_method {self.eig_method!r}")
        self.local_variant, self.coarse_variant = parse_precond(self.precond)
        self.gmres_config()

    def gmres_config(self):
        try:
            return GmresConfig(self.rtol, self.max_iters, self.restart, self.norm, self.orientation)
        except (ValueError, GeneoError) as exc:
            raise ParseError(str(exc)) from exc

    def points(self):
        """Sweep points in table order: physics, then coarse kind, then N."""
        for n_glob, kappa, a_max, lam, coarse, N in itertools.product(
            self.n_glob, self.kappa, self.a_max, self.lambda_max, self.coarse, self.N
        ):
            yield SweepPoint(self.profile, n_glob, N, kappa, a_max, lam, coarse)


def parse_precond(text):
    """``"ras+deflation"`` -> ``(LocalVariant.RAS, CoarseVariant.DEFLATION)``."""
    parts = text.lower().replace(" ", "").split("+")
    try:
        local = LocalVariant(parts[0])
        coarse = CoarseVariant(parts[1]) if len(parts) > 1 else CoarseVariant.NONE
    except ValueError as exc:
        raise ParseError(f"bad preconditioner {text!r}: {exc}") from exc
    if len(parts) > 2:
        raise ParseError(f"bad preconditioner {text!r}")
    return local, coarse


@dataclass(frozen=True)
class SweepPoint:
    profile: Profile
    n_glob: int
    N: int
    kappa: float
    a_max: float
    lambda_max: float
    coarse: str

    def key(self):
        return (self.profile.value, self.n_glob, self.kappa, self.a_max, self.lambda_max, self.coarse, self.N)

    def slug(self):
        return (f"{self.profile.value}_n{self.n_glob}_k{self.kappa:g}_a{self.a_max:g}"
                f"_l{self.lambda_max:g}_{self.coarse}_N{self.N}")


# --- config files -----------------------------------------------------------

_LIST_KEYS = {"n_glob", "N", "kappa", "a_max", "lambda_max", "coarse"}
_KEY_ORDER = [f.name for f in fields(ExperimentSpec)]
_REQUIRED = ("profile", "n_glob", "N")


def parse_spec(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_ORDER:
            raise UnknownKey(f"unknown key {key!r}", lineno)
        if key in _LIST_KEYS:
            items = [v.strip() for v in value.split(",") if v.strip()]
            if not items:
                raise ParseError(f"empty list for {key!r}", lineno)
            values[key] = items
        elif key in ("rtol",):
            values[key] = _number(value, float, lineno)
        elif key in ("max_iters",):
            values[key] = _number(value, int, lineno)
        elif key == "restart":
            values[key] = None if value.lower() in ("none", "") else _number(value, int, lineno)
        elif key == "out":
            values[key] = value or None
        else:
            values[key] = value
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ParseError(f"missing required keys: {', '.join(missing)}")
    try:
        if "N" in values:
            values["N"] = [_number(v, int, None) for v in values["N"]]
        if "n_glob" in values:
            values["n_glob"] = [_number(v, int, None) for v in values["n_glob"]]
        return ExperimentSpec(**values)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from exc


def _number(text, kind, lineno):
    try:
        return kind(text)
    except ValueError:
        raise ParseError(f"expected {kind.__name__}, got {text!r}", lineno) from None


def load_spec(path):
    return parse_spec(Path(path).read_text())


def dump_spec(spec):
    """Canonical ``key = value`` text; ``parse_spec(dump_spec(s)) == s``."""
    lines = []
    for key in _KEY_ORDER:
        value = getattr(spec, key)
        if key in _LIST_KEYS:
            text = ", ".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
        elif key == "profile":
            text = value.value
        elif value is None:
            if key == "out":
                continue
            text = "none"
        elif isinstance(value, float):
            text = f"{value:g}"
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


# --- running ------------------------------------------------------------------


@dataclass
class Cell:
    point: SweepPoint
    iterations: int | None = None
    coarse_size: int | None = None
    converged: bool = False
    wall_time: float = 0.0
    true_residual: float = float("nan")
    error: str | None = None


@dataclass
class ResultTable:
    cells: list = field(default_factory=list)

    def __len__(self):
        return len(self.cells)

    @property
    def ok(self):
        return all(c.error is None and c.converged for c in self.cells)

    def lookup(self, **coords):
        for c in self.cells:
            if all(getattr(c.point, k) == v for k, v in coords.items()):
                return c
        raise KeyError(coords)


class Workbench:
    """Runs sweep points, caching every piece that several cells share.

    Caches are keyed by sweep coordinates; :meth:`release` drops the
    per-``N`` pieces (local operators, factorizations, Delta-GenEO modes),
    which dominate memory on fine meshes.
    """

    def __init__(self, spec, out=None):
        self.spec = spec
        self.out = Path(out) if out is not None else (Path(spec.out) if spec.out else None)
        self._systems = {}
        self._decomps = {}
        self._locals = {}
        self._delta_modes = {}

    def release(self, systems=False):
        self._locals.clear()
        self._delta_modes.clear()
        self._decomps.clear()
        if systems:
            self._systems.clear()

    def system(self, p):
        key = (p.profile, p.n_glob, p.kappa, p.a_max)
        if key not in self._systems:
            mesh = build_mesh(p.n_glob)
            self._systems[key] = assemble(mesh, CoefficientField(p.profile, p.a_max, p.kappa))
        return self._systems[key]

    def decomposition(self, p):
        key = (p.n_glob, p.N)
        if key not in self._decomps:
            self._decomps[key] = build_decomposition(build_mesh(p.n_glob), p.N)
        return self._decomps[key]

    def local_data(self, p):
        """Neumann operators and factorized ``B_j`` for the point's physics and N."""
        key = (p.profile, p.n_glob, p.kappa, p.a_max, p.N)
        if key not in self._locals:
            self._locals.clear()
            system = self.system(p)
            d = self.decomposition(p)
            ops = [assemble_local(system.mesh, system.coefficient, d, j, system.elements) for j in range(d.N)]
            self._locals[key] = (ops, factorize_local(system.B, d))
        return self._locals[key]

    def coarse_space(self, p):
        system = self.system(p)
        d = self.decomposition(p)
        ops, _ = self.local_data(p)
        kind = CoarseKind(p.coarse)
        modes = None
        mkey = (p.profile, p.n_glob, p.a_max, p.N, p.lambda_max)
        if kind is CoarseKind.DELTA:
            modes = self._delta_modes.get(mkey)
        cs = build_coarse_space(system, d, kind, p.lambda_max, method=self.spec.eig_method,
                                local_ops=ops, modes=modes)
        if kind is CoarseKind.DELTA:
            self._delta_modes[mkey] = cs.local_modes
        return cs

    def preconditioner(self, p):
        system = self.system(p)
        d = self.decomposition(p)
        _, factors = self.local_data(p)
        cs = None
        variant = self.spec.coarse_variant
        if p.coarse != "none":
            cs = self.coarse_space(p)
            if variant is CoarseVariant.NONE:
                variant = CoarseVariant.DEFLATION
        else:
            variant = CoarseVariant.NONE
        cfg = PrecondConfig(self.spec.local_variant, variant, cs)
        return Preconditioner(system.B, d, cfg, factors), cs

    def run_point(self, p):
        """Solve at one point; returns ``(x, SolveReport)``."""
        t0 = time.perf_counter()
        system = self.system(p)
        P, cs = self.preconditioner(p)
        x, report = gmres(system.B, system.f, P, self.spec.gmres_config(), energy_matrix=system.A_stiff)
        report.wall_time = time.perf_counter() - t0
        report.coarse_size = P.coarse_size
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            write_residuals(self.out / f"residuals_{p.slug()}.csv", report.residual_history)
            if cs is not None:
                write_coarse_summary(self.out / f"coarse_{p.slug()}.csv", cs)
        return x, report


def write_residuals(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual"])
        for i, r in enumerate(history):
            w.writerow([i, f"{r:.16e}"])


def write_coarse_summary(path, cs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subdomain", "modes", "eigenvalues"])
        w.writerows(summary_rows(cs))


def run_single(point, spec=None, out=None, workbench=None):
    """Run one sweep point; errors propagate, tagged with ``exc.point``."""
    if spec is None:
        spec = ExperimentSpec(point.profile, [point.n_glob], [point.N], [point.kappa],
                              [point.a_max], [point.lambda_max], [point.coarse])
    wb = workbench or Workbench(spec, out)
    try:
        return wb.run_point(point)[1]
    except GeneoError as exc:
        exc.point = point
        raise


def run_sweep(spec, out=None, progress=None):
    """Every point of ``spec``; failures are recorded per cell."""
    wb = Workbench(spec, out)
    points = list(spec.points())
    kinds = {c: i for i, c in enumerate(COARSE_CHOICES)}

    def group(p):
        return (p.n_glob, p.a_max, p.N)

    # run grouped by mesh and N so per-N caches can be dropped; kappa varies
    # fastest after lambda_max so Delta-GenEO modes are shared across kappa
    order = sorted(range(len(points)), key=lambda i: group(points[i]) + (
        points[i].lambda_max, points[i].kappa, kinds[points[i].coarse]))
    cells = [None] * len(points)
    current = None
    for i in order:
        p = points[i]
        if group(p) != current:
            wb.release(systems=current is not None and current[:2] != group(p)[:2])
            current = group(p)
        cell = Cell(p)
        t0 = time.perf_counter()
        try:
            _, report = wb.run_point(p)
            cell.iterations = report.iterations
            cell.coarse_size = report.coarse_size
            cell.converged = report.converged
            cell.true_residual = report.true_residual
            if not report.converged:
                cell.error = f"no convergence in {report.iterations} iterations"
        except Exception as exc:  # per-cell isolation
            cell.error = f"{type(exc).__name__}: {exc}"
            log.debug("cell %s failed\n%s", p.slug(), traceback.format_exc())
        cell.wall_time = time.perf_counter() - t0
        cells[i] = cell
        if progress is not None:
            progress(cell)
    wb.release(systems=True)
    table = ResultTable(cells)
    if wb.out is not None:
        emit_table(table, "csv", wb.out / "table.csv")
        emit_table(table, "markdown", wb.out / "table.md")
    return table


# --- output -------------------------------------------------------------------

CSV_COLUMNS = ["profile", "n_glob", "kappa", "a_max", "lambda_max", "coarse", "N",
               "iterations", "coarse_size", "converged", "wall_time", "true_residual", "error"]


def table_to_csv(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for c in table.cells:
        p = c.point
        w.writerow([
            p.profile.value, p.n_glob, f"{p.kappa:g}", f"{p.a_max:g}", f"{p.lambda_max:g}", p.coarse, p.N,
            "" if c.iterations is None else c.iterations,
            "" if c.coarse_size is None else c.coarse_size,
            int(c.converged), f"{c.wall_time:.3f}",
            "" if np.isnan(c.true_residual) else f"{c.true_residual:.3e}",
            c.error or "",
        ])
    return buf.getvalue()


def table_to_markdown(table):
    """Reference layout: one row per physics setting, N across, one block per coarse kind."""
    if not table.cells:
        return "| setting |\n|---|\n"
    Ns = sorted({c.point.N for c in table.cells})
    kinds = list(dict.fromkeys(c.point.coarse for c in table.cells))
    rows = list(dict.fromkeys((c.point.n_glob, c.point.kappa, c.point.a_max, c.point.lambda_max)
                              for c in table.cells))
    index = {(c.point.n_glob, c.point.kappa, c.point.a_max, c.point.lambda_max, c.point.coarse, c.point.N): c
             for c in table.cells}

    def block(title, metric):
        head = ["n_glob", "kappa", "a_max", "lambda_max"] + [f"{k} N={n}" for k in kinds for n in Ns]
        out = [f"**{title}**", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in rows:
            vals = [str(r[0]), f"{r[1]:g}", f"{r[2]:g}", f"{r[3]:g}"]
            for k in kinds:
                for n in Ns:
                    c = index.get(r + (k, n))
                    v = None if c is None else getattr(c, metric)
                    vals.append("-" if c is None else ("err" if c.error and v is None else str(v)))
            out.append("| " + " | ".join(vals) + " |")
        return "\n".join(out)

    return block("Iteration count", "iterations") + "\n\n" + block("Coarse space size", "coarse_size") + "\n"


def emit_table(table, fmt, path=None):
    text = table_to_csv(table) if fmt.lower() == "csv" else table_to_markdown(table)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text

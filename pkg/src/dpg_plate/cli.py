"""Command-line driver: ``dpg-plate run`` runs the benchmark convergence study."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkError, ExactSolution, RateTable, StudyConfig, convergence_study
from .fields import evaluate_at_points
from .mesh import MESH_KINDS
from .system import SolutionFields, SolverError

log = logging.getLogger("dpg_plate")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GATE = 0, 2, 3, 4

# quantity name -> (field, index into the value array)
FIELD_QUANTITIES = {
    "V1": ("V", (0,)), "V2": ("V", (1,)),
    "M11": ("M", (0, 0)), "M12": ("M", (0, 1)), "M21": ("M", (1, 0)), "M22": ("M", (1, 1)),
    "psi1": ("psi", (0,)), "psi2": ("psi", (1,)),
    "w": ("w", ()),
}


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """All settings of a study run.

    Defaults: p=1, t=0.1, nu=0.3, kappa=5/6, uniform meshes with
    N=4,8,16,32,64, trapezoid offset 0.25 h, quadrature p+5 points per
    direction, enrichment 3, sparse direct solver (tolerance 1e-12 for CG),
    output to ``./dpg-out`` and 101x101 field grids when requested.
    """

    degree: int = 1
    thickness: float = 0.1
    nu: float = 0.3
    kappa: float = 5 / 6
    mesh: str = "uniform"
    distortion: float = 0.25
    refinements: tuple[int, ...] = (4, 8, 16, 32, 64)
    quadrature: int | None = None
    enrichment: int = 3
    solver: str = "direct"
    solver_tol: float = 1e-12
    out: str = "dpg-out"
    emit_fields: bool = False
    field_resolution: int = 101

    def __post_init__(self):
        checks = {
            "degree": self.degree >= 1,
            "thickness": 0.0 < self.thickness <= 1.0,
            "nu": 0.0 <= self.nu < 0.5,
            "kappa": self.kappa > 0.0,
            "mesh": self.mesh in MESH_KINDS,
            "distortion": 0.0 <= self.distortion < 0.5,
            "refinements": len(self.refinements) > 0 and self.refinements[0] >= 1
            and all(a < b for a, b in zip(self.refinements, self.refinements[1:])),
            "quadrature": self.quadrature is None or self.quadrature >= 1,
            "enrichment": self.enrichment >= 1,
            "solver": self.solver in ("direct", "cg"),
            "solver_tol": self.solver_tol > 0.0,
            "field_resolution": self.field_resolution >= 2,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(f"invalid value for {key}: {getattr(self, key)!r}")

    def study(self) -> StudyConfig:
        names = {f.name for f in dataclasses.fields(StudyConfig)}
        return StudyConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _parse_optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "default") else int(text)


PARSERS = {
    "degree": int, "thickness": float, "nu": float, "kappa": float, "mesh": str.strip,
    "distortion": float, "refinements": _parse_ints, "quadrature": _parse_optional_int,
    "enrichment": int, "solver": str.strip, "solver_tol": float, "out": str.strip,
    "emit_fields": _parse_bool, "field_resolution": int,
}


def _convert(key: str, text: str):
    try:
        return PARSERS[key](text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed value for {key}: {text!r}") from exc


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, keys may use - or _."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, val)
    return values


def parse_config(config_path=None, overrides: dict | None = None) -> RunConfig:
    """Merge file values and flag overrides (flags win) into a RunConfig."""
    values = read_config_file(config_path) if config_path else {}
    for key, val in (overrides or {}).items():
        if key not in PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        if val is not None:
            values[key] = _convert(key, val) if isinstance(val, str) else val
    return RunConfig(**values)


# --------------------------------------------------------------------------
# artifacts


@dataclass
class FieldSampleGrid:
    """Raw discrete field samples on a uniform grid, row-major with x fastest."""

    name: str
    resolution: int
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray     # (resolution, resolution), values[j, i] at (x[i], y[j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["x", "y", "value"])
        for j, yv in enumerate(self.y):
            for i, xv in enumerate(self.x):
                wr.writerow([repr(float(xv)), repr(float(yv)), repr(float(self.values[j, i]))])
        return buf.getvalue()


def _grid_points(resolution: int):
    g = np.linspace(0.0, 1.0, resolution)
    X, Y = np.meshgrid(g, g)
    return g, np.column_stack([X.ravel(), Y.ravel()])


def emit_field_grids(solution: SolutionFields, resolution: int,
                     quantities=tuple(FIELD_QUANTITIES)) -> dict[str, FieldSampleGrid]:
    """Sample several quantities sharing one point-location pass."""
    g, pts = _grid_points(resolution)
    vals = evaluate_at_points(solution, pts)
    out = {}
    for name in quantities:
        fld, idx = FIELD_QUANTITIES[name]
        data = vals[fld][(slice(None),) + idx].reshape(resolution, resolution)
        out[name] = FieldSampleGrid(name, resolution, g, g, data)
    return out


def emit_field_grid(solution: SolutionFields, quantity: str, resolution: int) -> FieldSampleGrid:
    if quantity not in FIELD_QUANTITIES:
        raise KeyError(f"unknown field quantity {quantity!r}")
    return emit_field_grids(solution, resolution, (quantity,))[quantity]


def write_atomic(files: dict[str, str], out_dir) -> None:
    """Write all files to temporaries first, then rename them into place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


def format_summary(cfg: RunConfig, exact: ExactSolution, table: RateTable) -> str:
    lines = ["DPG Reissner-Mindlin plate: clamped square benchmark", ""]
    for f in dataclasses.fields(cfg):
        if f.name != "out":
            lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    lines += ["",
              f"exact solution: deflection correction c = {exact.correction!r}, "
              f"amplitude = {exact.amplitude!r}",
              f"strong-form residual gate: {exact.gate_residual:.3e}",
              "", "relative L2 errors and observed rates log2(e_N / e_2N):",
              table.summary().rstrip(), ""]
    if len(table.reports) > 1:
        rates = ", ".join(f"{q} {table.finest_rate(q):.3f}" for q in table.quantities)
        lines.append(f"finest-pair rates: {rates}")
    res = max(r.solver_residual for r in table.reports)
    lines.append(f"max relative solver residual: {res:.3e}")
    return "\n".join(lines) + "\n"


def run_study(cfg: RunConfig) -> int:
    """Run the study and write artifacts; returns the process exit code."""
    try:
        exact = ExactSolution.clamped_square(cfg.thickness, cfg.nu, cfg.kappa)
    except BenchmarkError as exc:
        log.error("residual gate failed: %s", exc)
        return EXIT_GATE
    log.info("exact fields verified, max strong residual %.2e", exact.gate_residual)
    try:
        table = convergence_study(cfg.study(), exact=exact, keep_finest=cfg.emit_fields)
    except (SolverError, np.linalg.LinAlgError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER

    files = {"errors.csv": table.to_csv(), "summary.txt": format_summary(cfg, exact, table)}
    if cfg.emit_fields:
        for name, grid in emit_field_grids(table.finest, cfg.field_resolution).items():
            files[f"field_{name}.csv"] = grid.to_csv()
    write_atomic(files, cfg.out)
    log.info("wrote %d files to %s", len(files), cfg.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpg-plate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the benchmark convergence study")
    run.add_argument("--config", help="flat key = value configuration file")
    run.add_argument("--degree", help="trial polynomial degree p (>= 1)")
    run.add_argument("--thickness", help="plate thickness t in (0, 1]")
    run.add_argument("--nu", help="Poisson ratio")
    run.add_argument("--kappa", help="shear correction factor")
    run.add_argument("--mesh", help="uniform or trapezoidal")
    run.add_argument("--distortion", help="trapezoid vertex offset as a fraction of h")
    run.add_argument("--refinements", help="comma-separated N list, e.g. 4,8,16")
    run.add_argument("--quadrature", help="Gauss points per direction")
    run.add_argument("--enrichment", help="test degree minus trial degree")
    run.add_argument("--solver", help="direct or cg")
    run.add_argument("--solver-tol", help="CG relative tolerance")
    run.add_argument("--field-resolution", help="samples per direction of field grids")
    run.add_argument("--emit-fields", action="store_true", default=None,
                     help="write field_<name>.csv grids from the finest mesh")
    run.add_argument("--out", help="output directory")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose")}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"dpg-plate: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run_study(cfg)
    if code == EXIT_GATE:
        print("dpg-plate: exact benchmark fields failed the residual gate", file=sys.stderr)
    elif code == EXIT_SOLVER:
        print("dpg-plate: solver failure", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Square-with-a-hole benchmark driver.

Runs the quasistatic loading on one or more refinement levels with the TNNMG
solver, the predictor-corrector baseline, or both, and writes

* ``iterations.csv``: one row per solver iteration,
* ``summary.csv``: one row per (level, step, solver),
* ``comparison.csv``: side-by-side counts and timings (``--solver both``),
* ``vtk/level{L}_step{NN}.vtk``: displacement and plastic-zone snapshots,
* ``figures/*.png``: iteration counts, timings, errors and plastic zones.

Every CSV starts with a ``# {...}`` line echoing the run configuration.

Example
-------
    tnnmg-bench --level 1 2 3 --solver both --out results
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import plotting
from .assembly import BlockSystem, IterateW
from .kernels import warmup
from .mesh import benchmark_hierarchy, write_vtk
from .model import BENCHMARK_PARAMS, TRESCA, VON_MISES, DissipationKind, MaterialParams
from .predcorr import PredictorCorrectorSolver
from .tnnmg import SolveReport, TNNMGSolver

log = logging.getLogger(__name__)

#: Boundary traction grows as ``LOAD_RATE * t``.
LOAD_RATE = 100.0
#: Final time; with 20 steps each step raises the load by 100.
DEFAULT_END_TIME = 20.0
#: Isotropic hardening modulus used when ``--isotropic`` is given without ``--k2``.
DEFAULT_K2 = 3e6
#: Elements with ``|p|`` above this are counted as plastic.
PLASTIC_TOL = 1e-10
#: Iterate histories (needed for reference errors) are kept up to this level.
HISTORY_MAX_LEVEL = 4

SOLVERS = ("tnnmg", "predcorr", "both")
MODELS = (VON_MISES, TRESCA)

ITER_FIELDS = ["level", "step", "solver", "iter", "energy", "corr_norm", "err", "rho",
               "inactive", "wall_ms"]
SUMMARY_FIELDS = ["level", "step", "solver", "load", "iterations", "iters_to_ref_tol",
                  "converged", "wall_ms", "dofs", "us_per_iter_dof", "plastic_elements"]
COMPARE_FIELDS = ["level", "step", "tnnmg_iterations", "predcorr_iterations", "ratio",
                  "tnnmg_us_per_iter_dof", "predcorr_us_per_iter_dof", "energy_norm_diff"]


@dataclass
class RunConfig:
    """Benchmark run parameters."""

    levels: Sequence[int] = (2,)
    timesteps: int = 20
    solver: str = "tnnmg"
    model: str = VON_MISES
    isotropic: bool = False
    tol: float = 1e-7
    ref_tol: float = 1e-9
    output_dir: Path = Path("results")
    seed: int = 0
    end_time: float = DEFAULT_END_TIME
    k2: Optional[float] = None
    max_iter: int = 500
    vtk: bool = True
    plots: bool = True

    def __post_init__(self):
        if isinstance(self.levels, int):
            self.levels = (self.levels,)
        self.levels = tuple(int(lv) for lv in self.levels)
        self.output_dir = Path(self.output_dir)
        self.validate()

    def validate(self):
        if not self.levels or any(not 1 <= lv <= 6 for lv in self.levels):
            raise ValueError("levels must lie in [1, 6]")
        if self.timesteps < 1:
            raise ValueError("timesteps must be positive")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if not self.tol > 0 or not self.ref_tol > 0:
            raise ValueError("tolerances must be positive")
        if not self.end_time > 0:
            raise ValueError("end time must be positive")
        if self.k2 is not None and self.k2 < 0:
            raise ValueError("k2 must be nonnegative")

    @property
    def solvers(self) -> List[str]:
        return ["tnnmg", "predcorr"] if self.solver == "both" else [self.solver]

    def kind(self) -> DissipationKind:
        return DissipationKind(self.model, self.isotropic)

    def params(self) -> MaterialParams:
        p = BENCHMARK_PARAMS
        k2 = 0.0
        if self.isotropic:
            k2 = DEFAULT_K2 if self.k2 is None else self.k2
        return MaterialParams(lam=p.lam, mu=p.mu, sigma_c=p.sigma_c, k1=p.k1, k2=k2)

    def load_scale(self, step: int) -> float:
        return LOAD_RATE * self.end_time * step / self.timesteps

    def echo(self) -> dict:
        d = asdict(self)
        d["output_dir"] = str(self.output_dir)
        d["levels"] = list(self.levels)
        d["k2_effective"] = self.params().k2
        return d


class CsvLog:
    """CSV writer with a configuration header, flushed after every row."""

    def __init__(self, path: Path, fields: List[str], header: dict):
        self.path = Path(path)
        self.rows: List[dict] = []
        self._fh = open(self.path, "w", newline="")
        self._fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        self._writer = csv.DictWriter(self._fh, fieldnames=fields)
        self._writer.writeheader()

    def write(self, row: dict):
        self.rows.append(row)
        self._writer.writerow(row)
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_csv(path) -> List[dict]:
    """Read a CSV written by :class:`CsvLog` (numbers converted)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    for r in rows:
        for k, v in r.items():
            r[k] = _number(v)
    return rows


def _number(v):
    if v in ("True", "False"):
        return v == "True"
    try:
        f = float(v)
    except (TypeError, ValueError):
        return v
    return int(f) if f.is_integer() and "." not in v and "e" not in v.lower() else f


@dataclass
class BenchmarkResult:
    exit_code: int
    summary: List[dict] = field(default_factory=list)
    iterations: List[dict] = field(default_factory=list)
    comparison: List[dict] = field(default_factory=list)
    files: Dict[str, Path] = field(default_factory=dict)


def _plastic_norm(system: BlockSystem, w: IterateW) -> np.ndarray:
    return np.linalg.norm(w.q[:, :system.d_p], axis=1)


def _make_solver(name: str, system: BlockSystem, hierarchy):
    if name == "tnnmg":
        return TNNMGSolver(system, hierarchy)
    return PredictorCorrectorSolver(system)


def _iteration_rows(level: int, step: int, report: SolveReport):
    for r in report.records:
        yield {"level": level, "step": step, "solver": report.solver, "iter": r.iteration,
               "energy": r.energy, "corr_norm": r.corr_norm, "err": r.err, "rho": r.rho,
               "inactive": r.inactive, "wall_ms": r.wall_ms}


def _run_level(config: RunConfig, level: int, logs: Dict[str, CsvLog], vtk_dir: Optional[Path]):
    """Run all time steps on one level; return ``(ok, final plastic flags, system)``."""
    hierarchy = benchmark_hierarchy(level)
    system = BlockSystem(hierarchy.finest, config.params(), config.kind())
    solvers = {name: _make_solver(name, system, hierarchy) for name in config.solvers}
    leader = config.solvers[0]
    keep = level <= HISTORY_MAX_LEVEL
    log.info("level %d: %d vertices, %d triangles, %d unknowns", level,
             system.mesh.n_vertices, system.mesh.n_triangles, system.n_dofs)
    w = system.zero()
    plastic = np.zeros(system.n_elements, dtype=bool)
    for step in range(1, config.timesteps + 1):
        load = config.load_scale(step)
        b = system.rhs(load, w)
        increments = {}
        for name, solver in solvers.items():
            d, report = solver.solve(b, tol=config.tol, max_iter=config.max_iter, keep_history=keep)
            hit = report.compute_errors(system, d, config.ref_tol) if keep else None
            report.history = None
            increments[name] = (d, report)
            for row in _iteration_rows(level, step, report):
                logs["iterations"].write(row)
            if name == leader:
                plastic = _plastic_norm(system, w + d) > PLASTIC_TOL
            its = report.iterations
            logs["summary"].write({
                "level": level, "step": step, "solver": name, "load": load, "iterations": its,
                "iters_to_ref_tol": "" if hit is None else hit, "converged": report.converged,
                "wall_ms": report.wall_ms, "dofs": system.n_dofs,
                "us_per_iter_dof": 1e3 * report.wall_ms / max(its, 1) / system.n_dofs,
                "plastic_elements": int(np.count_nonzero(_plastic_norm(system, w + d) > PLASTIC_TOL)),
            })
            log.info("level %d step %2d %-8s %3d iterations %8.1f ms", level, step, name, its,
                     report.wall_ms)
            if not report.converged:
                log.error("%s did not converge on level %d step %d", name, level, step)
                return False, plastic, system
        if "comparison" in logs:
            (d1, r1), (d2, r2) = increments["tnnmg"], increments["predcorr"]
            n = system.n_dofs
            logs["comparison"].write({
                "level": level, "step": step, "tnnmg_iterations": r1.iterations,
                "predcorr_iterations": r2.iterations, "ratio": r2.iterations / r1.iterations,
                "tnnmg_us_per_iter_dof": 1e3 * r1.wall_ms / r1.iterations / n,
                "predcorr_us_per_iter_dof": 1e3 * r2.wall_ms / r2.iterations / n,
                "energy_norm_diff": system.energy_norm(d1 - d2),
            })
        w = w + increments[leader][0]
        if vtk_dir is not None:
            write_vtk(vtk_dir / f"level{level}_step{step:02d}.vtk", system.mesh,
                      point_vectors={"displacement": w.u.reshape(-1, 2)},
                      cell_scalars={"plastic": plastic.astype(np.int64),
                                    "plastic_strain_norm": _plastic_norm(system, w)},
                      title=f"level {level} step {step}")
    return True, plastic, system


def run_benchmark(config: RunConfig) -> BenchmarkResult:
    """Run the benchmark and write all artifacts to ``config.output_dir``.

    Returns a result with ``exit_code`` 0 on success and 1 if some increment
    did not converge (artifacts written so far are kept).
    """
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    vtk_dir = out / "vtk" if config.vtk else None
    if vtk_dir is not None:
        vtk_dir.mkdir(exist_ok=True)
    header = config.echo()
    logs = {"iterations": CsvLog(out / "iterations.csv", ITER_FIELDS, header),
            "summary": CsvLog(out / "summary.csv", SUMMARY_FIELDS, header)}
    if config.solver == "both":
        logs["comparison"] = CsvLog(out / "comparison.csv", COMPARE_FIELDS, header)
    warmup()
    ok = True
    finals = {}
    try:
        for level in config.levels:
            ok, plastic, system = _run_level(config, level, logs, vtk_dir)
            finals[level] = (system.mesh, plastic)
            if not ok:
                break
    finally:
        for lg in logs.values():
            lg.close()
    result = BenchmarkResult(0 if ok else 1, logs["summary"].rows, logs["iterations"].rows,
                             logs["comparison"].rows if "comparison" in logs else [],
                             {k: lg.path for k, lg in logs.items()})
    if config.plots:
        result.files.update(_render_figures(result, finals, out / "figures"))
    return result


def _render_figures(result: BenchmarkResult, finals, fig_dir: Path) -> Dict[str, Path]:
    fig_dir.mkdir(parents=True, exist_ok=True)
    files = {"fig_iterations": plotting.plot_iterations(result.summary, fig_dir / "iterations.png"),
             "fig_walltime": plotting.plot_walltime(result.summary, fig_dir / "walltime.png")}
    if any(np.isfinite(r["err"]) for r in result.iterations):
        last = max(r["step"] for r in result.summary)
        steps = sorted({1, min(5, last), last})
        files["fig_errors"] = plotting.plot_errors(result.iterations, fig_dir / "errors.png", steps)
    for level, (mesh, plastic) in finals.items():
        files[f"fig_plastic_L{level}"] = plotting.plot_plastic_zone(
            mesh, plastic, fig_dir / f"plastic_zone_level{level}.png",
            f"plastic zone, level {level}, final step")
    return files


def compare_solvers(config: RunConfig) -> Path:
    """Run both solvers on identical increments and return the comparison CSV path."""
    if config.solver != "both":
        raise ValueError("compare_solvers needs solver='both'")
    result = run_benchmark(config)
    if result.exit_code:
        raise RuntimeError("a solver failed to converge; see the partial CSV files")
    return result.files["comparison"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tnnmg-bench", description=__doc__.split("\n")[0])
    ap.add_argument("--level", type=int, nargs="+", default=[2], help="refinement level(s), 1-6")
    ap.add_argument("--timesteps", type=int, default=20)
    ap.add_argument("--solver", choices=SOLVERS, default="tnnmg")
    ap.add_argument("--model", choices=MODELS, default=VON_MISES)
    ap.add_argument("--isotropic", action="store_true", help="add isotropic hardening")
    ap.add_argument("--k2", type=float, default=None,
                    help=f"isotropic hardening modulus (default {DEFAULT_K2:g} with --isotropic)")
    ap.add_argument("--tol", type=float, default=1e-7, help="energy-norm stopping tolerance")
    ap.add_argument("--ref-tol", type=float, default=1e-9, help="reference-error threshold")
    ap.add_argument("--end-time", type=float, default=DEFAULT_END_TIME,
                    help="final time; the load at time t is 100 t")
    ap.add_argument("--max-iter", type=int, default=500)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--seed", type=int, default=0, help="recorded in the CSV header")
    ap.add_argument("--no-vtk", action="store_true")
    ap.add_argument("--no-plots", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        config = RunConfig(levels=args.level, timesteps=args.timesteps, solver=args.solver,
                           model=args.model, isotropic=args.isotropic, tol=args.tol,
                           ref_tol=args.ref_tol, output_dir=args.out, seed=args.seed,
                           end_time=args.end_time, k2=args.k2, max_iter=args.max_iter,
                           vtk=not args.no_vtk, plots=not args.no_plots)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    result = run_benchmark(config)
    print(f"wrote {len(result.files)} artifacts to {config.output_dir} "
          f"in {time.perf_counter() - t0:.1f} s")
    for row in result.summary:
        if row["step"] == config.timesteps or not row["converged"]:
            print(f"  level {row['level']} {row['solver']}: final step {row['iterations']} iterations, "
                  f"{row['plastic_elements']} plastic elements")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

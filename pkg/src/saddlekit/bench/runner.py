"""Parameter sweeps: build, precondition, solve, record."""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .. import precond as pc
from ..krylov import SolveHistory, minres
from ..problems import build, check_problem_consistency
from ..units import format_unit
from .config import ConfigError, ExperimentConfig
from .tables import IterationTable, _fmt, emit_table

__all__ = ["ExperimentResult", "RunRecord", "run_cell", "run_experiment", "sweep_threads"]

log = logging.getLogger(__name__)

THREADS_ENV = "SADDLEKIT_THREADS"


def sweep_threads(n_cells: int) -> int:
    """Worker count: ``SADDLEKIT_THREADS`` if set, else the CPU count, capped by the cell count."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return max(1, min(cap, n_cells))


@dataclass
class RunRecord:
    level: int
    params: dict[str, float]
    iterations: int | None = None
    status: str = "error"
    r1_final: float = float("nan")
    r2_final: float = float("nan")
    total_initial: float = float("nan")
    total_final: float = float("nan")
    problem_consistent: bool = False
    precond_consistent: bool = False
    inner_cg_mean: float = 0.0
    build_time: float = 0.0
    factor_time: float = 0.0
    solve_time: float = 0.0
    error: str = ""
    history: SolveHistory | None = field(default=None, repr=False)
    reports: tuple[str, ...] = ()

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def slug(self, problem: str) -> str:
        ps = "_".join(f"{k}={_fmt(v)}" for k, v in sorted(self.params.items()))
        return f"{problem}_L{self.level}_{ps}"


def _precond_options(cfg: ExperimentConfig) -> dict:
    if cfg.problem == "poisson_ocp":
        return {"theta": cfg.options.get("theta", 0.5)}
    if cfg.problem == "stokes_ocp":
        return {"inner": pc.InnerCGConfig(cfg.options.get("inner_rel_tol", 1e-8),
                                          int(cfg.options.get("inner_max_it", 500)))}
    return {}


def run_cell(cfg: ExperimentConfig, level: int, row: float | None, col: float) -> RunRecord:
    """One (level, parameter tuple) run; errors are captured in the record."""
    params = cfg.parameters_for(row, col)
    rec = RunRecord(level, {k: q.value for k, q in params.items()})
    try:
        t0 = time.perf_counter()
        system = build(cfg.problem, level, **params)
        t1 = time.perf_counter()
        P = pc.build_precond(system, **_precond_options(cfg))
        t2 = time.perf_counter()
        rep_l = check_problem_consistency(system)
        rep_p = pc.check_precond_consistency(system, P)
        rec.problem_consistent, rec.precond_consistent = rep_l.passed, rep_p.passed
        rec.reports = (str(rep_l), str(rep_p))
        _, hist = minres(system, P, rule=cfg.rule, monitor=cfg.monitor)
        t3 = time.perf_counter()
        rec.build_time, rec.factor_time, rec.solve_time = t1 - t0, t2 - t1, t3 - t2
        rec.history = hist
        rec.status = hist.status.value
        rec.iterations = hist.iterations if hist.converged else None
        rec.r1_final, rec.r2_final = hist.r1_norm(-1), hist.r2_norm(-1)
        rec.total_initial, rec.total_final = hist.total[0], hist.total[-1]
        rec.inner_cg_mean = P.stats.mean_iterations
    except Exception as exc:  # recorded in the cell, the sweep goes on
        rec.status = "error"
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("run %s failed: %s", rec.slug(cfg.problem), rec.error)
    return rec


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    table: IterationTable
    runs: list[RunRecord]

    @property
    def all_consistent(self) -> bool:
        return all(r.problem_consistent and r.precond_consistent for r in self.runs)

    def runs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = sorted(self.runs[0].params) if self.runs else []
        w.writerow(["level", *names, "status", "iterations", "r1_final", "r2_final", "total_initial",
                    "total_final", "problem_consistent", "precond_consistent", "error"])
        for r in self.runs:
            w.writerow([r.level, *[_fmt(r.params[n]) for n in names], r.status,
                        "" if r.iterations is None else r.iterations,
                        "%.6e" % r.r1_final, "%.6e" % r.r2_final, "%.6e" % r.total_initial,
                        "%.6e" % r.total_final, int(r.problem_consistent), int(r.precond_consistent), r.error])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "build_s", "factor_s", "solve_s", "inner_cg_mean"])
        for r in self.runs:
            w.writerow([r.slug(self.config.problem), "%.3f" % r.build_time, "%.3f" % r.factor_time,
                        "%.3f" % r.solve_time, "%.1f" % r.inner_cg_mean])
        return buf.getvalue()

    def write(self, out: Path) -> None:
        out = Path(out)
        (out / "histories").mkdir(parents=True, exist_ok=True)
        (out / "table.csv").write_text(emit_table(self.table, "csv"))
        (out / "table.md").write_text(emit_table(self.table, "markdown"))
        (out / "runs.csv").write_text(self.runs_csv())
        (out / "timings.csv").write_text(self.timings_csv())
        seen, chunks = set(), []
        for r in self.runs:
            if r.history is not None:
                r.history.to_csv(out / "histories" / f"{r.slug(self.config.problem)}.csv")
            for rep in r.reports:
                if rep not in seen:
                    seen.add(rep)
                    chunks.append(rep)
        (out / "consistency.txt").write_text("\n\n".join(chunks) + "\n")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every cell of the sweep; outputs are merged in key order."""
    cells = cfg.cells()
    workers = sweep_threads(len(cells))
    if workers == 1:
        runs = [run_cell(cfg, *c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(lambda c: run_cell(cfg, *c), cells))
    table = IterationTable(
        problem=cfg.problem, levels=cfg.levels, columns=cfg.columns,
        col_values=tuple(q.value for q in cfg.grids[cfg.columns]),
        rows=cfg.rows,
        row_values=tuple(q.value for q in cfg.grids[cfg.rows]) if cfg.rows else (None,),
        cells={c: r.iterations for c, r in zip(cells, runs)},
        units={k: format_unit(v[0].dim) for k, v in cfg.grids.items()},
        fixed={k: q.value for k, q in cfg.fixed.items()},
    )
    result = ExperimentResult(cfg, table, runs)
    if write and cfg.output is not None:
        result.write(cfg.output)
    return result

"""INI experiment configuration with unit-annotated parameter grids.

Example::

    [experiment]
    problem = elasticity
    levels = 1, 2
    columns = mu
    rows = lambda

    [parameters]
    mu = 1e-4, 1e-2, 1, 1e2, 1e4 N/m^2
    lambda = 1e-4, 1e-2, 1, 1e2, 1e4 N/m^2

    [stopping]
    relative_reduction = 1e-6
    max_iterations = 500

A comma-separated grid may annotate every value (``1e-4 N/m^2, 1 N/m^2``)
or only the last one, whose unit then applies to all.  Units are checked
against the dimension the problem expects for that parameter.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..krylov import StoppingRule
from ..problems import KINDS, PARAMETER_UNITS
from ..units import Quantity, UnitSyntaxError, format_unit

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "parse_grid"]

_OPTIONS = {
    "stokes": set(),
    "elasticity": set(),
    "poisson_ocp": {"theta"},
    "stokes_ocp": {"inner_rel_tol", "inner_max_it"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    levels: tuple[int, ...]
    grids: dict[str, tuple[Quantity, ...]]
    columns: str
    rows: str | None = None
    rule: StoppingRule = StoppingRule()
    output: Path | None = None
    options: dict[str, float] = field(default_factory=dict)
    monitor: str = "true"
    name: str = "experiment"

    @property
    def fixed(self) -> dict[str, Quantity]:
        return {k: v[0] for k, v in self.grids.items() if k not in (self.rows, self.columns)}

    def cells(self) -> list[tuple[int, float | None, float]]:
        rows = [q.value for q in self.grids[self.rows]] if self.rows else [None]
        cols = [q.value for q in self.grids[self.columns]]
        return [(lv, r, c) for lv in self.levels for r in rows for c in cols]

    def parameters_for(self, row: float | None, col: float) -> dict[str, Quantity]:
        out = dict(self.fixed)
        dims = PARAMETER_UNITS[self.problem]
        out[self.columns] = Quantity(col, dims[self.columns])
        if self.rows:
            out[self.rows] = Quantity(row, dims[self.rows])
        return out

    def with_levels(self, levels) -> "ExperimentConfig":
        return _replace(self, levels=tuple(levels))

    def with_output(self, out) -> "ExperimentConfig":
        return _replace(self, output=Path(out))


def _replace(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


def parse_grid(problem: str, name: str, text: str) -> tuple[Quantity, ...]:
    """Parse ``"1e-4, 1, 1e4 N*s/m^2"`` into quantities of the expected dimension."""
    expected = PARAMETER_UNITS[problem].get(name)
    if expected is None:
        known = ", ".join(sorted(PARAMETER_UNITS[problem]))
        raise ConfigError(f"{problem} has no parameter {name!r} (known: {known})")
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError(f"parameter grid {name!r} is empty")
    try:
        qs = [Quantity.parse(t) for t in items]
    except UnitSyntaxError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    has_unit = [len(t.split(None, 1)) > 1 for t in items]
    if not has_unit[-1]:
        raise ConfigError(f"{name}: missing unit (expected {format_unit(expected)})")
    last = qs[-1].dim
    qs = [q if u else Quantity(q.value, last) for q, u in zip(qs, has_unit)]
    for q, t in zip(qs, items):
        if q.dim != expected:
            raise ConfigError(f"{name} = {t!r}: unit {format_unit(q.dim)} does not match "
                              f"the expected {format_unit(expected)}")
        if not q.value > 0:
            raise ConfigError(f"{name} = {t!r}: values must be positive")
    if len({q.value for q in qs}) != len(qs):
        raise ConfigError(f"{name}: duplicate grid values")
    return tuple(qs)


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    ex = cp["experiment"]
    problem = ex.get("problem", "").strip()
    if problem not in KINDS:
        raise ConfigError(f"unknown problem {problem!r}; expected one of {', '.join(KINDS)}")
    try:
        levels = tuple(int(x) for x in ex.get("levels", "1").split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"levels must be comma-separated integers, got {ex.get('levels')!r}") from None
    if not levels or any(lv < 0 for lv in levels):
        raise ConfigError("levels must be a non-empty list of non-negative integers")

    if not cp.has_section("parameters"):
        raise ConfigError("missing [parameters] section")
    grids = {name: parse_grid(problem, name, val) for name, val in cp["parameters"].items()}
    missing = set(PARAMETER_UNITS[problem]) - set(grids)
    if missing:
        raise ConfigError(f"missing parameters: {', '.join(sorted(missing))}")

    multi = [k for k, v in grids.items() if len(v) > 1]
    columns = ex.get("columns", "").strip() or None
    rows = ex.get("rows", "").strip() or None
    if columns is None:
        leftover = [k for k in multi if k != rows]
        columns = leftover[0] if leftover else next(iter(grids))
    for axis, nm in (("columns", columns), ("rows", rows)):
        if nm is not None and nm not in grids:
            raise ConfigError(f"{axis} = {nm!r} is not a configured parameter")
    if rows == columns and rows is not None:
        raise ConfigError("rows and columns must name different parameters")
    stray = [k for k in multi if k not in (rows, columns)]
    if stray:
        raise ConfigError(f"parameter(s) {', '.join(stray)} have several values but are neither rows nor columns")

    rule = StoppingRule()
    if cp.has_section("stopping"):
        st = cp["stopping"]
        try:
            rule = StoppingRule(st.getfloat("relative_reduction", 1e-6), st.getint("max_iterations", 500))
        except ValueError as exc:
            raise ConfigError(f"[stopping]: {exc}") from None

    options: dict[str, float] = {}
    monitor = "true"
    if cp.has_section("solver"):
        for k, v in cp["solver"].items():
            if k == "monitor":
                if v not in ("true", "recurrence"):
                    raise ConfigError(f"monitor must be 'true' or 'recurrence', got {v!r}")
                monitor = v
                continue
            if k not in _OPTIONS[problem]:
                raise ConfigError(f"unknown solver option {k!r} for {problem}")
            try:
                options[k] = float(v)
            except ValueError:
                raise ConfigError(f"solver option {k} = {v!r} is not a number") from None

    output = None
    if cp.has_section("output") and cp["output"].get("directory"):
        output = Path(cp["output"]["directory"])
        if base_dir is not None and not output.is_absolute():
            output = base_dir / output
    name = ex.get("name", problem).strip()
    return ExperimentConfig(problem, levels, grids, columns, rows, rule, output, options, monitor, name)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=Path(os.getcwd()))

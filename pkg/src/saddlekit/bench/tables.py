"""Iteration-count tables: rendering, CSV round trip and comparison."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ComparisonReport", "IterationTable", "compare_tables", "emit_table", "read_table"]

FAIL = "FAIL"


def _fmt(v: float) -> str:
    return f"{v:.6g}"


Key = tuple[int, "float | None", float]


@dataclass
class IterationTable:
    """Iteration counts keyed by ``(level, row value, column value)``.

    ``rows`` is ``None`` for a one-parameter sweep; the row key is then
    ``None``.  A cell holds a positive count or ``None`` for a failed run.
    """

    problem: str
    levels: tuple[int, ...]
    columns: str
    col_values: tuple[float, ...]
    rows: str | None = None
    row_values: tuple[float | None, ...] = (None,)
    cells: dict[Key, int | None] = field(default_factory=dict)
    units: dict[str, str] = field(default_factory=dict)
    fixed: dict[str, float] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def keys(self) -> list[Key]:
        return [(lv, r, c) for lv in self.levels for r in self.row_values for c in self.col_values]

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.levels), len(self.row_values), len(self.col_values)

    def __getitem__(self, key: Key) -> int | None:
        return self.cells.get(key)

    def row(self, level: int, row_value: float | None = None) -> list[int | None]:
        return [self.cells.get((level, row_value, c)) for c in self.col_values]

    def values(self, level: int | None = None) -> list[int]:
        return [v for k, v in self.cells.items() if v is not None and (level is None or k[0] == level)]

    def spread(self, level: int) -> float:
        """max/min iteration count at a level (robustness metric)."""
        vals = self.values(level)
        return max(vals) / min(vals) if vals else math.inf

    def restrict_levels(self, levels) -> "IterationTable":
        levels = tuple(levels)
        missing = [lv for lv in levels if lv not in self.levels]
        if missing:
            raise ValueError(f"table has no level(s) {missing}")
        cells = {k: v for k, v in self.cells.items() if k[0] in levels}
        return IterationTable(self.problem, levels, self.columns, self.col_values, self.rows,
                              self.row_values, cells, dict(self.units), dict(self.fixed), self.notes)


def _cell_text(v: int | None) -> str:
    return FAIL if v is None else str(v)


def emit_table(table: IterationTable, format: str = "csv") -> str:
    """Render as ``csv`` (round-trippable) or ``markdown`` (levels as row groups)."""
    if format == "csv":
        return _emit_csv(table)
    if format == "markdown":
        return _emit_markdown(table)
    raise ValueError(f"unknown table format {format!r}")


def _emit_csv(t: IterationTable) -> str:
    buf = io.StringIO()
    buf.write(f"# problem = {t.problem}\n")
    for note in t.notes:
        buf.write(f"# {note}\n")
    for name in sorted(t.units):
        buf.write(f"# unit {name} = {t.units[name]}\n")
    for name in sorted(t.fixed):
        buf.write(f"# fixed {name} = {_fmt(t.fixed[name])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", t.rows or "-"] + [f"{t.columns}={_fmt(c)}" for c in t.col_values])
    for lv in t.levels:
        for r in t.row_values:
            w.writerow([lv, "-" if r is None else _fmt(r)] + [_cell_text(v) for v in t.row(lv, r)])
    return buf.getvalue()


def _emit_markdown(t: IterationTable) -> str:
    cu = t.units.get(t.columns, "")
    head = ["level"] + ([f"{t.rows} [{t.units.get(t.rows, '')}]"] if t.rows else [])
    head += [f"{t.columns} = {_fmt(c)}" for c in t.col_values]
    lines = []
    fixed = ", ".join(f"{k} = {_fmt(v)} {t.units.get(k, '')}".rstrip() for k, v in sorted(t.fixed.items()))
    lines.append(f"**{t.problem}**: MINRES iterations ({t.columns} in {cu}" + (f"; {fixed}" if fixed else "") + ")")
    lines.append("")
    lines.append("| " + " | ".join(head) + " |")
    lines.append("|" + "|".join("---:" for _ in head) + "|")
    for lv in t.levels:
        for i, r in enumerate(t.row_values):
            cells = [str(lv) if i == 0 else ""]
            if t.rows:
                cells.append(_fmt(r))
            cells += [_cell_text(v) for v in t.row(lv, r)]
            lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _parse_float(s: str) -> float:
    return float(s)


def read_table(source) -> IterationTable:
    """Parse the CSV form produced by :func:`emit_table` (path or text)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    else:
        text = source
    problem, units, fixed, notes = "", {}, {}, []
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            s = line[1:].strip()
            if s.startswith("problem = "):
                problem = s[len("problem = "):]
            elif s.startswith("unit "):
                k, v = s[5:].split(" = ", 1)
                units[k] = v
            elif s.startswith("fixed "):
                k, v = s[6:].split(" = ", 1)
                fixed[k] = float(v)
            else:
                notes.append(s)
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ValueError("empty table")
    header = rows[0]
    if len(header) < 3 or header[0] != "level":
        raise ValueError(f"malformed table header {header}")
    row_name = None if header[1] == "-" else header[1]
    col_name = header[2].split("=", 1)[0]
    col_values = tuple(_parse_float(h.split("=", 1)[1]) for h in header[2:])
    levels: list[int] = []
    row_values: list[float | None] = []
    cells: dict = {}
    for rec in rows[1:]:
        lv = int(rec[0])
        rv = None if rec[1] == "-" else _parse_float(rec[1])
        if lv not in levels:
            levels.append(lv)
        if rv not in row_values:
            row_values.append(rv)
        if len(rec) != len(header):
            raise ValueError(f"row {rec} does not match header width")
        for c, txt in zip(col_values, rec[2:]):
            cells[(lv, rv, c)] = None if txt == FAIL else int(txt)
    return IterationTable(problem, tuple(levels), col_name, col_values, row_name, tuple(row_values),
                          cells, units, fixed, tuple(notes))


@dataclass
class CellDiff:
    key: Key
    produced: int | None
    reference: int | None
    deviation: float
    ok: bool


@dataclass
class ComparisonReport:
    tolerance: float
    cells: list[CellDiff]

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.cells)

    @property
    def max_deviation(self) -> float:
        return max((c.deviation for c in self.cells), default=0.0)

    def failures(self) -> list[CellDiff]:
        return [c for c in self.cells if not c.ok]

    def __str__(self) -> str:
        lines = [f"comparison at tolerance {self.tolerance:g}: {'PASS' if self.passed else 'FAIL'} "
                 f"({len(self.failures())}/{len(self.cells)} cells outside)"]
        for c in self.cells:
            lv, r, col = c.key
            where = f"level {lv}" + ("" if r is None else f", row {_fmt(r)}") + f", col {_fmt(col)}"
            got = _cell_text(c.produced)
            lines.append(f"  {where:<36} produced {got:>5}  reference {_cell_text(c.reference):>5}  "
                         f"deviation {c.deviation:6.3f}  {'ok' if c.ok else 'OUT'}")
        return "\n".join(lines)


def _same_values(a, b) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if (x is None) != (y is None):
            return False
        if x is not None and not math.isclose(x, y, rel_tol=1e-9):
            return False
    return True


def compare_tables(produced: IterationTable, reference: IterationTable, tolerance: float) -> ComparisonReport:
    """Per-cell relative deviation ``|p - r| / r``; failed cells never pass.

    A reference covering more levels than ``produced`` is restricted to the
    produced levels; any other shape difference is an error.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    if set(produced.levels) - set(reference.levels):
        raise ValueError(f"reference lacks level(s) {sorted(set(produced.levels) - set(reference.levels))}")
    if produced.columns != reference.columns or produced.rows != reference.rows:
        raise ValueError("tables sweep different parameters")
    if not (_same_values(produced.col_values, reference.col_values)
            and _same_values(produced.row_values, reference.row_values)):
        raise ValueError("tables have different parameter grids")
    diffs = []
    for lv in produced.levels:
        for ri, r in enumerate(produced.row_values):
            for ci, c in enumerate(produced.col_values):
                p = produced.cells.get((lv, r, c))
                ref = reference.cells.get((lv, reference.row_values[ri], reference.col_values[ci]))
                if p is None or ref is None:
                    diffs.append(CellDiff((lv, r, c), p, ref, math.inf, False))
                    continue
                dev = abs(p - ref) / ref
                diffs.append(CellDiff((lv, r, c), p, ref, dev, dev <= tolerance + 1e-12))
    return ComparisonReport(tolerance, diffs)

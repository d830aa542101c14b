"""Preconditioned MINRES with per-block residual monitoring, and plain CG.

The MINRES recurrence follows Paige and Saunders (variable names as in
``scipy.sparse.linalg.minres``).  Besides the recurred residual norm, every
iteration records the true residual ``b - K x`` measured in the
preconditioner-induced norm, split per field of ``V`` and ``Q``::

    ||r||_{P^-1}^2 = sum_i <r1_i, (P_V^-1 r1)_i> + sum_j <r2_j, (P_Q^-1 r2)_j>

which is exact because every shipped ``P`` is block diagonal over fields.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Literal, Sequence

import numpy as np

from .linalg import NoConvergence, NotPositiveDefinite

__all__ = [
    "Divergence",
    "IndefinitePreconditioner",
    "SolveHistory",
    "Status",
    "StoppingRule",
    "cg",
    "minres",
    "minres_raw",
]

_EPS = np.finfo(float).eps


class IndefinitePreconditioner(ArithmeticError):
    """``<z, r>`` with ``z = P^-1 r`` was negative: ``P`` is not SPD."""


class Divergence(ArithmeticError):
    """A NaN or infinity appeared in the iteration."""


class Status(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    BREAKDOWN = "breakdown"


@dataclass(frozen=True)
class StoppingRule:
    relative_reduction: float = 1e-6
    max_iterations: int = 500

    def __post_init__(self):
        if not 0 < self.relative_reduction < 1:
            raise ValueError("relative_reduction must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class SolveHistory:
    """Per-iteration residual norms; record 0 is the initial residual.

    ``r1[k]`` and ``r2[k]`` hold per-field norms (one entry per field of
    ``V`` and ``Q``); ``recurrence[k]`` is MINRES's internal estimate.
    """

    v_fields: int = 1
    q_fields: int = 1
    r1: list[tuple[float, ...]] = field(default_factory=list)
    r2: list[tuple[float, ...]] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    recurrence: list[float] = field(default_factory=list)
    status: Status | None = None
    iterations: int = 0
    wall_time: float = 0.0

    def record(self, r1: Sequence[float], r2: Sequence[float], recurred: float) -> float:
        r1 = tuple(float(x) for x in r1)
        r2 = tuple(float(x) for x in r2)
        tot = math.sqrt(sum(x * x for x in r1) + sum(x * x for x in r2))
        self.r1.append(r1)
        self.r2.append(r2)
        self.total.append(tot)
        self.recurrence.append(float(recurred))
        return tot

    def r1_norm(self, k: int) -> float:
        return math.sqrt(sum(x * x for x in self.r1[k]))

    def r2_norm(self, k: int) -> float:
        return math.sqrt(sum(x * x for x in self.r2[k]))

    @property
    def converged(self) -> bool:
        return self.status == Status.CONVERGED

    @property
    def relative_reduction(self) -> float:
        return self.total[-1] / self.total[0] if self.total and self.total[0] > 0 else 0.0

    def columns(self) -> list[str]:
        if self.v_fields == 1 and self.q_fields == 1:
            return ["iter", "r1_norm", "r2_norm", "total_norm"]
        return (["iter"] + [f"r1_{i + 1}" for i in range(self.v_fields)]
                + [f"r2_{i + 1}" for i in range(self.q_fields)] + ["total_norm"])

    def rows(self) -> list[list]:
        out = []
        for k, (a, b, t) in enumerate(zip(self.r1, self.r2, self.total)):
            out.append([k, *a, *b, t])
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow([row[0]] + ["%.16e" % x for x in row[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _field_norms(r: np.ndarray, z: np.ndarray, slices: Sequence[slice]) -> list[float]:
    out = []
    for s in slices:
        q = float(r[s] @ z[s])
        if q < 0:
            # roundoff for an inexact (inner-CG) block near zero residual
            if q < -1e-10 * max(float(np.abs(r[s]) @ np.abs(z[s])), 1e-300):
                raise IndefinitePreconditioner(f"negative preconditioned norm {q:g}")
            q = 0.0
        out.append(math.sqrt(q))
    return out


def minres_raw(matvec: Callable[[np.ndarray], np.ndarray], psolve: Callable[[np.ndarray], np.ndarray],
               b: np.ndarray, v_slices: Sequence[slice], q_slices: Sequence[slice],
               rule: StoppingRule = StoppingRule(),
               monitor: Literal["true", "recurrence"] = "true") -> tuple[np.ndarray, SolveHistory]:
    """MINRES on an abstract symmetric ``matvec`` with SPD ``psolve = P^-1``.

    ``monitor="true"`` recomputes ``b - K x`` and ``P^-1 (b - K x)`` every
    iteration (one extra operator and preconditioner application);
    ``"recurrence"`` updates both by short recurrences instead.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = len(b)
    hist = SolveHistory(len(v_slices), len(q_slices))
    x = np.zeros(n)

    def norms(r, z):
        return _field_norms(r, z, v_slices), _field_norms(r, z, q_slices)

    y = psolve(b)
    beta1 = float(b @ y)
    if not np.isfinite(beta1):
        raise Divergence("non-finite initial residual")
    if beta1 < 0:
        raise IndefinitePreconditioner(f"<b, P^-1 b> = {beta1:g} < 0")
    n1, n2 = norms(b, y)
    initial = hist.record(n1, n2, math.sqrt(beta1))
    if beta1 == 0:
        hist.status, hist.wall_time = Status.CONVERGED, time.perf_counter() - t0
        return x, hist
    target = rule.relative_reduction * initial
    beta1 = math.sqrt(beta1)

    r1 = b.copy()
    r2 = b.copy()
    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    best_x, best = x.copy(), initial
    if monitor == "recurrence":
        res = b.copy()
        zres = y.copy()
        kw = np.zeros(n)
        kw2 = np.zeros(n)
        pkw = np.zeros(n)
        pkw2 = np.zeros(n)
        pr1 = np.zeros(n)  # P^-1 r1
        pr2 = y.copy()     # P^-1 r2
    elif monitor != "true":
        raise ValueError(f"unknown monitor {monitor!r}")

    status = Status.MAX_ITERATIONS
    itn = 0
    for itn in range(1, rule.max_iterations + 1):
        s = 1.0 / beta
        v = s * y
        kv = matvec(v)
        y = kv.copy()
        if itn >= 2:
            y -= (beta / oldb) * r1
        alfa = float(v @ y)
        y -= (alfa / beta) * r2
        if monitor == "recurrence":
            # P^-1 K v expressed through the new P^-1 r2 and the previous two
            rb = beta / oldb if itn >= 2 else 0.0
            ra = alfa / beta
        r1 = r2
        r2 = y
        y = psolve(r2)
        if monitor == "recurrence":
            pkv = y + ra * pr2 + rb * pr1
            pr1, pr2 = pr2, y
        oldb = beta
        bb = float(r2 @ y)
        if not (np.isfinite(bb) and np.isfinite(alfa)):
            raise Divergence(f"non-finite Lanczos coefficients at iteration {itn}")
        if bb < 0:
            raise IndefinitePreconditioner(f"<r, P^-1 r> = {bb:g} < 0 at iteration {itn}")
        beta = math.sqrt(bb)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), _EPS)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        denom = 1.0 / gamma
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) * denom
        x = x + phi * w
        if monitor == "true":
            res = b - matvec(x)
            zres = psolve(res)
        else:
            kw1, kw2 = kw2, kw
            kw = (kv - oldeps * kw1 - delta * kw2) * denom
            pkw1, pkw2 = pkw2, pkw
            pkw = (pkv - oldeps * pkw1 - delta * pkw2) * denom
            res = res - phi * kw
            zres = zres - phi * pkw
        if not np.all(np.isfinite(x)):
            raise Divergence(f"non-finite iterate at iteration {itn}")
        n1, n2 = norms(res, zres)
        tot = hist.record(n1, n2, phibar)
        if tot < best:
            best, best_x = tot, x.copy()
        if tot <= target:
            status = Status.CONVERGED
            best_x = x
            break
        if beta <= _EPS * beta1 * 1e-4:
            status = Status.BREAKDOWN
            break
    hist.status = status
    hist.iterations = itn
    hist.wall_time = time.perf_counter() - t0
    return best_x, hist


def minres(system, precond, rhs: np.ndarray | None = None, rule: StoppingRule = StoppingRule(),
           monitor: Literal["true", "recurrence"] = "true") -> tuple[np.ndarray, SolveHistory]:
    """Preconditioned MINRES for a :class:`~saddlekit.problems.SaddleSystem`.

    Starts from the zero vector and stops at the first iterate whose true
    total residual, in the ``P^-1`` norm, falls below
    ``rule.relative_reduction`` times the initial one.

    Returns
    -------
    x : ndarray
        Stacked ``(u, p)``; constant pressure components are projected out
        for systems with a pressure nullspace.
    history : SolveHistory
    """
    from .problems import project_pressures

    K = system.operator()
    b = system.rhs() if rhs is None else np.asarray(rhs, dtype=float)
    nv = system.n_v
    q_slices = [slice(s.start + nv, s.stop + nv) for s in system.Q.slices]
    x, hist = minres_raw(K.dot, precond.apply, b, system.V.slices, q_slices, rule, monitor)
    return project_pressures(system, x), hist


def cg(matvec: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray, rel_tol: float = 1e-8,
       max_it: int = 500, project: Callable[[np.ndarray], np.ndarray] | None = None):
    """Unpreconditioned conjugate gradients from a zero initial guess.

    ``rhs`` may be ``(n,)`` or ``(n, k)``; columns then iterate in lockstep
    (each with its own step lengths) and freeze once converged.  ``project``
    is applied to the right-hand side and to every search direction.

    Returns
    -------
    x : ndarray
    iterations : int
        Iterations of the slowest column.

    Raises
    ------
    NotPositiveDefinite
        On non-positive curvature ``p^T A p``.
    NoConvergence
        If ``max_it`` is reached.
    """
    b = np.asarray(rhs, dtype=float)
    single = b.ndim == 1
    B = b[:, None] if single else b
    if project is not None:
        B = project(B)
    X = np.zeros_like(B)
    R = B.copy()
    bnorm = np.linalg.norm(B, axis=0)
    tol = rel_tol * bnorm
    rr = np.einsum("ij,ij->j", R, R)
    active = np.sqrt(rr) > tol
    P = R.copy()
    it = 0
    while np.any(active):
        if it >= max_it:
            res = float(np.max(np.sqrt(rr[active]) / np.where(bnorm[active] > 0, bnorm[active], 1)))
            raise NoConvergence(f"CG did not converge in {max_it} iterations "
                                f"(relative residual {res:.3e})")
        it += 1
        cols = np.flatnonzero(active)
        Pa = P[:, cols]
        AP = matvec(Pa[:, 0] if single else Pa)
        AP = AP[:, None] if single else AP
        curv = np.einsum("ij,ij->j", Pa, AP)
        if np.any(curv <= 0):
            raise NotPositiveDefinite(f"non-positive curvature {curv.min():g} in CG iteration {it}")
        a = rr[cols] / curv
        X[:, cols] += Pa * a
        R[:, cols] -= AP * a
        if project is not None:
            R[:, cols] = project(R[:, cols])
        rr_new = np.einsum("ij,ij->j", R[:, cols], R[:, cols])
        P[:, cols] = R[:, cols] + P[:, cols] * (rr_new / rr[cols])
        rr[cols] = rr_new
        active[cols] = np.sqrt(rr_new) > tol[cols]
    return (X[:, 0] if single else X), it

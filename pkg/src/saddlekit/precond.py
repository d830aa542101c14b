"""Block-diagonal preconditioners ``P = diag(P_V, P_Q)`` and their checks.

Each builder records the operator dimension of every diagonal block
(field-wise for product spaces), computed from the dimensions of the
building blocks rather than asserted.  :func:`check_precond_consistency`
compares those against ``unit(V*) / unit(V)`` and ``unit(Q*) / unit(Q)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .krylov import cg
from .linalg import CholeskyFactor, DimMatrix, cholesky, factorize, spd_interpolate
from .problems import ConsistencyEntry, ConsistencyReport, SaddleSystem
from .units import DIMENSIONLESS, Dimension, DimensionError, Quantity, format_unit

__all__ = [
    "BlockDiagPreconditioner",
    "ConstantsReport",
    "InnerCGConfig",
    "build_precond",
    "check_precond_consistency",
    "elasticity_precond",
    "estimate_constants",
    "from_blocks",
    "poisson_ocp_precond",
    "stokes_ocp_precond",
    "stokes_precond",
]

DENSE_THETA_CAP = 1500
FACTOR_BACKEND = "superlu"
_COMPONENTS = {"stiffness": 3}
CONSTANTS_CAP = 6000

_factor_cache: dict[tuple, CholeskyFactor] = {}
_cache_lock = threading.Lock()


def _cached_factor(system: SaddleSystem, name: str) -> CholeskyFactor:
    """Cholesky of a parameter-free form, shared across a parameter sweep."""
    key = (system.kind, system.level, name, FACTOR_BACKEND)
    with _cache_lock:
        f = _factor_cache.get(key)
    if f is None:
        form = system.forms[name]
        comps = _COMPONENTS.get(name, 1) if system.kind == "stokes" else 1
        f = factorize(form.matrix, dim=form.dim, backend=FACTOR_BACKEND, components=comps)
        with _cache_lock:
            _factor_cache[key] = f
    return f


def clear_factor_cache() -> None:
    with _cache_lock:
        _factor_cache.clear()


@dataclass
class InnerStats:
    """Inner-CG bookkeeping of a nested Schur block (thread safe)."""

    calls: int = 0
    iterations: int = 0
    max_iterations: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, its: int) -> None:
        with self._lock:
            self.calls += 1
            self.iterations += its
            self.max_iterations = max(self.max_iterations, its)

    @property
    def mean_iterations(self) -> float:
        return self.iterations / self.calls if self.calls else 0.0


@dataclass(frozen=True)
class InnerCGConfig:
    rel_tol: float = 1e-8
    max_it: int = 500


@dataclass
class BlockDiagPreconditioner:
    """Inverse actions of ``P_V`` and ``P_Q`` plus bookkeeping.

    Attributes
    ----------
    apply_V, apply_Q : callable
        ``r -> P_V^{-1} r`` and ``r -> P_Q^{-1} r``.
    forward_V, forward_Q : callable
        ``u -> P_V u`` and ``p -> P_Q p``.
    unit_V, unit_Q : tuple of Dimension
        Operator dimension of each diagonal field block.
    matrices : tuple of sparse matrices or None
        Explicit ``(P_V, P_Q)`` when available (not for nested Schur blocks).
    """

    kind: str
    n_v: int
    n_q: int
    apply_V: Callable[[np.ndarray], np.ndarray]
    apply_Q: Callable[[np.ndarray], np.ndarray]
    forward_V: Callable[[np.ndarray], np.ndarray]
    forward_Q: Callable[[np.ndarray], np.ndarray]
    unit_V: tuple[Dimension, ...]
    unit_Q: tuple[Dimension, ...]
    factors: dict[str, CholeskyFactor] = field(default_factory=dict)
    matrices: tuple | None = None
    stats: InnerStats = field(default_factory=InnerStats)
    joint_apply: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = ""

    def apply(self, r: np.ndarray) -> np.ndarray:
        """``P^{-1} r`` for a stacked residual ``r = (r1, r2)``."""
        if self.joint_apply is not None:
            return self.joint_apply(r)
        return np.concatenate([self.apply_V(r[: self.n_v]), self.apply_Q(r[self.n_v:])])

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([self.forward_V(x[: self.n_v]), self.forward_Q(x[self.n_v:])])

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        if self.matrices is None:
            raise ValueError(f"{self.kind}: preconditioner has no explicit matrix form")
        return tuple(np.asarray(m.toarray() if sp.issparse(m) else m) for m in self.matrices)


def _require(system: SaddleSystem, kind: str) -> None:
    if system.kind != kind:
        raise ValueError(f"expected a {kind} system, got {system.kind}")


def _two_factor_precond(system, pv: CholeskyFactor, pq: CholeskyFactor, mats, label) -> BlockDiagPreconditioner:
    PV, PQ = mats
    return BlockDiagPreconditioner(
        kind=system.kind, n_v=system.n_v, n_q=system.Q.size,
        apply_V=pv.solve, apply_Q=pq.solve,
        forward_V=lambda u: PV @ u, forward_Q=lambda p: PQ @ p,
        unit_V=(pv.dim,), unit_Q=(pq.dim,),
        factors={"P_V": pv, "P_Q": pq}, matrices=(PV, PQ), label=label,
    )


def stokes_precond(system: SaddleSystem) -> BlockDiagPreconditioner:
    """``P_V = mu K`` (the A block itself), ``P_Q = mu^{-1} M_p``."""
    _require(system, "stokes")
    mu = system.param("mu")
    K, Mp = system.forms["stiffness"], system.forms["pressure_mass"]
    pv = _cached_factor(system, "stiffness").scaled(mu)
    pq = _cached_factor(system, "pressure_mass").scaled(1 / mu)
    return _two_factor_precond(system, pv, pq, ((K * mu).matrix, (Mp * (1 / mu)).matrix), "mu K, mu^-1 M")


def elasticity_precond(system: SaddleSystem) -> BlockDiagPreconditioner:
    """``P_V = a(.,.)`` (the A block), ``P_Q = (2 mu)^{-1} M_p``."""
    _require(system, "elasticity")
    mu = system.param("mu")
    E, Mp = system.forms["eps"], system.forms["pressure_mass"]
    pv = _cached_factor(system, "eps").scaled(mu)
    pq = _cached_factor(system, "pressure_mass").scaled(1 / (2 * mu))
    return _two_factor_precond(system, pv, pq, ((E * mu).matrix, (Mp * (1 / (2 * mu))).matrix),
                               "a(.,.), (2 mu)^-1 M")


def poisson_ocp_precond(system: SaddleSystem, theta: float = 0.5) -> BlockDiagPreconditioner:
    """``P_V = A + [A, B^T C^-1 B]_theta``, ``P_Q = C + [C, B A^-1 B^T]_{1-theta}``.

    For ``theta = 1/2`` this is ``P_V = beta M + sqrt(alpha beta) kappa K``
    and ``P_Q = P_V / (alpha beta)``, sharing one sparse Cholesky factor.
    Other ``theta`` use dense matrix interpolation (small systems only).
    """
    _require(system, "poisson_ocp")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    alpha, beta, kappa = (system.param(k) for k in ("alpha", "beta", "kappa"))
    M, K = system.forms["mass"], system.forms["stiffness"]
    ab = alpha * beta
    if theta == 0.5:
        PV = M * beta + K * (ab.sqrt() * kappa)
        PQ = PV * (1 / ab)
        pv = factorize(PV.matrix, dim=PV.dim, backend=FACTOR_BACKEND)
        pq = pv.scaled(1 / ab)
        return _two_factor_precond(system, pv, pq, (PV.matrix, PQ.matrix), "theta=1/2")
    n = system.n
    if n > DENSE_THETA_CAP:
        raise ValueError(f"general theta needs a dense construction; {n} dofs exceeds the cap {DENSE_THETA_CAP}")
    A, B, C = system.A.toarray(), system.B.toarray(), system.C.toarray()
    SV = B.T @ np.linalg.solve(C, B)
    SQ = B @ np.linalg.solve(A, B.T)
    PVd = A + spd_interpolate(A, SV, theta)
    PQd = C + spd_interpolate(C, SQ, 1.0 - theta)
    dimV = (M * beta).dim
    dimQ = (M * (1 / alpha)).dim
    # units of the interpolated terms: [A, B^T C^-1 B] needs unit(A) = unit(B^T C^-1 B)
    dimSV = system.b_dims[(0, 0)] ** 2 / system.c_dims[(0, 0)]
    dimSQ = system.b_dims[(0, 0)] ** 2 / system.a_dims[(0, 0)]
    if dimSV != dimV or dimSQ != dimQ:
        raise DimensionError("interpolation between matrices of different units")
    PVs, PQs = sp.csr_matrix(PVd), sp.csr_matrix(PQd)
    pv = cholesky(sp.csr_matrix(PVd), ordering="natural", dim=dimV)
    pq = cholesky(sp.csr_matrix(PQd), ordering="natural", dim=dimQ)
    return _two_factor_precond(system, pv, pq, (PVs, PQs), f"theta={theta:g}")


def stokes_ocp_precond(system: SaddleSystem, inner: InnerCGConfig = InnerCGConfig()) -> BlockDiagPreconditioner:
    """``P_V = diag(H, alpha beta D H^-1 D^T)``, ``P_Q = P_V / (alpha beta)``,
    with ``H = beta M + sqrt(alpha beta) mu K``.

    The Schur blocks are inverted by unpreconditioned CG on the
    constant-orthogonal complement; each CG step costs one solve with the
    Cholesky factor of ``H``.  The two Schur solves of one application run
    in lockstep as a two-column CG.
    """
    _require(system, "stokes_ocp")
    alpha, beta, mu = (system.param(k) for k in ("alpha", "beta", "mu"))
    M, K, D = system.forms["mass"], system.forms["stiffness"], system.forms["div"]
    ab = alpha * beta
    H = M * beta + K * (ab.sqrt() * mu)
    hf = factorize(H.matrix, dim=H.dim, backend=FACTOR_BACKEND, components=3)
    Dm = D.matrix.tocsr()
    DT = Dm.T.tocsr()
    S_dim = ab.dim * D.dim * H.dim.inv() * D.dim
    nu = M.shape[0]
    npr = Dm.shape[0]
    stats = InnerStats()
    abv = ab.value

    def project(X):
        return X - X.mean(axis=0, keepdims=True)

    def schur_mv(X):
        # D H^-1 D^T, without the alpha beta factor
        return Dm @ hf.solve(DT @ X)

    def schur_solve(rhs):
        x, its = cg(schur_mv, rhs, inner.rel_tol, inner.max_it, project=project)
        stats.add(its)
        return x

    V_sl = [slice(0, nu), slice(nu, nu + npr)]
    nv = nu + npr

    def apply_V(r):
        return np.concatenate([hf.solve(r[:nu]), schur_solve(r[nu:nv][:, None])[:, 0] / abv])

    def apply_Q(r):
        return np.concatenate([abv * hf.solve(r[:nu]), schur_solve(r[nu:nv][:, None])[:, 0]])

    def joint(r):
        rv, rq = r[:nv], r[nv:]
        U = hf.solve(np.column_stack([rv[:nu], rq[:nu]]))
        P = schur_solve(np.column_stack([rv[nu:], rq[nu:]]))
        return np.concatenate([U[:, 0], P[:, 0] / abv, abv * U[:, 1], P[:, 1]])

    def forward_V(u):
        return np.concatenate([H.matrix @ u[:nu], abv * schur_mv(u[nu:])])

    def forward_Q(p):
        return np.concatenate([(H.matrix @ p[:nu]) / abv, schur_mv(p[nu:])])

    return BlockDiagPreconditioner(
        kind="stokes_ocp", n_v=nv, n_q=nv, apply_V=apply_V, apply_Q=apply_Q,
        forward_V=forward_V, forward_Q=forward_Q,
        unit_V=(H.dim, S_dim), unit_Q=(H.dim / ab.dim, S_dim / ab.dim),
        factors={"H": hf}, matrices=None, stats=stats, joint_apply=joint,
        label=f"nested Schur, inner CG rtol={inner.rel_tol:g}",
    )


def from_blocks(system: SaddleSystem, P_V: DimMatrix, P_Q: DimMatrix, label: str = "custom") -> BlockDiagPreconditioner:
    """Preconditioner from explicit single-field blocks (used for variants and mutants)."""
    pv = factorize(P_V.matrix, dim=P_V.dim, backend=FACTOR_BACKEND)
    pq = factorize(P_Q.matrix, dim=P_Q.dim, backend=FACTOR_BACKEND)
    return _two_factor_precond(system, pv, pq, (P_V.matrix, P_Q.matrix), label)


BUILDERS = {
    "stokes": stokes_precond,
    "elasticity": elasticity_precond,
    "poisson_ocp": poisson_ocp_precond,
    "stokes_ocp": stokes_ocp_precond,
}


def build_precond(system: SaddleSystem, **options) -> BlockDiagPreconditioner:
    return BUILDERS[system.kind](system, **options)


def check_precond_consistency(system: SaddleSystem, precond: BlockDiagPreconditioner) -> ConsistencyReport:
    """Compare block units with ``unit(V*)/unit(V)``, ``unit(Q*)/unit(Q)``.

    Both forms are reported: the operator unit of each block and the unit of
    the energy ``<P_V u, u>`` (resp. ``<P_Q p, p>``) against the Lagrangian.
    """
    L = system.lagrangian_unit
    entries = []
    for name, units, duals, blocks in (("P_V", system.V.units, system.dual_V, precond.unit_V),
                                       ("P_Q", system.Q.units, system.dual_Q, precond.unit_Q)):
        if len(blocks) != len(units):
            raise ValueError(f"{name} has {len(blocks)} field blocks for {len(units)} fields")
        for i, (u, du, d) in enumerate(zip(units, duals, blocks)):
            entries.append(ConsistencyEntry(f"unit({name}) [{i}]", d, du / u))
            entries.append(ConsistencyEntry(f"<{name} x, x> [{i}]", d * u * u, L))
    return ConsistencyReport(f"{system.kind} preconditioner ({precond.label})", entries)


@dataclass(frozen=True)
class ConstantsReport:
    """Extreme generalized Rayleigh quotients in the ``P_V``/``P_Q`` norms.

    ``coercivity_alpha`` is taken on ``ker B``; when that kernel is trivial
    the whole space is used instead (``kernel_dim == 0``).
    """

    norm_A: float
    coercivity_alpha: float
    norm_B: float
    infsup_beta: float
    kernel_dim: int
    dims: tuple[Dimension, ...] = ()

    @property
    def dimensionless(self) -> bool:
        return all(d == DIMENSIONLESS for d in self.dims)


def _inv_chol(P: np.ndarray) -> np.ndarray:
    L = scipy.linalg.cholesky(P, lower=True)
    return scipy.linalg.solve_triangular(L, np.eye(len(P)), lower=True)


def estimate_constants(system: SaddleSystem, precond: BlockDiagPreconditioner,
                       max_dofs: int = CONSTANTS_CAP) -> ConstantsReport:
    """Dense computation of ``||A||``, coercivity on ``ker B``, ``||B||`` and inf-sup."""
    if system.n > max_dofs:
        raise ValueError(f"{system.n} dofs exceeds the dense cap {max_dofs}")
    PV, PQ = precond.dense()
    A, B = system.A.toarray(), system.B.toarray()
    LVi = _inv_chol(PV)
    LQi = _inv_chol(PQ)
    At = LVi @ A @ LVi.T
    ev = scipy.linalg.eigvalsh((At + At.T) / 2)
    norm_A = float(np.max(np.abs(ev)))
    # ker B and its P_V-orthonormal image
    _, s, vt = scipy.linalg.svd(B, full_matrices=True)
    rank = int(np.sum(s > s[0] * 1e-10)) if s.size else 0
    Z = vt[rank:].T
    if Z.shape[1] > 0:
        az = Z.T @ A @ Z
        pz = Z.T @ PV @ Z
        alpha = float(scipy.linalg.eigvalsh((az + az.T) / 2, (pz + pz.T) / 2)[0])
    else:
        alpha = float(ev[0])
    G = LQi @ B @ LVi.T
    sg = scipy.linalg.svdvals(G)
    n_null_q = sum(1 for z in system.nullspace if np.any(z[system.n_v:]))
    keep = sg[: len(sg) - n_null_q] if n_null_q else sg
    dims = (system.a_dims[(0, 0)] / precond.unit_V[0],
            system.b_dims[(0, 0)] ** 2 / (precond.unit_V[0] * precond.unit_Q[0]))
    return ConstantsReport(norm_A, max(alpha, 0.0), float(sg[0]), float(keep[-1]),
                           int(Z.shape[1]), dims)

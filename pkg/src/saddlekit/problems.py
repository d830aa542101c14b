"""The four model saddle-point problems, with physical units.

Every builder returns a :class:`SaddleSystem` restricted to free degrees of
freedom.  Block dimensions are taken from the assembled forms (never typed
in by hand), so :func:`check_problem_consistency` is a genuine check of the
Lagrangian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import fem
from .linalg import DimMatrix
from .mesh import BoxMesh, build_box_mesh, everywhere, on_plane, tag_boundary
from .units import (DIMENSIONLESS, Dimension, DimensionError, Quantity, UnitVector,
                    format_unit, parse_unit)

__all__ = [
    "LEVEL_RESOLUTIONS",
    "PARAMETER_UNITS",
    "ConsistencyReport",
    "SaddleSystem",
    "build",
    "build_elasticity",
    "build_poisson_ocp",
    "build_stokes",
    "build_stokes_ocp",
    "check_problem_consistency",
    "direct_solve",
    "lagrangian_value",
    "problem_mesh",
]

ProblemKind = Literal["stokes", "elasticity", "poisson_ocp", "stokes_ocp"]
KINDS: tuple[str, ...] = ("stokes", "elasticity", "poisson_ocp", "stokes_ocp")
MAX_LEVEL = 5

PARAMETER_UNITS: dict[str, dict[str, Dimension]] = {
    "stokes": {"mu": parse_unit("N*s/m^2")},
    "elasticity": {"mu": parse_unit("N/m^2"), "lambda": parse_unit("N/m^2")},
    "poisson_ocp": {"alpha": parse_unit("obj*m^3/W^2"), "beta": parse_unit("obj/(K^2*m^3)"),
                    "kappa": parse_unit("W/(m*K)")},
    "stokes_ocp": {"alpha": parse_unit("obj*m^3/N^2"), "beta": parse_unit("obj*s^2/m^5"),
                   "mu": parse_unit("N*s/m^2")},
}

LAGRANGIAN_UNITS: dict[str, Dimension] = {
    "stokes": parse_unit("W"),
    "elasticity": parse_unit("J"),
    "poisson_ocp": parse_unit("obj"),
    "stokes_ocp": parse_unit("obj"),
}


def _cube_n(level: int) -> int:
    return 2 ** (level + 1)


def LEVEL_RESOLUTIONS(kind: str, level: int) -> tuple[int, int, int]:
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}")
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"invalid mesh level {level}; expected 0..{MAX_LEVEL}")
    if kind == "elasticity":
        k = 2 ** level
        return (10 * k, k, k)
    n = _cube_n(level)
    return (n, n, n)


@lru_cache(maxsize=8)
def problem_mesh(kind: str, level: int) -> BoxMesh:
    res = LEVEL_RESOLUTIONS(kind, level)
    if kind == "stokes":
        mesh = build_box_mesh([(-1, 1)] * 3, res)
        return tag_boundary(mesh, [
            ("inflow", on_plane(0, -1.0)),
            ("outflow", on_plane(0, 1.0)),
            ("noslip", everywhere),
        ])
    if kind == "elasticity":
        mesh = build_box_mesh([(0, 100), (0, 10), (0, 10)], res)
        return tag_boundary(mesh, [
            ("clamped", on_plane(0, 0.0)),
            ("loaded", on_plane(0, 100.0)),
            ("traction_free", everywhere),
        ])
    mesh = build_box_mesh([(0, 1)] * 3, res)
    return tag_boundary(mesh, [("boundary", everywhere)])


@dataclass(frozen=True)
class SpaceInfo:
    """Field layout of the primal or dual space (free dofs only)."""

    names: tuple[str, ...]
    slices: tuple[slice, ...]
    units: UnitVector
    total_dofs: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.slices[-1].stop if self.slices else 0

    def field(self, name: str) -> slice:
        return self.slices[self.names.index(name)]


@dataclass(frozen=True)
class SaddleSystem:
    """``[A, B^T; B, -C] (u, p) = (f, g)`` on free dofs, with units.

    ``a_dims``, ``b_dims``, ``c_dims`` map (row field, column field) to the
    operator dimension of each nonzero block; ``f_dims``/``g_dims`` give the
    dimension of each field of the right-hand side (``None`` for a zero
    field).  ``forms`` holds the reduced building blocks the preconditioners
    need; ``nullspace`` lists kernel vectors of the full operator.
    """

    kind: str
    level: int
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    V: SpaceInfo
    Q: SpaceInfo
    lagrangian_unit: Dimension
    parameters: dict[str, Quantity]
    a_dims: dict[tuple[int, int], Dimension]
    b_dims: dict[tuple[int, int], Dimension]
    c_dims: dict[tuple[int, int], Dimension]
    f_dims: tuple[Dimension | None, ...]
    g_dims: tuple[Dimension | None, ...]
    forms: dict[str, DimMatrix] = field(default_factory=dict)
    nullspace: tuple[np.ndarray, ...] = ()
    reduction: object = None

    @property
    def n(self) -> int:
        return self.V.size + self.Q.size

    @property
    def n_v(self) -> int:
        return self.V.size

    def operator(self) -> sp.csr_matrix:
        key = "_operator"
        cached = self.__dict__.get(key)
        if cached is None:
            cached = sp.bmat([[self.A, self.B.T], [self.B, -self.C]], format="csr")
            object.__setattr__(self, key, cached)
        return cached

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f, self.g])

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_v], x[self.n_v:]

    @property
    def dual_V(self) -> UnitVector:
        return self.V.units.dual(self.lagrangian_unit)

    @property
    def dual_Q(self) -> UnitVector:
        return self.Q.units.dual(self.lagrangian_unit)

    def param(self, name: str) -> Quantity:
        return self.parameters[name]


def _param(kind: str, name: str, value) -> Quantity:
    expected = PARAMETER_UNITS[kind][name]
    if isinstance(value, Quantity):
        if value.dim != expected:
            raise DimensionError(f"{kind}.{name}: expected {format_unit(expected)}, got {format_unit(value.dim)}")
        q = value
    else:
        q = Quantity(float(value), expected)
    if not np.isfinite(q.value):
        raise ValueError(f"{kind}.{name} must be finite")
    return q


def _sum_dims(*dims: Dimension | None, what: str) -> Dimension | None:
    present = [d for d in dims if d is not None]
    if not present:
        return None
    for d in present[1:]:
        if d != present[0]:
            raise DimensionError(f"{what}: {format_unit(present[0])} vs {format_unit(d)}")
    return present[0]


def _space_info(names, spaces, free_counts) -> SpaceInfo:
    offs = np.cumsum([0] + list(free_counts))
    slices = tuple(slice(int(offs[i]), int(offs[i + 1])) for i in range(len(free_counts)))
    return SpaceInfo(tuple(names), slices, UnitVector(tuple(s.unit for s in spaces)),
                     tuple(s.ndofs for s in spaces))


@lru_cache(maxsize=4)
def _stokes_base(level: int):
    mesh = problem_mesh("stokes", level)
    inflow = lambda x: np.column_stack([(1 - x[:, 1] ** 2) * (1 - x[:, 2] ** 2),
                                        np.zeros(len(x)), np.zeros(len(x))])
    V = fem.FeSpace(mesh, "P2", 3, parse_unit("m/s"))
    V = V.with_dirichlet(["noslip"]).with_dirichlet(["inflow"], inflow)
    Q = fem.FeSpace(mesh, "P1", 1, parse_unit("N/m^2"))
    K = fem.assemble_stiffness(V)
    D = fem.assemble_div(V, Q)
    Mp = fem.assemble_mass(Q)
    return mesh, V, Q, K, D, Mp


def build_stokes(level: int, mu=1.0, force=None) -> SaddleSystem:
    """Taylor-Hood Stokes flow in ``(-1, 1)^3`` with a parabolic inflow profile.

    ``force`` is an optional ``(callable, Dimension)`` volume force density;
    the default is zero.
    """
    mu = _param("stokes", "mu", mu)
    if mu.value <= 0:
        raise ValueError("viscosity must be positive")
    mesh, V, Q, K, D, Mp = _stokes_base(level)
    A = K * mu
    B = D * -1.0
    force = force if force is not None else (lambda x: 0.0, parse_unit("N/m^3"))
    f = fem.assemble_load(V, force)
    zeroC = sp.csr_matrix((Q.ndofs, Q.ndofs))
    red = fem.apply_dirichlet(A, B, zeroC, f, np.zeros(Q.ndofs), V, Q)
    lift_f = A.dim * V.unit
    f_dim = _sum_dims(f.dim, lift_f, what="stokes rhs f")
    g_dim = B.dim * V.unit
    fv = red.free_v
    return SaddleSystem(
        kind="stokes", level=level, A=red.A, B=red.B, C=red.C, f=red.f, g=red.g,
        V=_space_info(["velocity"], [V], [len(fv)]),
        Q=_space_info(["pressure"], [Q], [len(red.free_q)]),
        lagrangian_unit=LAGRANGIAN_UNITS["stokes"], parameters={"mu": mu},
        a_dims={(0, 0): A.dim}, b_dims={(0, 0): B.dim}, c_dims={},
        f_dims=(f_dim,), g_dims=(g_dim,),
        forms={"stiffness": DimMatrix(fem._restrict(K.matrix, fv, fv), K.dim),
               "pressure_mass": DimMatrix(Mp.matrix, Mp.dim)},
        reduction=red,
    )


@lru_cache(maxsize=4)
def _elasticity_base(level: int):
    mesh = problem_mesh("elasticity", level)
    V = fem.FeSpace(mesh, "P2", 3, parse_unit("m")).with_dirichlet(["clamped"])
    Q = fem.FeSpace(mesh, "P1", 1, parse_unit("N/m^2"))
    E = fem.assemble_eps_form(V)
    D = fem.assemble_div(V, Q)
    Mp = fem.assemble_mass(Q)
    traction = (lambda x: np.tile([1.0, 0.0, 0.0], (len(x), 1)), parse_unit("N/m^2"))
    f = fem.assemble_boundary_traction(V, "loaded", traction)
    return mesh, V, Q, E, D, Mp, f


def build_elasticity(level: int, mu=1.0, lam=1.0) -> SaddleSystem:
    """Mixed displacement/pressure elasticity of a clamped rod under end traction."""
    mu = _param("elasticity", "mu", mu)
    lam = _param("elasticity", "lambda", lam)
    if mu.value <= 0 or 2 * mu.value + 3 * lam.value <= 0:
        raise ValueError("need mu > 0 and 2 mu + 3 lambda > 0")
    if lam.value == 0:
        raise ValueError("lambda must be nonzero (C = lambda^-1 M)")
    mesh, V, Q, E, D, Mp, f = _elasticity_base(level)
    A = E * mu
    B = D
    C = Mp * (1 / lam)
    red = fem.apply_dirichlet(A, B, C, f, np.zeros(Q.ndofs), V, Q)
    fv = red.free_v
    return SaddleSystem(
        kind="elasticity", level=level, A=red.A, B=red.B, C=red.C, f=red.f, g=red.g,
        V=_space_info(["displacement"], [V], [len(fv)]),
        Q=_space_info(["pressure"], [Q], [len(red.free_q)]),
        lagrangian_unit=LAGRANGIAN_UNITS["elasticity"], parameters={"mu": mu, "lambda": lam},
        a_dims={(0, 0): A.dim}, b_dims={(0, 0): B.dim}, c_dims={(0, 0): C.dim},
        f_dims=(f.dim,), g_dims=(None,),
        forms={"eps": DimMatrix(fem._restrict(E.matrix, fv, fv), E.dim),
               "pressure_mass": DimMatrix(Mp.matrix, Mp.dim)},
        reduction=red,
    )


@lru_cache(maxsize=4)
def _poisson_base(level: int):
    mesh = problem_mesh("poisson_ocp", level)
    V = fem.FeSpace(mesh, "P1", 1, parse_unit("K")).with_dirichlet(["boundary"])
    Q = fem.FeSpace(mesh, "P1", 1, parse_unit("obj/W")).with_dirichlet(["boundary"])
    M = fem.assemble_mass(V)
    K = fem.assemble_stiffness(V)
    # u_d(x) = x_1 K/m
    ud_load = fem.assemble_load(V, (lambda x: x[:, 0], parse_unit("K/m") * parse_unit("m")))
    return mesh, V, Q, M, K, ud_load


def build_poisson_ocp(level: int, alpha=1.0, beta=1.0, kappa=1.0) -> SaddleSystem:
    """Distributed control of stationary heat conduction, control eliminated."""
    alpha = _param("poisson_ocp", "alpha", alpha)
    beta = _param("poisson_ocp", "beta", beta)
    kappa = _param("poisson_ocp", "kappa", kappa)
    if min(alpha.value, beta.value, kappa.value) <= 0:
        raise ValueError("alpha, beta, kappa must be positive")
    mesh, V, Q, M, K, ud_load = _poisson_base(level)
    A = M * beta
    B = K * kappa
    C = M * (1 / alpha)
    f = fem.AssembledVector(beta.value * ud_load.vector, beta.dim * ud_load.dim)
    red = fem.apply_dirichlet(A, B, C, f, np.zeros(Q.ndofs), V, Q)
    fv = red.free_v
    Mr = DimMatrix(fem._restrict(M.matrix, fv, fv), M.dim)
    Kr = DimMatrix(fem._restrict(K.matrix, fv, fv), K.dim)
    return SaddleSystem(
        kind="poisson_ocp", level=level, A=red.A, B=red.B, C=red.C, f=red.f, g=red.g,
        V=_space_info(["state"], [V], [len(fv)]),
        Q=_space_info(["adjoint"], [Q], [len(red.free_q)]),
        lagrangian_unit=LAGRANGIAN_UNITS["poisson_ocp"],
        parameters={"alpha": alpha, "beta": beta, "kappa": kappa},
        a_dims={(0, 0): A.dim}, b_dims={(0, 0): B.dim}, c_dims={(0, 0): C.dim},
        f_dims=(f.dim,), g_dims=(None,),
        forms={"mass": Mr, "stiffness": Kr},
        reduction=red,
    )


@lru_cache(maxsize=4)
def _stokes_ocp_base(level: int):
    mesh = problem_mesh("stokes_ocp", level)
    Vu = fem.FeSpace(mesh, "P2", 3, parse_unit("m/s")).with_dirichlet(["boundary"])
    Vp = fem.FeSpace(mesh, "P1", 1, parse_unit("N/m^2"))
    Qw = fem.FeSpace(mesh, "P2", 3, parse_unit("obj/N")).with_dirichlet(["boundary"])
    Qr = fem.FeSpace(mesh, "P1", 1, parse_unit("obj*s/m^3"))
    M = fem.assemble_mass(Vu)
    K = fem.assemble_stiffness(Vu)
    D = fem.assemble_div(Vu, Vp)
    Mp = fem.assemble_mass(Vp)
    # u_d(x) = (x_1, 0, 0) 1/s
    ud = (lambda x: np.column_stack([x[:, 0], np.zeros(len(x)), np.zeros(len(x))]),
          parse_unit("1/s") * parse_unit("m"))
    ud_load = fem.assemble_load(Vu, ud)
    return mesh, Vu, Vp, Qw, Qr, M, K, D, Mp, ud_load


def build_stokes_ocp(level: int, alpha=1.0, beta=1.0, mu=1.0) -> SaddleSystem:
    """Distributed control of Stokes flow: nested saddle point with V = Q = Taylor-Hood.

    Pressures are only determined up to constants; :attr:`SaddleSystem.nullspace`
    holds the two constant-pressure kernel vectors and the pressure rhs
    blocks are projected against them.
    """
    alpha = _param("stokes_ocp", "alpha", alpha)
    beta = _param("stokes_ocp", "beta", beta)
    mu = _param("stokes_ocp", "mu", mu)
    if min(alpha.value, beta.value, mu.value) <= 0:
        raise ValueError("alpha, beta, mu must be positive")
    mesh, Vu, Vp, Qw, Qr, M, K, D, Mp, ud_load = _stokes_ocp_base(level)
    fu = Vu.free_dofs()
    nu, npr = len(fu), Vp.ndofs
    Mr = DimMatrix(fem._restrict(M.matrix, fu, fu), M.dim)
    Kr = DimMatrix(fem._restrict(K.matrix, fu, fu), K.dim)
    Dr = DimMatrix(sp.csr_matrix(D.matrix)[:, fu].tocsr(), D.dim)

    A11 = Mr * beta
    B11, B12, B21 = Kr * mu, -Dr.T, -Dr
    C11 = Mr * (1 / alpha)
    A = sp.bmat([[A11.matrix, None], [None, sp.csr_matrix((npr, npr))]], format="csr")
    B = sp.bmat([[B11.matrix, B12.matrix], [B21.matrix, None]], format="csr")
    C = sp.bmat([[C11.matrix, None], [None, sp.csr_matrix((npr, npr))]], format="csr")
    f_dim = beta.dim * ud_load.dim
    f = np.concatenate([beta.value * ud_load.vector[fu], np.zeros(npr)])
    g = np.zeros(nu + npr)
    ones = np.ones(npr)
    f[nu:] -= ones * (ones @ f[nu:]) / npr
    g[nu:] -= ones * (ones @ g[nu:]) / npr
    n = 2 * (nu + npr)
    k1 = np.zeros(n)
    k1[nu:nu + npr] = 1.0
    k2 = np.zeros(n)
    k2[nu + npr + nu:] = 1.0
    info_v = _space_info(["velocity", "pressure"], [Vu, Vp], [nu, npr])
    info_q = _space_info(["adjoint_velocity", "adjoint_pressure"], [Qw, Qr], [nu, npr])
    return SaddleSystem(
        kind="stokes_ocp", level=level, A=A, B=B, C=C, f=f, g=g, V=info_v, Q=info_q,
        lagrangian_unit=LAGRANGIAN_UNITS["stokes_ocp"],
        parameters={"alpha": alpha, "beta": beta, "mu": mu},
        a_dims={(0, 0): A11.dim},
        b_dims={(0, 0): B11.dim, (0, 1): B12.dim, (1, 0): B21.dim},
        c_dims={(0, 0): C11.dim},
        f_dims=(f_dim, None), g_dims=(None, None),
        forms={"mass": Mr, "stiffness": Kr, "div": Dr, "pressure_mass": DimMatrix(Mp.matrix, Mp.dim)},
        nullspace=(k1, k2),
    )


BUILDERS = {
    "stokes": build_stokes,
    "elasticity": build_elasticity,
    "poisson_ocp": build_poisson_ocp,
    "stokes_ocp": build_stokes_ocp,
}


def build(kind: str, level: int, **params) -> SaddleSystem:
    """Dispatch by problem name; ``lambda`` may be passed as ``lam`` or ``lambda``."""
    if kind not in BUILDERS:
        raise ValueError(f"unknown problem kind {kind!r}")
    if "lambda" in params:
        params["lam"] = params.pop("lambda")
    return BUILDERS[kind](level, **params)


def lagrangian_value(system: SaddleSystem, u: np.ndarray, p: np.ndarray) -> Quantity:
    """``1/2 <Au,u> + <Bu,p> - 1/2 <Cp,p> - <f,u> - <g,p>`` with the Lagrangian's unit."""
    u = np.asarray(u, float)
    p = np.asarray(p, float)
    if u.shape != (system.n_v,) or p.shape != (system.Q.size,):
        raise ValueError(f"expected sizes ({system.n_v}, {system.Q.size}), got {u.shape}, {p.shape}")
    val = (0.5 * u @ (system.A @ u) + p @ (system.B @ u) - 0.5 * p @ (system.C @ p)
           - system.f @ u - system.g @ p)
    return Quantity(float(val), system.lagrangian_unit)


def lagrangian_gradient(system: SaddleSystem, u: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``(L_u, L_p)``; equals minus the residual ``(r1, r2)``."""
    gu = system.A @ u + system.B.T @ p - system.f
    gp = system.B @ u - system.C @ p - system.g
    return np.concatenate([gu, gp])


@dataclass
class ConsistencyEntry:
    term: str
    dim: Dimension
    expected: Dimension

    @property
    def ok(self) -> bool:
        return self.dim == self.expected

    @property
    def diff(self) -> Dimension:
        return self.dim / self.expected

    def __str__(self) -> str:
        mark = "ok" if self.ok else f"MISMATCH (off by {format_unit(self.diff)})"
        return f"{self.term:<28} {format_unit(self.dim):<24} {mark}"


@dataclass
class ConsistencyReport:
    subject: str
    entries: list[ConsistencyEntry]

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    def failures(self) -> list[ConsistencyEntry]:
        return [e for e in self.entries if not e.ok]

    def __str__(self) -> str:
        head = f"{self.subject}: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + ["  " + str(e) for e in self.entries])


def check_problem_consistency(system: SaddleSystem) -> ConsistencyReport:
    """Check all Lagrangian terms share ``system.lagrangian_unit`` and the dual-unit rule."""
    L = system.lagrangian_unit
    V, Q = system.V.units, system.Q.units
    entries: list[ConsistencyEntry] = []
    for (i, j), d in sorted(system.a_dims.items()):
        entries.append(ConsistencyEntry(f"1/2 <A u, u> [{i},{j}]", d * V[i] * V[j], L))
    for (i, j), d in sorted(system.b_dims.items()):
        entries.append(ConsistencyEntry(f"<B u, p> [{i},{j}]", d * V[j] * Q[i], L))
    for (i, j), d in sorted(system.c_dims.items()):
        entries.append(ConsistencyEntry(f"1/2 <C p, p> [{i},{j}]", d * Q[i] * Q[j], L))
    for i, d in enumerate(system.f_dims):
        if d is not None:
            entries.append(ConsistencyEntry(f"<f, u> [{i}]", d * V[i], L))
    for i, d in enumerate(system.g_dims):
        if d is not None:
            entries.append(ConsistencyEntry(f"<g, p> [{i}]", d * Q[i], L))
    for i, (u, du) in enumerate(zip(V, system.dual_V)):
        entries.append(ConsistencyEntry(f"unit(V*)*unit(V) [{i}]", u * du, L))
    for i, (q, dq) in enumerate(zip(Q, system.dual_Q)):
        entries.append(ConsistencyEntry(f"unit(Q*)*unit(Q) [{i}]", q * dq, L))
    return ConsistencyReport(f"{system.kind} Lagrangian", entries)


def direct_solve(system: SaddleSystem) -> np.ndarray:
    """Dense symmetric-indefinite solve; kernel directions are constrained to zero
    Euclidean component (then the result is shifted to zero-mean pressures)."""
    K = system.operator().toarray()
    b = system.rhs()
    Z = np.column_stack(system.nullspace) if system.nullspace else None
    if Z is not None:
        k = Z.shape[1]
        K = np.block([[K, Z], [Z.T, np.zeros((k, k))]])
        b = np.concatenate([b, np.zeros(k)])
    x = scipy.linalg.solve(K, b, assume_a="sym")
    x = x[: system.n]
    return project_pressures(system, x)


def project_pressures(system: SaddleSystem, x: np.ndarray) -> np.ndarray:
    """Shift constant-pressure components to zero mean (mass-weighted)."""
    if not system.nullspace:
        return x
    x = x.copy()
    Mp = system.forms["pressure_mass"].matrix
    w = Mp @ np.ones(Mp.shape[0])
    for z in system.nullspace:
        idx = np.flatnonzero(z)
        x[idx] -= (w @ x[idx]) / w.sum()
    return x

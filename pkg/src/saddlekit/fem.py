"""Lagrange P1/P2 finite elements on tetrahedral box meshes.

Bases are dimensionless and mesh coordinates are lengths, so an assembled
matrix carries the dimension of its integral: mass ``m^3``, stiffness
``m``, divergence ``m^2``.  Coefficients enter as
:class:`~saddlekit.units.Quantity` and multiply into the dimension.

Vector-valued spaces number their degrees of freedom component-major:
``dof = component * n_nodes + node``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from math import sqrt
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import DimMatrix
from .mesh import BoxMesh
from .units import DIMENSIONLESS, Dimension, Quantity, parse_unit

__all__ = [
    "AssembledVector",
    "DirichletReduction",
    "FeSpace",
    "ProductSpace",
    "TET_DEG2",
    "TET_DEG5",
    "TRI_DEG5",
    "apply_dirichlet",
    "assemble_boundary_traction",
    "assemble_div",
    "assemble_eps_form",
    "assemble_load",
    "assemble_mass",
    "assemble_stiffness",
]

METER = parse_unit("m")
MASS_DIM = METER ** 3
STIFFNESS_DIM = METER
DIV_DIM = METER ** 2
AREA_DIM = METER ** 2


@dataclass(frozen=True)
class Rule:
    points: np.ndarray   # barycentric coordinates, (nq, d + 1)
    weights: np.ndarray  # relative to the simplex measure, sum to 1
    degree: int


def _orbit_tet(a: float) -> list[list[float]]:
    return [[1 - 3 * a if i == k else a for i in range(4)] for k in range(4)]


def _orbit_tet_edges(b: float) -> list[list[float]]:
    pts = []
    for i in range(4):
        for j in range(i + 1, 4):
            pts.append([b if k in (i, j) else 0.5 - b for k in range(4)])
    return pts


def _tet_deg5() -> Rule:
    # 14-point rule, exact for degree <= 5
    w1, a1 = 0.11268792571801567, 0.3108859192633005
    w2, a2 = 0.07349304311636198, 0.09273525031089125
    w3, b3 = 0.042546020777081535, 0.045503704125649656
    pts = _orbit_tet(a1) + _orbit_tet(a2) + _orbit_tet_edges(b3)
    wts = [w1] * 4 + [w2] * 4 + [w3] * 6
    return Rule(np.array(pts), np.array(wts), 5)


def _tet_deg2() -> Rule:
    a = (5 - sqrt(5)) / 20
    return Rule(np.array(_orbit_tet(a)), np.full(4, 0.25), 2)


def _tri_deg5() -> Rule:
    r = sqrt(15)
    a, b = (6 - r) / 21, (6 + r) / 21
    wa, wb = (155 - r) / 1200, (155 + r) / 1200
    pts = [[1 / 3] * 3]
    wts = [9 / 40]
    for t, w in ((a, wa), (b, wb)):
        for k in range(3):
            pts.append([1 - 2 * t if i == k else t for i in range(3)])
            wts.append(w)
    return Rule(np.array(pts), np.array(wts), 5)


TET_DEG2 = _tet_deg2()
TET_DEG5 = _tet_deg5()
TRI_DEG5 = _tri_deg5()

Family = Literal["P1", "P2"]


def _edge_pairs(nv: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(nv) for j in range(i + 1, nv)]


def basis_values(family: Family, lam: np.ndarray) -> np.ndarray:
    """Basis values at barycentric points ``lam`` (nq, nv) -> (nq, nb)."""
    if family == "P1":
        return lam.copy()
    nv = lam.shape[1]
    vert = lam * (2 * lam - 1)
    edge = np.stack([4 * lam[:, i] * lam[:, j] for i, j in _edge_pairs(nv)], axis=1)
    return np.hstack([vert, edge])


def basis_dlam(family: Family, lam: np.ndarray) -> np.ndarray:
    """Derivatives w.r.t. barycentric coordinates, (nq, nb, nv)."""
    nq, nv = lam.shape
    if family == "P1":
        return np.broadcast_to(np.eye(nv), (nq, nv, nv)).copy()
    pairs = _edge_pairs(nv)
    out = np.zeros((nq, nv + len(pairs), nv))
    for i in range(nv):
        out[:, i, i] = 4 * lam[:, i] - 1
    for e, (i, j) in enumerate(pairs):
        out[:, nv + e, i] = 4 * lam[:, j]
        out[:, nv + e, j] = 4 * lam[:, i]
    return out


@dataclass(frozen=True)
class Geometry:
    vol: np.ndarray     # (nc,)
    glam: np.ndarray    # (nc, 4, 3) gradients of barycentric coordinates
    x0: np.ndarray      # (nc, 3)
    jac: np.ndarray     # (nc, 3, 3), columns x_k - x_0


def tet_geometry(mesh: BoxMesh) -> Geometry:
    if "geometry" not in mesh._cache:
        p = mesh.vertices[mesh.tets]
        jac = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))
        det = np.linalg.det(jac)
        inv = np.linalg.inv(jac)  # rows: gradients of reference coordinates
        glam = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
        mesh._cache["geometry"] = Geometry(np.abs(det) / 6.0, glam, p[:, 0], jac)
    return mesh._cache["geometry"]


@dataclass(frozen=True)
class FeSpace:
    """Continuous Lagrange space with optional Dirichlet data.

    ``unit`` is the dimension of the field (and of its coefficients, the
    basis being dimensionless).
    """

    mesh: BoxMesh
    family: Family = "P1"
    components: int = 1
    unit: Dimension = DIMENSIONLESS
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.family not in ("P1", "P2"):
            raise ValueError(f"unsupported family {self.family!r}")
        if self.components not in (1, 3):
            raise ValueError("components must be 1 or 3")

    @property
    def n_nodes(self) -> int:
        n = self.mesh.n_vertices
        return n if self.family == "P1" else n + len(self.mesh.edges)

    @property
    def ndofs(self) -> int:
        return self.components * self.n_nodes

    @property
    def n_local(self) -> int:
        return 4 if self.family == "P1" else 10

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        t = self.mesh.tets
        if self.family == "P1":
            return t
        nv = self.mesh.n_vertices
        edges = [self.mesh.edge_index(t[:, i], t[:, j]) + nv for i, j in _edge_pairs(4)]
        return np.column_stack([t] + edges)

    @cached_property
    def node_coords(self) -> np.ndarray:
        v = self.mesh.vertices
        if self.family == "P1":
            return v
        e = self.mesh.edges
        return np.vstack([v, 0.5 * (v[e[:, 0]] + v[e[:, 1]])])

    def cell_dofs(self) -> np.ndarray:
        """(nc, components * n_local) global dofs, component-major."""
        nodes = self.cell_nodes
        return np.hstack([nodes + c * self.n_nodes for c in range(self.components)])

    def facet_nodes(self, facets: np.ndarray) -> np.ndarray:
        """Nodes carried by boundary triangles, (nf, 3 or 6)."""
        if self.family == "P1":
            return facets
        nv = self.mesh.n_vertices
        edges = [self.mesh.edge_index(facets[:, i], facets[:, j]) + nv for i, j in _edge_pairs(3)]
        return np.column_stack([facets] + edges)

    def boundary_nodes(self, tags: Iterable[str]) -> np.ndarray:
        facets = [self.mesh.facets_with_tag(t) for t in tags]
        facets = np.vstack(facets) if facets else np.zeros((0, 3), dtype=np.int64)
        return np.unique(self.facet_nodes(facets))

    def with_dirichlet(self, tags: Iterable[str],
                       value: Callable[[np.ndarray], np.ndarray] | None = None,
                       components: Sequence[int] | None = None) -> "FeSpace":
        """Add Dirichlet conditions on tagged facets; ``value(x)`` -> (n, components)."""
        nodes = self.boundary_nodes(tags)
        comps = range(self.components) if components is None else components
        x = self.node_coords[nodes]
        vals = np.zeros((len(nodes), self.components)) if value is None else \
            np.asarray(value(x), dtype=float).reshape(len(nodes), self.components)
        dofs = np.concatenate([nodes + c * self.n_nodes for c in comps]).astype(np.int64)
        dvals = np.concatenate([vals[:, c] for c in comps])
        old = dict(zip(self.dirichlet_dofs.tolist(), self.dirichlet_values.tolist()))
        old.update(zip(dofs.tolist(), dvals.tolist()))
        keys = np.array(sorted(old), dtype=np.int64)
        values = np.array([old[k] for k in keys.tolist()], dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("Dirichlet values must be finite")
        return replace(self, dirichlet_dofs=keys, dirichlet_values=values)

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    def lifting(self) -> np.ndarray:
        g = np.zeros(self.ndofs)
        g[self.dirichlet_dofs] = self.dirichlet_values
        return g

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        vals = np.asarray(fn(self.node_coords), dtype=float).reshape(self.n_nodes, self.components)
        return vals.T.ravel()

    @property
    def field_slices(self) -> list[slice]:
        return [slice(0, self.ndofs)]

    @property
    def units(self) -> tuple[Dimension, ...]:
        return (self.unit,)


@dataclass(frozen=True)
class ProductSpace:
    """Cartesian product of spaces, dofs concatenated field by field."""

    spaces: tuple[FeSpace, ...]

    @property
    def ndofs(self) -> int:
        return sum(s.ndofs for s in self.spaces)

    @property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [s.ndofs for s in self.spaces])

    @property
    def field_slices(self) -> list[slice]:
        o = self.offsets
        return [slice(int(o[i]), int(o[i + 1])) for i in range(len(self.spaces))]

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        o = self.offsets
        return np.concatenate([s.dirichlet_dofs + o[i] for i, s in enumerate(self.spaces)]).astype(np.int64)

    @property
    def dirichlet_values(self) -> np.ndarray:
        return np.concatenate([s.dirichlet_values for s in self.spaces])

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    def lifting(self) -> np.ndarray:
        return np.concatenate([s.lifting() for s in self.spaces])

    @property
    def units(self) -> tuple[Dimension, ...]:
        return tuple(s.unit for s in self.spaces)


@dataclass(frozen=True)
class AssembledVector:
    vector: np.ndarray
    dim: Dimension = DIMENSIONLESS


def _coo_to_csr(rows, cols, vals, shape) -> sp.csr_matrix:
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def _scatter(rd: np.ndarray, cd: np.ndarray, ke: np.ndarray, shape, symmetric: bool) -> sp.csr_matrix:
    rows = np.broadcast_to(rd[:, :, None], ke.shape)
    cols = np.broadcast_to(cd[:, None, :], ke.shape)
    m = _coo_to_csr(rows, cols, ke, shape)
    if symmetric:
        m = ((m + m.T) * 0.5).tocsr()
        m.sort_indices()
    return m


def _coef(c) -> Quantity:
    if c is None:
        return Quantity(1.0)
    return c if isinstance(c, Quantity) else Quantity(float(c))


def _rule_for(*spaces: FeSpace) -> Rule:
    return TET_DEG5 if any(s.family == "P2" for s in spaces) else TET_DEG2


def _block_diag_components(space: FeSpace, ke: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand scalar element matrices to the component-major vector layout."""
    nc, nb, _ = ke.shape
    c = space.components
    if c == 1:
        return space.cell_dofs(), ke
    big = np.zeros((nc, c * nb, c * nb))
    for k in range(c):
        big[:, k * nb:(k + 1) * nb, k * nb:(k + 1) * nb] = ke
    return space.cell_dofs(), big


def assemble_mass(space: FeSpace, coefficient=None) -> DimMatrix:
    """``c * int u . v dx``; dimension ``dim(c) * m^3``."""
    coef = _coef(coefficient)
    rule = _rule_for(space)
    geo = tet_geometry(space.mesh)
    N = basis_values(space.family, rule.points)
    ref = np.einsum("q,qi,qj->ij", rule.weights, N, N)
    ke = geo.vol[:, None, None] * ref[None]
    dofs, ke = _block_diag_components(space, ke)
    m = _scatter(dofs, dofs, ke * coef.value, (space.ndofs, space.ndofs), True)
    return DimMatrix(m, MASS_DIM * coef.dim)


def _grads(space: FeSpace, rule: Rule) -> np.ndarray:
    geo = tet_geometry(space.mesh)
    dN = basis_dlam(space.family, rule.points)
    return np.einsum("qbk,ckd->cqbd", dN, geo.glam)


def assemble_stiffness(space: FeSpace, coefficient=None) -> DimMatrix:
    """``c * int grad u : grad v dx``; dimension ``dim(c) * m``."""
    coef = _coef(coefficient)
    rule = _rule_for(space)
    geo = tet_geometry(space.mesh)
    g = _grads(space, rule)
    ke = np.einsum("q,cqid,cqjd->cij", rule.weights, g, g) * geo.vol[:, None, None]
    dofs, ke = _block_diag_components(space, ke)
    m = _scatter(dofs, dofs, ke * coef.value, (space.ndofs, space.ndofs), True)
    return DimMatrix(m, STIFFNESS_DIM * coef.dim)


def assemble_eps_form(space: FeSpace, mu=None) -> DimMatrix:
    """``2 mu int eps(u) : eps(v) dx`` on a 3-vector space."""
    if space.components != 3:
        raise ValueError("eps form needs a 3-vector space")
    coef = _coef(mu)
    rule = _rule_for(space)
    geo = tet_geometry(space.mesh)
    g = _grads(space, rule)  # (nc, nq, nb, 3)
    nb = g.shape[2]
    w = rule.weights
    # test phi_i e_a, trial phi_j e_b:  delta_ab g_i.g_j + d_b phi_i d_a phi_j
    lap = np.einsum("q,cqid,cqjd->cij", w, g, g)
    cross = np.einsum("q,cqib,cqja->caibj", w, g, g)
    nc = g.shape[0]
    ke = cross.copy()
    for a in range(3):
        ke[:, a, :, a, :] += lap
    ke = ke.reshape(nc, 3 * nb, 3 * nb) * geo.vol[:, None, None]
    dofs = space.cell_dofs()
    m = _scatter(dofs, dofs, ke * coef.value, (space.ndofs, space.ndofs), True)
    return DimMatrix(m, STIFFNESS_DIM * coef.dim)


def assemble_div(vspace: FeSpace, pspace: FeSpace, sign: float = 1.0) -> DimMatrix:
    """``sign * int q div u dx``; rows are pressure dofs, columns velocity dofs."""
    if vspace.components != 3 or pspace.components != 1:
        raise ValueError("assemble_div needs a 3-vector velocity and a scalar pressure space")
    if vspace.mesh is not pspace.mesh:
        raise ValueError("spaces live on different meshes")
    rule = _rule_for(vspace, pspace)
    geo = tet_geometry(vspace.mesh)
    g = _grads(vspace, rule)
    psi = basis_values(pspace.family, rule.points)
    ke = np.einsum("q,qk,cqjb->ckbj", rule.weights, psi, g)
    nc, nk, _, nb = ke.shape
    ke = ke.reshape(nc, nk, 3 * nb) * geo.vol[:, None, None]
    m = _scatter(pspace.cell_dofs(), vspace.cell_dofs(), sign * ke, (pspace.ndofs, vspace.ndofs), False)
    return DimMatrix(m, DIV_DIM)


def _eval_density(fn, x: np.ndarray, components: int) -> np.ndarray:
    flat = x.reshape(-1, 3)
    vals = np.asarray(fn(flat), dtype=float)
    if vals.ndim == 0:
        vals = np.full((len(flat), components), float(vals))
    vals = vals.reshape(len(flat), components)
    return vals.reshape(x.shape[:-1] + (components,))


def _density(density) -> tuple[Callable, Dimension]:
    """Accept ``(callable, Dimension)`` or a :class:`Quantity`-like constant."""
    if isinstance(density, tuple):
        fn, dim = density
        return fn, dim
    if isinstance(density, Quantity):
        return (lambda x, v=density.value: v), density.dim
    raise TypeError("density must be (callable, Dimension) or Quantity")


def assemble_load(space: FeSpace, density) -> AssembledVector:
    """``int F . v dx`` for ``density = (F, dim(F))``; dimension ``dim(F) * m^3``."""
    fn, fdim = _density(density)
    rule = _rule_for(space) if space.family == "P2" else TET_DEG5
    geo = tet_geometry(space.mesh)
    xq = geo.x0[:, None, :] + np.einsum("cdk,qk->cqd", geo.jac, rule.points[:, 1:])
    F = _eval_density(fn, xq, space.components)  # (nc, nq, comps)
    N = basis_values(space.family, rule.points)
    fe = np.einsum("q,qi,cqa->cai", rule.weights, N, F) * geo.vol[:, None, None]
    out = np.zeros(space.ndofs)
    dofs = space.cell_dofs().reshape(len(fe), space.components, -1)
    np.add.at(out, dofs.ravel(), fe.ravel())
    return AssembledVector(out, fdim * MASS_DIM)


def assemble_boundary_traction(space: FeSpace, region_tag: str, traction) -> AssembledVector:
    """``int_Gamma F . v ds`` over facets tagged ``region_tag``; dimension ``dim(F) * m^2``."""
    fn, fdim = _density(traction)
    facets = space.mesh.facets_with_tag(region_tag)
    rule = TRI_DEG5
    p = space.mesh.vertices[facets]
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    xq = np.einsum("qk,fkd->fqd", rule.points, p)
    F = _eval_density(fn, xq, space.components)
    N = basis_values(space.family, rule.points)
    fe = np.einsum("q,qi,fqa->fai", rule.weights, N, F) * area[:, None, None]
    nodes = space.facet_nodes(facets)
    dofs = np.stack([nodes + c * space.n_nodes for c in range(space.components)], axis=1)
    out = np.zeros(space.ndofs)
    np.add.at(out, dofs.ravel(), fe.ravel())
    return AssembledVector(out, fdim * AREA_DIM)


@dataclass(frozen=True)
class DirichletReduction:
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    free_v: np.ndarray
    free_q: np.ndarray
    lift_v: np.ndarray
    lift_q: np.ndarray

    def expand(self, u: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Free-dof solution back to full vectors including Dirichlet values."""
        uf = self.lift_v.copy()
        uf[self.free_v] = u
        pf = self.lift_q.copy()
        pf[self.free_q] = p
        return uf, pf


def _restrict(m, rows, cols) -> sp.csr_matrix:
    out = sp.csr_matrix(m)[rows][:, cols].tocsr()
    out.sort_indices()
    return out


def apply_dirichlet(A, B, C, f, g, vspace, qspace) -> DirichletReduction:
    """Restrict ``[A, B^T; B, -C]`` to free dofs, moving Dirichlet data to the rhs.

    Full vectors are split ``u = u_free + lift``; the reduced rhs is
    ``(f - A lift_v - B^T lift_q, g - B lift_v + C lift_q)`` on free dofs.
    """
    A, B, C = (sp.csr_matrix(x.matrix if isinstance(x, DimMatrix) else x) for x in (A, B, C))
    f = np.asarray(getattr(f, "vector", f), dtype=float)
    g = np.asarray(getattr(g, "vector", g), dtype=float)
    fv, fq = vspace.free_dofs(), qspace.free_dofs()
    lv, lq = vspace.lifting(), qspace.lifting()
    rf = f - A @ lv - B.T @ lq
    rg = g - B @ lv + C @ lq
    Ar = _restrict(A, fv, fv)
    Ar = ((Ar + Ar.T) * 0.5).tocsr()
    Cr = _restrict(C, fq, fq)
    Cr = ((Cr + Cr.T) * 0.5).tocsr()
    return DirichletReduction(Ar, _restrict(B, fq, fv), Cr, rf[fv], rg[fq], fv, fq, lv, lq)

"""Structured tetrahedral meshes of axis-aligned boxes.

Each grid cell is split into six tetrahedra sharing the cell diagonal from
its lowest to its highest corner (Kuhn subdivision).  Because every cell uses
the same diagonal direction, neighbouring cells induce the same face
diagonals and the mesh is conforming.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

__all__ = ["BoxMesh", "build_box_mesh", "tag_boundary", "on_plane", "everywhere"]

Predicate = Callable[[np.ndarray], np.ndarray]


def _kuhn_cell() -> np.ndarray:
    """Local corner indices (bit i = axis i offset) of the six Kuhn tets."""
    tets = []
    for perm in itertools.permutations(range(3)):
        corner = 0
        path = [corner]
        for axis in perm:
            corner |= 1 << axis
            path.append(corner)
        tets.append(path)
    return np.array(tets)


@dataclass(frozen=True)
class BoxMesh:
    extents: tuple[tuple[float, float], ...]
    subdivisions: tuple[int, int, int]
    vertices: np.ndarray
    tets: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: np.ndarray | None = None
    tag_names: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm([b - a for a, b in self.extents]))

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.extents]))

    def tet_volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        e = p[:, 1:] - p[:, :1]
        return np.linalg.det(e) / 6.0

    @property
    def edges(self) -> np.ndarray:
        """Sorted unique vertex pairs, in lexicographic order."""
        if "edges" not in self._cache:
            pairs = self.tets[:, list(itertools.combinations(range(4), 2))].reshape(-1, 2)
            pairs = np.sort(pairs, axis=1)
            self._cache["edges"] = np.unique(pairs, axis=0)
        return self._cache["edges"]

    def edge_index(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Indices into :attr:`edges` of the edges joining vertices ``a``, ``b``."""
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo.astype(np.int64) * self.n_vertices + hi
        edges = self.edges
        ekey = edges[:, 0].astype(np.int64) * self.n_vertices + edges[:, 1]
        idx = np.searchsorted(ekey, key)
        if np.any(idx >= len(ekey)) or np.any(ekey[np.minimum(idx, len(ekey) - 1)] != key):
            raise KeyError("vertex pair is not a mesh edge")
        return idx

    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.boundary_facets].mean(axis=1)

    def facet_areas(self) -> np.ndarray:
        p = self.vertices[self.boundary_facets]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def facets_with_tag(self, name: str) -> np.ndarray:
        if self.facet_tags is None:
            raise ValueError("mesh boundary is not tagged")
        if name not in self.tag_names:
            raise KeyError(f"unknown region tag {name!r}; known: {self.tag_names}")
        return self.boundary_facets[self.facet_tags == self.tag_names.index(name)]

    def tag_counts(self) -> dict[str, int]:
        if self.facet_tags is None:
            return {}
        return {name: int(np.sum(self.facet_tags == i)) for i, name in enumerate(self.tag_names)}

    def dump(self, path) -> None:
        """Plain-text vertex/cell listing, for debugging only."""
        with open(path, "w") as fh:
            fh.write(f"vertices {self.n_vertices}\n")
            for x in self.vertices:
                fh.write("%.17g %.17g %.17g\n" % tuple(x))
            fh.write(f"tets {self.n_tets}\n")
            for t in self.tets:
                fh.write("%d %d %d %d\n" % tuple(t))
            fh.write(f"boundary_facets {len(self.boundary_facets)}\n")
            for i, f in enumerate(self.boundary_facets):
                tag = "" if self.facet_tags is None else " " + self.tag_names[self.facet_tags[i]]
                fh.write("%d %d %d%s\n" % (*f, tag))


def build_box_mesh(extents: Sequence[Sequence[float]], subdivisions: Sequence[int]) -> BoxMesh:
    """Kuhn tetrahedral mesh of the box ``prod [a_i, b_i]``.

    Vertices are numbered with the first coordinate running fastest; cells
    are visited in the same order and each contributes its six tets in a
    fixed permutation order, so the numbering is fully deterministic.
    """
    ext = tuple((float(a), float(b)) for a, b in extents)
    n = tuple(int(k) for k in subdivisions)
    if len(ext) != 3 or len(n) != 3:
        raise ValueError("need three extents and three subdivision counts")
    if any(k < 1 for k in n):
        raise ValueError(f"subdivisions must be >= 1, got {n}")
    if any(b <= a for a, b in ext):
        raise ValueError(f"degenerate extents {ext}")

    axes = [np.linspace(a, b, k + 1) for (a, b), k in zip(ext, n)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    stride = np.array([1, n[0] + 1, (n[0] + 1) * (n[1] + 1)])
    k, j, i = np.meshgrid(np.arange(n[2]), np.arange(n[1]), np.arange(n[0]), indexing="ij")
    base = (i * stride[0] + j * stride[1] + k * stride[2]).ravel()
    corner_offset = np.array(
        [sum(((c >> ax) & 1) * stride[ax] for ax in range(3)) for c in range(8)])
    local = corner_offset[_kuhn_cell()]  # (6, 4)
    tets = (base[:, None, None] + local[None]).reshape(-1, 4)

    p = vertices[tets]
    vol = np.linalg.det(p[:, 1:] - p[:, :1])
    neg = vol < 0
    tets[neg] = tets[neg][:, [1, 0, 2, 3]]

    faces = np.concatenate([tets[:, [1, 2, 3]], tets[:, [0, 2, 3]], tets[:, [0, 1, 3]], tets[:, [0, 1, 2]]])
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    boundary = faces[counts[inverse.ravel()] == 1]
    return BoxMesh(ext, n, vertices, tets, boundary)


def on_plane(axis: int, value: float, tol: float | None = None) -> Predicate:
    """Predicate on facet centroids: coordinate ``axis`` equals ``value``."""
    def pred(x: np.ndarray, scale: float = 1.0) -> np.ndarray:
        t = tol if tol is not None else 1e-10 * scale
        return np.abs(x[:, axis] - value) <= t
    pred.uses_scale = True
    return pred


def everywhere(x: np.ndarray, scale: float = 1.0) -> np.ndarray:
    return np.ones(len(x), dtype=bool)


everywhere.uses_scale = True


def tag_boundary(mesh: BoxMesh, predicates: dict[str, Predicate] | Sequence[tuple[str, Predicate]]) -> BoxMesh:
    """Tag each boundary facet with the first predicate matching its centroid.

    Predicates receive an ``(m, 3)`` centroid array (and, if they declare
    ``uses_scale``, the mesh diameter for tolerance scaling).  Every facet
    must be matched by some predicate.
    """
    items = list(predicates.items()) if isinstance(predicates, dict) else list(predicates)
    names = tuple(name for name, _ in items)
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate region names in {names}")
    c = mesh.facet_centroids()
    tags = np.full(len(c), -1, dtype=np.int64)
    for idx, (_, pred) in enumerate(items):
        hit = pred(c, mesh.diameter) if getattr(pred, "uses_scale", False) else pred(c)
        tags[(tags < 0) & np.asarray(hit, dtype=bool)] = idx
    missing = np.flatnonzero(tags < 0)
    if missing.size:
        raise ValueError(f"boundary facet with centroid {tuple(c[missing[0]])} matches no region "
                         f"({missing.size} uncovered)")
    return replace(mesh, facet_tags=tags, tag_names=names, _cache=mesh._cache)

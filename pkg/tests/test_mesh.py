import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saddlekit.mesh import build_box_mesh, everywhere, on_plane, tag_boundary
from saddlekit.problems import problem_mesh

subdiv = st.tuples(*(st.integers(1, 8),) * 3)


def test_unit_cube_counts():
    m = build_box_mesh([(0, 1)] * 3, (4, 4, 4))
    assert (m.n_vertices, m.n_tets) == (125, 384)
    m1 = build_box_mesh([(0, 1)] * 3, (1, 1, 1))
    assert (m1.n_vertices, m1.n_tets) == (8, 6)


def test_rod_vertex_count():
    m = build_box_mesh([(0, 100), (0, 10), (0, 10)], (20, 2, 2))
    assert m.n_vertices == 21 * 3 * 3 == 189


def test_invalid_inputs():
    with pytest.raises(ValueError):
        build_box_mesh([(0, 1)] * 3, (0, 1, 1))
    with pytest.raises(ValueError):
        build_box_mesh([(0, 1), (1, 1), (0, 1)], (1, 1, 1))


def test_deterministic():
    a = build_box_mesh([(0, 1)] * 3, (3, 2, 2))
    b = build_box_mesh([(0, 1)] * 3, (3, 2, 2))
    assert np.array_equal(a.tets, b.tets) and np.array_equal(a.vertices, b.vertices)


@given(subdiv)
def test_mesh_invariants(n):
    ext = [(-1.0, 2.0), (0.0, 1.5), (3.0, 4.0)]
    m = build_box_mesh(ext, n)
    assert m.n_vertices == np.prod(np.add(n, 1))
    assert m.n_tets == 6 * np.prod(n)
    p = m.vertices[m.tets]
    vol = np.linalg.det(p[:, 1:] - p[:, :1]) / 6
    assert np.all(vol > 0)
    assert abs(vol.sum() - 3.0 * 1.5 * 1.0) <= 1e-12 * 4.5
    # facet sharing: interior triangles twice, boundary once
    faces = np.sort(np.concatenate([m.tets[:, [1, 2, 3]], m.tets[:, [0, 2, 3]],
                                    m.tets[:, [0, 1, 3]], m.tets[:, [0, 1, 2]]]), axis=1)
    _, counts = np.unique(faces, axis=0, return_counts=True)
    assert set(counts.tolist()) <= {1, 2}
    assert np.sum(counts == 1) == len(m.boundary_facets)
    # each boundary facet lies on exactly one box face
    c = m.facet_centroids()
    tol = 1e-10 * m.diameter
    on = sum(np.abs(c[:, ax] - v) <= tol for ax in range(3) for v in ext[ax])
    assert np.all(on == 1)
    assert len(m.boundary_facets) == 4 * (n[0] * n[1] + n[1] * n[2] + n[0] * n[2])


def test_stokes_tags_partition():
    m = problem_mesh("stokes", 1)
    counts = m.tag_counts()
    assert set(counts) == {"inflow", "outflow", "noslip"}
    assert sum(counts.values()) == len(m.boundary_facets)
    assert counts["inflow"] == counts["outflow"] == 2 * 4 * 4


def test_rod_clamped_face_count():
    m = problem_mesh("elasticity", 1)
    n = m.subdivisions
    assert m.tag_counts()["clamped"] == 2 * n[1] * n[2]
    assert m.facets_with_tag("loaded").shape == (2 * n[1] * n[2], 3)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_all_dirichlet_tag(n):
    m = tag_boundary(build_box_mesh([(0, 1)] * 3, (n,) * 3), {"boundary": everywhere})
    assert m.tag_counts() == {"boundary": 12 * n * n}


def test_first_match_wins_and_uncovered():
    m = build_box_mesh([(0, 1)] * 3, (2, 2, 2))
    t = tag_boundary(m, [("left", on_plane(0, 0.0)), ("also_left", on_plane(0, 0.0)), ("rest", everywhere)])
    assert t.tag_counts()["also_left"] == 0
    with pytest.raises(ValueError, match="centroid"):
        tag_boundary(m, [("left", on_plane(0, 0.0))])


def test_dump(tmp_path):
    m = problem_mesh("poisson_ocp", 0)
    m.dump(tmp_path / "mesh.txt")
    text = (tmp_path / "mesh.txt").read_text()
    assert text.startswith(f"vertices {m.n_vertices}\n")
    assert " boundary\n" in text

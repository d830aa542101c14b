import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from saddlekit import fem
from saddlekit.linalg import (MM_HEADER, DimMatrix, NotPositiveDefinite, cholesky, factorize, gen_sym_eig,
                              jacobi_eig, mm_read, mm_write, sparse_factor, spd_interpolate, sym_eig)
from saddlekit.mesh import build_box_mesh
from saddlekit.problems import build_poisson_ocp, build_stokes
from saddlekit.units import parse_unit


def random_spd(rng, n, cond=1e3):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.geomspace(1, cond, n)) @ q.T


def pinned_p1(n):
    """P1 mass and stiffness on the unit cube with vertex 0 removed."""
    mesh = build_box_mesh([(0, 1)] * 3, (n,) * 3)
    V = fem.FeSpace(mesh, "P1")
    keep = np.arange(1, V.ndofs)
    M = fem.assemble_mass(V).matrix.tocsr()[keep][:, keep]
    K = fem.assemble_stiffness(V).matrix.tocsr()[keep][:, keep]
    return M, K


@pytest.mark.parametrize("backend", ["banded", "superlu"])
def test_identity(backend):
    f = factorize(sp.identity(5, format="csr"), backend=backend)
    b = np.arange(5.0)
    assert np.array_equal(f.solve(b), b)


def test_hand_cholesky():
    f = cholesky(sp.csr_matrix([[4.0, 2.0], [2.0, 3.0]]), ordering="natural")
    assert np.allclose(f.lower_dense(), [[2, 0], [1, np.sqrt(2)]], atol=1e-15)


@pytest.mark.parametrize("backend", ["banded", "superlu"])
def test_pinned_stiffness_matches_dense(backend):
    _, K = pinned_p1(2)
    b = np.linspace(-1, 1, K.shape[0])
    x = factorize(K, backend=backend).solve(b)
    ref = np.linalg.solve(K.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)
    assert np.linalg.norm(K @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_factor_reproduces_input():
    _, K = pinned_p1(3)
    f = cholesky(K)
    L = f.lower_dense()
    P = np.eye(K.shape[0])[f.perm]
    assert np.allclose(P.T @ L @ L.T @ P, K.toarray(), rtol=0, atol=1e-10 * abs(K).max())


@pytest.mark.parametrize("backend", ["banded", "superlu"])
def test_assembled_operators_up_to_2000(backend):
    # Poisson level 2 P_V (343 dofs) and Stokes level 0 velocity block (~ 1000 dofs)
    s = build_poisson_ocp(2, 1e-2, 1.0, 1.0)
    st_ = build_stokes(0)
    for m in (s.A + s.B, st_.A):
        assert m.shape[0] <= 2000
        b = np.cos(np.arange(m.shape[0]))
        x = factorize(m, backend=backend).solve(b)
        ref = np.linalg.solve(m.toarray(), b)
        assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


@pytest.mark.parametrize("backend", ["banded", "superlu"])
def test_not_positive_definite_pivot(backend):
    a = sp.csr_matrix(np.diag([1.0, 2.0, -3.0, 4.0]))
    with pytest.raises(NotPositiveDefinite) as exc:
        factorize(a, backend=backend)
    assert exc.value.pivot == 2


def test_component_block_factor():
    rng = np.random.default_rng(0)
    a = sp.csr_matrix(random_spd(rng, 6))
    big = sp.block_diag([a, a, a], format="csr")
    f = sparse_factor(big, components=3)
    assert f.components == 3 and f.lu.shape == (6, 6)
    b = rng.standard_normal((18, 2))
    assert np.allclose(big @ f.solve(b), b, atol=1e-10)
    assert np.allclose(big @ f.solve(b[:, 0]), b[:, 0], atol=1e-10)
    # not an identical-block matrix: falls back to the full factor
    other = sp.block_diag([a, 2 * a, a], format="csr")
    g = sparse_factor(other, components=3)
    assert g.components == 1
    assert np.allclose(other @ g.solve(b), b, atol=1e-10)


def test_solve_dimension_and_scaling():
    m = DimMatrix(sp.identity(3, format="csr") * 2.0, parse_unit("m^3"))
    for backend in ("banded", "superlu"):
        f = factorize(m.matrix, dim=m.dim, backend=backend)
        assert f.solve_dim(parse_unit("N")) == parse_unit("N/m^3")
        g = f.scaled(4.0)
        assert np.allclose(g.solve(np.ones(3)), 1 / 8)
        with pytest.raises(NotPositiveDefinite):
            f.scaled(-1.0)


def test_sym_eig_diag():
    w, v = sym_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(w, [1, 2, 3])
    assert np.allclose(np.abs(v), np.eye(3)[:, [1, 2, 0]])


def test_generalized_with_identity_reduces():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((7, 7))
    a = a + a.T
    w1, _ = sym_eig(a)
    w2, _ = gen_sym_eig(a, np.eye(7))
    assert np.allclose(w1, w2, atol=1e-12)


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
def test_generalized_random_pair(method):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 8))
    a = x + x.T
    b = random_spd(rng, 8, 50)
    w, vecs = gen_sym_eig(a, b, method=method)
    # reference: eigenvalues of b^{-1/2} a b^{-1/2}
    eb, qb = np.linalg.eigh(b)
    bmh = (qb / np.sqrt(eb)) @ qb.T
    ref = np.linalg.eigvalsh(bmh @ a @ bmh)
    assert np.allclose(w, ref, rtol=1e-10, atol=1e-12)
    for k in range(8):
        r = a @ vecs[:, k] - w[k] * b @ vecs[:, k]
        assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm(a)
    assert np.allclose(vecs.T @ b @ vecs, np.eye(8), atol=1e-10)


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30, 30))
    a = x + x.T
    w, v = jacobi_eig(a)
    assert np.allclose(w, np.linalg.eigvalsh(a), atol=1e-11)
    assert np.allclose(v.T @ v, np.eye(30), atol=1e-12)


def test_eig_rejects_nonsymmetric():
    with pytest.raises(ValueError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        gen_sym_eig(np.eye(2), -np.eye(2))


def test_interpolate_endpoints_and_diagonal():
    rng = np.random.default_rng(4)
    v, w = random_spd(rng, 6), random_spd(rng, 6)
    assert np.allclose(spd_interpolate(v, w, 0.0), v, rtol=0, atol=1e-12 * np.abs(v).max())
    assert np.allclose(spd_interpolate(v, w, 1.0), w, rtol=0, atol=1e-12 * np.abs(w).max())
    for theta in (0.2, 0.5, 0.9):
        assert np.allclose(spd_interpolate(v, v, theta), v, atol=1e-11)


def test_interpolate_scaling_example():
    rng = np.random.default_rng(5)
    v, w = random_spd(rng, 6, 10), random_spd(rng, 6, 10)
    g, d, t = 3.0, 7.0, 0.3
    lhs = spd_interpolate(g * v, d * w, t)
    rhs = g ** (1 - t) * d ** t * spd_interpolate(v, w, t)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_interpolate_rejects():
    with pytest.raises(ValueError):
        spd_interpolate(np.eye(2), np.eye(2), 1.5)
    with pytest.raises(NotPositiveDefinite):
        spd_interpolate(np.eye(2), np.diag([1.0, -1.0]), 0.5)


def test_half_interpolation_recovers_stiffness():
    M, K = pinned_p1(2)
    Md, Kd = M.toarray(), K.toarray()
    res = spd_interpolate(Md, Kd.T @ np.linalg.solve(Md, Kd), 0.5)
    assert np.linalg.norm(res - Kd) <= 1e-9 * np.linalg.norm(Kd)


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-2, 1e2), st.floats(1e-2, 1e2), st.floats(0, 1))
def test_interpolate_scaling_law(seed, g, d, t):
    rng = np.random.default_rng(seed)
    v, w = random_spd(rng, 5, 20), random_spd(rng, 5, 20)
    lhs = spd_interpolate(g * v, d * w, t)
    rhs = g ** (1 - t) * d ** t * spd_interpolate(v, w, t)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_matrix_market_round_trip(tmp_path):
    _, K = pinned_p1(2)
    path = tmp_path / "k.mtx"
    mm_write(path, K, comment="pinned P1 stiffness")
    assert path.read_text().splitlines()[0] == MM_HEADER
    back = mm_read(path)
    assert abs(back - K).max() <= 1e-15 * abs(K).max()


def test_matrix_market_rejects_other_header(tmp_path):
    p = tmp_path / "x.mtx"
    p.write_text("%%MatrixMarket matrix array real general\n1 1\n1.0\n")
    with pytest.raises(ValueError):
        mm_read(p)

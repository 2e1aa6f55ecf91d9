import numpy as np
import pytest

from conftest import make_space
from dgiga.analysis import eigenfunction_error
from dgiga.assembly import assemble_bilinear, assemble_load, assemble_mass
from dgiga.config import build_space, external_potential, default_sigma, load_config
from dgiga.solver import (SolverError, dense_oracle, solve_eigen, solve_eigen_lobpcg,
                          solve_source, subspace_angle)
from dgiga.quadrature import gauss_legendre


def interval(p, n):
    return make_space(([0], [1]), [([0], [1])], p, n)


def l2_error_1d(space, w, exact):
    x, wt = gauss_legendre(10)
    n = space.meshes[0].space.elements[0]
    cells = np.linspace(0, 1, n + 1)
    xs = (cells[:-1, None] + np.diff(cells)[:, None] * x).ravel()
    ws = (np.diff(cells)[:, None] * wt).ravel()
    e = space.evaluate(w, xs[:, None]) - exact(xs)
    return float(np.sqrt(ws @ e ** 2))


def test_source_reproduces_quadratic():
    sp = interval(2, 4)
    sol = solve_source(assemble_bilinear(sp), assemble_load(sp, lambda x: np.ones(x.shape[0])))
    assert l2_error_1d(sp, sol.coeffs, lambda x: x * (1 - x)) <= 1e-13


def test_source_linear_order():
    errs = []
    for n in (4, 8, 16, 32):
        sp = interval(1, n)
        sol = solve_source(assemble_bilinear(sp), assemble_load(sp, lambda x: np.ones(x.shape[0])))
        errs.append(l2_error_1d(sp, sol.coeffs, lambda x: x * (1 - x)))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders >= 2 - 0.2)


def test_source_zero_rhs():
    sp = interval(2, 4)
    sol = solve_source(assemble_bilinear(sp), np.zeros(sp.n_dof))
    assert not np.any(sol.coeffs) and sol.residual == 0.0


def _manufactured_space(level, p):
    f = 2 ** level
    return make_space(([0, 0], [1, 1]), [([0, 0], [0.5, 1]), ([0.5, 0], [1, 1])], p,
                      [[2 * f, 4 * f], [3 * f, 6 * f]])


def _w(x, deriv=None, patch=None):
    s = np.sin(np.pi * x[..., 0]), np.sin(np.pi * x[..., 1])
    c = np.pi * np.cos(np.pi * x[..., 0]), np.pi * np.cos(np.pi * x[..., 1])
    if deriv is None:
        return s[0] * s[1]
    return c[0] * s[1] if deriv == 0 else s[0] * c[1]


@pytest.mark.parametrize("p", [1, 2])
def test_manufactured_nonmatching_dg_order(p):
    errs, hs = [], []
    for level in range(3):
        sp = _manufactured_space(level, p)
        A = assemble_bilinear(sp)
        b = assemble_load(sp, lambda x: np.pi ** 2 * _w(x))
        sol = solve_source(A, b)
        # Galerkin orthogonality: the algebraic residual vanishes
        assert np.linalg.norm(A @ sol.coeffs - b) <= 1e-10 * np.linalg.norm(b)
        errs.append(eigenfunction_error(sp, sol.coeffs, [_w], "DG"))
        hs.append(sp.h_max)
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert orders[-1] >= p - 0.2


def test_eigen_interval():
    sp = interval(2, 32)
    sol = solve_eigen(assemble_bilinear(sp), assemble_mass(sp), 3)
    assert np.allclose(sol.values, [4.9348, 19.7392, 44.4132], atol=2e-2)
    assert sol.values[0] == pytest.approx(np.pi ** 2 / 2, rel=1e-6)


def test_eigen_square_and_normalization():
    sp = make_space(([-1, -1], [1, 1]), [([-1, -1], [1, 1])], 2, 16)
    A, M = assemble_bilinear(sp), assemble_mass(sp)
    sol = solve_eigen(A, M, 4)
    assert sol.values[0] == pytest.approx(np.pi ** 2 / 4, rel=1e-5)
    G = sol.vectors.T @ M @ sol.vectors
    assert np.allclose(np.diag(G), 1.0, atol=1e-10)
    assert np.max(np.abs(G - np.diag(np.diag(G)))) <= 1e-8
    assert np.all(sol.residuals <= 1e-9)
    rq = np.einsum("ij,ij->j", sol.vectors, A @ sol.vectors) / np.einsum(
        "ij,ij->j", sol.vectors, M @ sol.vectors)
    assert np.max(np.abs(rq - sol.values)) <= 1e-10 * np.max(np.abs(sol.values))


def _example1_level0():
    cfg = load_config("example1")
    sp = build_space(cfg, 0)
    return cfg, assemble_bilinear(sp, external_potential(cfg)), assemble_mass(sp)


def test_sparse_matches_dense_oracle():
    cfg, A, M = _example1_level0()
    assert 200 <= A.shape[0] <= 1500
    sparse = solve_eigen(A, M, 6, sigma=default_sigma(cfg))
    dense = dense_oracle(A, M, 6)
    assert np.max(np.abs(sparse.values - dense.values) / np.abs(dense.values)) <= 1e-9
    # the degenerate pair spans the same subspace
    assert subspace_angle(sparse.vectors[:, 1:3], dense.vectors[:, 1:3], M) <= 1e-6
    assert abs(dense.values[1] - dense.values[2]) <= 1e-9 * abs(dense.values[1])


def test_lobpcg_matches_lanczos():
    cfg, A, M = _example1_level0()
    ref = solve_eigen(A, M, 1, sigma=default_sigma(cfg))
    lob = solve_eigen_lobpcg(A, M, 1, tol=1e-10, sigma=default_sigma(cfg))
    assert lob.values[0] == pytest.approx(ref.values[0], rel=1e-9)
    assert subspace_angle(lob.vectors, ref.vectors, M) <= 1e-5


def test_dense_trace_identity():
    sp = interval(2, 10)
    A, M = assemble_bilinear(sp), assemble_mass(sp)
    sol = dense_oracle(A, M)
    assert sol.k == A.shape[0]
    tr = np.trace(np.linalg.solve(M.toarray(), A.toarray()))
    assert np.sum(sol.values) == pytest.approx(tr, rel=1e-8)


def test_dense_identity_mass():
    A = np.diag([3.0, 1.0, 2.0]) + 0.1 * np.ones((3, 3))
    sol = dense_oracle(A, np.eye(3))
    assert np.allclose(sol.values, np.linalg.eigvalsh(A), atol=1e-12)


def test_dense_cap():
    import scipy.sparse as sps
    n = 2001
    with pytest.raises(SolverError):
        dense_oracle(sps.identity(n), sps.identity(n))


def test_repeatable():
    cfg, A, M = _example1_level0()
    a = solve_eigen(A, M, 4, sigma=default_sigma(cfg))
    b = solve_eigen(A, M, 4, sigma=default_sigma(cfg))
    assert np.array_equal(a.values, b.values) and np.array_equal(a.vectors, b.vectors)


def test_shift_on_eigenvalue_is_perturbed():
    sp = interval(2, 6)
    A, M = assemble_bilinear(sp), assemble_mass(sp)
    lam = dense_oracle(A, M, 1).values[0]
    sol = solve_eigen(A, M, 2, sigma=lam)
    assert sol.values[0] == pytest.approx(lam, rel=1e-10)


def test_refinement_lowers_example1_ground_state():
    """Observed monotonicity under nested refinement (checked at the coarse levels)."""
    cfg = load_config("example1")
    vals = []
    for level in range(3):
        sp = build_space(cfg, level)
        vals.append(solve_eigen(assemble_bilinear(sp, external_potential(cfg)),
                                assemble_mass(sp), 1, sigma=default_sigma(cfg)).values[0])
    assert np.all(np.diff(vals) < 0)

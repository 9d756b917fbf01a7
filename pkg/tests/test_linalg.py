import numpy as np
import pytest
import scipy.sparse as sp

from porofem.linalg import (
    SolverError,
    SparsityPattern,
    apply_dirichlet,
    block,
    csr,
    dump_matrix_market,
    replace_rows,
    solve,
    spmv,
)


def test_spmv_examples():
    x = np.arange(4.0)
    assert np.array_equal(spmv(csr(sp.eye(4)), x), x)
    assert np.array_equal(spmv(csr(sp.csr_matrix((4, 4))), x), np.zeros(4))
    rng = np.random.default_rng(0)
    d = rng.standard_normal((5, 5))
    v = rng.standard_normal(5)
    assert np.allclose(spmv(csr(d), v), d @ v, atol=1e-15, rtol=0)
    with pytest.raises(ValueError):
        spmv(csr(d), np.ones(3))


def test_csr_canonical():
    a = sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2))
    m = csr(a)
    assert m.nnz == 2 and m.has_sorted_indices and m[0, 1] == 3.0


def test_solve_examples():
    b = np.array([3.0, -1.0, 2.0])
    assert np.allclose(solve(sp.eye(3), b), b)
    assert np.allclose(solve(sp.diags([2.0, 3.0]), np.array([2.0, 3.0])), [1.0, 1.0])
    rng = np.random.default_rng(1)
    g = rng.standard_normal((50, 50))
    a = g.T @ g + np.eye(50)
    rhs = rng.standard_normal(50)
    ref = np.linalg.solve(a, rhs)
    for method in ("direct", "gmres"):
        x = solve(sp.csr_matrix(a), rhs, method=method, tol=1e-12)
        assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_solve_saddle_point():
    # [[I, B^T], [B, 0]] needs pivoting away from the zero diagonal
    rng = np.random.default_rng(2)
    B = sp.csr_matrix(rng.standard_normal((3, 10)))
    K = block([[sp.eye(10), B.T], [B, None]])
    b = rng.standard_normal(13)
    x = solve(K, b)
    assert np.linalg.norm(K @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_solve_errors():
    with pytest.raises(SolverError) as exc:
        solve(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), np.array([1.0, 0.0]))
    assert "residual" in str(exc.value)
    with pytest.raises(ValueError):
        solve(sp.eye(2), np.array([np.nan, 1.0]))
    with pytest.raises(ValueError):
        solve(sp.eye(2), np.ones(3))
    with pytest.raises(ValueError):
        solve(sp.eye(2), np.ones(2), method="cg")
    assert np.array_equal(solve(sp.eye(2), np.zeros(2)), np.zeros(2))


def test_solve_deterministic():
    rng = np.random.default_rng(3)
    a = sp.random(40, 40, density=0.2, random_state=4) + 10 * sp.eye(40)
    b = rng.standard_normal(40)
    assert np.array_equal(solve(a, b), solve(a, b))


def test_pattern_accumulates_duplicates():
    pat = SparsityPattern([0, 1, 0, 1], [0, 1, 0, 0], (2, 2))
    m = pat.matrix([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(m.toarray(), [[4.0, 0.0], [4.0, 2.0]])
    assert pat.nnz == 3


def test_block_placement():
    a, b = sp.eye(2), sp.csr_matrix(np.ones((2, 3)))
    m = block([[a, b], [None, sp.eye(3)]]).toarray()
    assert np.array_equal(m[:2, 2:], np.ones((2, 3))) and np.array_equal(m[2:, :2], np.zeros((3, 2)))


def test_dirichlet_elimination_and_row_replacement():
    a = csr(np.array([[4.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 4.0]]))
    m, r = apply_dirichlet(a, np.array([1.0, 2.0, 3.0]), [0], [5.0])
    x = np.linalg.solve(m.toarray(), r)
    assert np.isclose(x[0], 5.0)
    assert np.allclose(m.toarray(), m.toarray().T)
    full = np.linalg.solve(a.toarray()[1:, 1:], np.array([2.0, 3.0]) - a.toarray()[1:, 0] * 5.0)
    assert np.allclose(x[1:], full)
    new = sp.csr_matrix(np.array([[0.0, 0.0, 9.0]]))
    assert np.array_equal(replace_rows(a, [1], new).toarray()[1], [0.0, 0.0, 9.0])


def test_matrix_market(tmp_path):
    p = tmp_path / "a.mtx"
    dump_matrix_market(p, sp.eye(3))
    assert p.read_text().startswith("%%MatrixMarket")

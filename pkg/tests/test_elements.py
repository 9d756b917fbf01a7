import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from porofem.elements import P1, P2, affine_map, gauss_line, quadrature_rule, shape_eval
from porofem.mesh import build_uniform_mesh, from_arrays


def test_p1_at_origin():
    v, g = shape_eval(P1, [[0.0, 0.0]])
    assert np.allclose(v[0], [1, 0, 0])
    assert np.allclose(g[0], [[-1, -1], [1, 0], [0, 1]])


def test_p2_kronecker_and_centroid():
    v, _ = shape_eval(P2, P2.nodes)
    assert np.allclose(v, np.eye(6), atol=1e-15)
    v, _ = shape_eval(P2, [[1 / 3, 1 / 3]])
    assert np.allclose(v[0], [-1 / 9] * 3 + [4 / 9] * 3)


@given(st.floats(0, 1), st.floats(0, 1))
def test_partition_of_unity(a, b):
    pt = [[a * (1 - b), b]]
    for el in (P1, P2):
        v, g = shape_eval(el, pt)
        assert abs(v.sum() - 1) < 1e-13
        assert np.allclose(g.sum(axis=1), 0, atol=1e-12)


def _monomial(m, n):
    return math.factorial(m) * math.factorial(n) / math.factorial(m + n + 2)


@pytest.mark.parametrize("deg", [1, 2, 3, 4, 5, 6])
def test_quadrature_exactness(deg):
    q = quadrature_rule(deg)
    assert (q.weights > 0).all() and abs(q.weights.sum() - 0.5) < 1e-15
    for m in range(deg + 1):
        for n in range(deg + 1 - m):
            got = np.sum(q.weights * q.points[:, 0] ** m * q.points[:, 1] ** n)
            assert abs(got - _monomial(m, n)) < 1e-15


def test_quadrature_examples():
    q1 = quadrature_rule(1)
    assert np.allclose(q1.points, [[1 / 3, 1 / 3]]) and np.allclose(q1.weights, [0.5])
    q2 = quadrature_rule(2)
    assert np.isclose(np.sum(q2.weights * q2.points[:, 0] * q2.points[:, 1]), 1 / 24)
    q5 = quadrature_rule(5)
    assert len(q5.weights) == 7 and np.isclose(np.sum(q5.weights * q5.points[:, 0] ** 4), 1 / 30)
    assert len(quadrature_rule(6).weights) == 12
    for bad in (0, 7):
        with pytest.raises(ValueError):
            quadrature_rule(bad)


def test_gauss_line():
    x, w = gauss_line(3)
    assert np.isclose(w.sum(), 1.0)
    assert np.isclose(np.sum(w * x**5), 1 / 6)


def test_affine_map_examples():
    ref = from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], tag_boundary=False)
    a = affine_map(ref, 0)
    assert np.allclose(a.jac, np.eye(2)) and np.isclose(a.det, 1.0)
    m = build_uniform_mesh(3)
    a = affine_map(m)
    assert np.allclose(a.det, 1 / 9)
    assert np.allclose(a(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])), m.vertices[m.triangles])


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
@settings(max_examples=50)
def test_random_triangle_area_and_gradients(c):
    p = np.array(c).reshape(3, 2)
    det = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
    if abs(det) < 1e-3:
        return
    if det < 0:
        p = p[[0, 2, 1]]
    m = from_arrays(p, [[0, 1, 2]], tag_boundary=False)
    a = affine_map(m, 0)
    area = abs(det) / 2
    assert abs(quadrature_rule(5).weights.sum() * a.det - area) <= 1e-14 * max(1.0, area)
    _, g = shape_eval(P1, [[0.2, 0.3]])
    phys = g[0] @ a.inv_t.T
    assert np.allclose(phys.sum(axis=0), 0, atol=1e-12)

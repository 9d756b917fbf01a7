import numpy as np
import pytest

from porofem.assembly import ModelParams, assemble_mass, assemble_newton_jacobian, strain
from porofem.mesh import BoundaryTag as G
from porofem.mesh import build_uniform_mesh
from porofem.mms import test1 as mk_test1
from porofem.mms import test2 as mk_test2
from porofem.spaces import (
    SpaceKind,
    build_dof_map,
    cell_quadrature,
    dirichlet_set,
    eval_scalar,
    eval_vector,
    interpolate,
    merge_constraints,
    rigid_motion_basis,
)


@pytest.mark.parametrize("kind, count", [(SpaceKind.SCALAR_P1, 16), (SpaceKind.SCALAR_P2, 49), (SpaceKind.VECTOR_P2, 98)])
def test_dof_counts(kind, count):
    assert build_dof_map(build_uniform_mesh(3), kind).ndofs == count


def test_shared_dofs_agree():
    dm = build_dof_map(build_uniform_mesh(3), SpaceKind.SCALAR_P2)
    cd = dm.cell_dofs
    assert sorted(np.unique(cd)) == list(range(dm.ndofs))
    # a node's coordinates are the same from every triangle that references it
    coords = dm.node_coords[cd]
    m = dm.mesh
    tri = m.vertices[m.triangles]
    mids = 0.5 * (tri[:, [1, 2, 0]] + tri[:, [2, 0, 1]])
    assert np.allclose(coords[:, :3], tri) and np.allclose(coords[:, 3:], mids)


def test_vector_interleaving():
    dm = build_dof_map(build_uniform_mesh(2), SpaceKind.VECTOR_P2)
    assert np.all(dm.cell_dofs[:, 0::2] % 2 == 0)
    assert np.all(dm.cell_dofs[:, 1::2] == dm.cell_dofs[:, 0::2] + 1)


def test_dirichlet_test1_u1():
    sc = mk_test1()
    dm = build_dof_map(build_uniform_mesh(1), SpaceKind.VECTOR_P2)
    cs = dirichlet_set(dm, (G.GAMMA1, G.GAMMA3), 0, sc.u_exact)
    x = cs.coords
    assert np.allclose(np.sort(np.unique(x[:, 0])), [0.0, 1.0])
    assert len(cs) == 6 and np.all(cs.dofs % 2 == 0)
    assert np.allclose(cs.values(1.0), 0.5 * x[:, 0] ** 2)


def test_dirichlet_pressure():
    m = build_uniform_mesh(3)
    dm = build_dof_map(m, SpaceKind.SCALAR_P1)
    cs = dirichlet_set(dm, tuple(G), None, mk_test1().p_exact)
    assert len(cs) == 12 and np.allclose(cs.values(0.0), 0.0)
    cs2 = dirichlet_set(dm, tuple(G), None, mk_test2().p_exact)
    origin = np.flatnonzero(np.all(cs2.coords == 0.0, axis=1))
    assert cs2.values(0.0)[origin] == 0.0


def test_merge_constraints_unique():
    sc = mk_test1()
    dm = build_dof_map(build_uniform_mesh(2), SpaceKind.VECTOR_P2)
    a = dirichlet_set(dm, (G.GAMMA1, G.GAMMA3), 0, sc.u_exact)
    b = dirichlet_set(dm, (G.GAMMA2, G.GAMMA4), 1, sc.u_exact)
    dofs, vals = merge_constraints(a, b, a)
    assert len(np.unique(dofs)) == len(dofs) == len(a) + len(b)
    assert np.all(np.isfinite(vals(0.5)))


def test_interpolate_quadratic_exact():
    sc = mk_test1()
    dm = build_dof_map(build_uniform_mesh(3), SpaceKind.VECTOR_P2)
    c = interpolate(dm, sc.u_exact, 1.0)
    vals, grads = eval_vector(dm, c, 6)
    x = cell_quadrature(dm, 6).x
    assert np.abs(vals - sc.u_exact(x, 1.0)).max() <= 1e-13
    assert np.abs(grads - sc.grad_u_exact(x, 1.0)).max() <= 1e-12
    ones = interpolate(build_dof_map(dm.mesh, SpaceKind.SCALAR_P1), lambda x, t: 1.0)
    assert np.all(ones == 1.0)


def test_interpolation_rate_p1():
    sc = mk_test1()
    errs = []
    for n in (8, 16):
        dm = build_dof_map(build_uniform_mesh(n), SpaceKind.SCALAR_P1)
        c = interpolate(dm, sc.p_exact, 1.0)
        v, _ = eval_scalar(dm, c, 6)
        q = cell_quadrature(dm, 6)
        errs.append(np.sqrt(np.sum(q.dx * (v - sc.p_exact(q.x, 1.0)) ** 2)))
    assert 3.6 <= errs[0] / errs[1] <= 4.4


def test_rigid_motions():
    dm = build_dof_map(build_uniform_mesh(3), SpaceKind.VECTOR_P2)
    rm = rigid_motion_basis(dm).fields
    for r in rm:
        _, F = eval_vector(dm, r)
        assert np.abs(strain(F)).max() <= 1e-14
        assert np.abs(np.trace(F, axis1=-2, axis2=-1)).max() <= 1e-14
    gram = rm @ (assemble_mass(dm) @ rm.T)
    assert np.linalg.det(gram) > 0
    with pytest.raises(ValueError):
        rigid_motion_basis(build_dof_map(dm.mesh, SpaceKind.SCALAR_P1))


def test_elasticity_kernel_is_rigid_motions():
    dm = build_dof_map(build_uniform_mesh(2), SpaceKind.VECTOR_P2)
    A = assemble_newton_jacobian(dm, np.zeros(dm.ndofs), ModelParams(lam=1.0, mu=1.0, alpha=0.0, c0=1.0))
    rm = rigid_motion_basis(dm).fields
    assert np.abs(A @ rm.T).max() <= 1e-10 * abs(A).max()
    ev = np.linalg.eigvalsh(A.toarray())
    assert np.sum(np.abs(ev) < 1e-10 * ev.max()) == 3

"""Finite element assembly for the reformulated nonlinear poroelasticity system.

Gradients follow ``grad_u[i, j] = d u_i / d x_j``.  The nonlinear stress
remainder is

    N(grad u) = mu eps(u) + mu grad_u^T grad_u + lam |grad_u|_F^2 I,

i.e. the Green-strain stress with the linear ``lam div(u) I`` part removed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .elements import gauss_line
from .linalg import SparsityPattern
from .mesh import BoundaryTag, facet_normals
from .spaces import DofMap, SpaceKind, cell_quadrature, eval_vector


@dataclass(frozen=True)
class ModelParams:
    """Physical constants; ``K`` is a scalar multiple of I or a 2x2 SPD matrix."""

    lam: float
    mu: float
    alpha: float
    c0: float
    K: object = 1.0
    mu_f: float = 1.0
    rho_f: float = 1.0
    g: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("lam", "mu", "c0", "mu_f"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        k = self.K_matrix
        if not np.allclose(k, k.T) or np.linalg.eigvalsh(0.5 * (k + k.T)).min() <= 0:
            raise ValueError(f"permeability must be symmetric positive definite, got {self.K!r}")

    @property
    def K_matrix(self) -> np.ndarray:
        k = np.asarray(self.K, dtype=float)
        return k * np.eye(2) if k.ndim == 0 else k.reshape(2, 2)

    @property
    def _den(self) -> float:
        return self.alpha**2 + self.lam * self.c0

    @property
    def kappa1(self) -> float:
        return self.alpha / self._den

    @property
    def kappa2(self) -> float:
        return self.lam / self._den

    @property
    def kappa3(self) -> float:
        return self.c0 / self._den

    def replace(self, **changes) -> "ModelParams":
        import dataclasses

        return dataclasses.replace(self, **changes)


def strain(grad_u: np.ndarray) -> np.ndarray:
    return 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))


def nonlinear_stress(grad_u, mu: float, lam: float) -> np.ndarray:
    """N(grad u), vectorized over leading axes of a (..., 2, 2) array."""
    F = np.asarray(grad_u, dtype=float)
    FtF = np.swapaxes(F, -1, -2) @ F
    frob2 = np.einsum("...ij,...ij->...", F, F)
    return mu * strain(F) + mu * FtF + lam * frob2[..., None, None] * np.eye(2)


def nonlinear_stress_derivative(grad_u, grad_w, mu: float, lam: float) -> np.ndarray:
    """Directional derivative of N at ``grad_u`` in the direction ``grad_w``."""
    F = np.asarray(grad_u, dtype=float)
    G = np.asarray(grad_w, dtype=float)
    Ft, Gt = np.swapaxes(F, -1, -2), np.swapaxes(G, -1, -2)
    fg = np.einsum("...ij,...ij->...", F, G)
    return mu * strain(G) + mu * (Gt @ F + Ft @ G) + 2.0 * lam * fg[..., None, None] * np.eye(2)


# -- sparsity patterns -------------------------------------------------------


def _pattern(row_dm: DofMap, col_dm: DofMap) -> SparsityPattern:
    key = ("pattern", col_dm.kind)
    if key not in row_dm._cache:
        r, c = row_dm.cell_dofs, col_dm.cell_dofs
        rows = np.broadcast_to(r[:, :, None], (len(r), r.shape[1], c.shape[1]))
        cols = np.broadcast_to(c[:, None, :], (len(r), r.shape[1], c.shape[1]))
        row_dm._cache[key] = SparsityPattern(rows, cols, (row_dm.ndofs, col_dm.ndofs))
    return row_dm._cache[key]


def _scatter(dm: DofMap, local: np.ndarray) -> np.ndarray:
    return np.bincount(dm.cell_dofs.ravel(), weights=local.ravel(), minlength=dm.ndofs)


# -- nonlinear elasticity block ----------------------------------------------


def assemble_nonlinear_residual(dm: DofMap, u, params: ModelParams, degree: int = 5, test: str = "strain") -> np.ndarray:
    """Entries ``(N(grad u_h), eps(v_i))``; ``test="gradient"`` pairs with grad v_i instead."""
    q = cell_quadrature(dm, degree)
    _, F = eval_vector(dm, u, degree)
    N = nonlinear_stress(F, params.mu, params.lam)
    if test == "strain":
        N = strain(N)  # N : eps(v) == sym(N) : grad(v)
    elif test != "gradient":
        raise ValueError(f"unknown test pairing {test!r}")
    local = np.einsum("kq,kqcj,kqnj->knc", q.dx, N, q.dphi)
    return _scatter(dm, local)


def assemble_newton_jacobian(dm: DofMap, u, params: ModelParams, degree: int = 5) -> sp.csr_matrix:
    """Exact derivative of :func:`assemble_nonlinear_residual` with respect to ``u``.

    With trial ``e_d grad(psi_m)`` and test ``e_c grad(psi_n)`` the entry splits
    into a part independent of ``u`` (the linear strain term, cached) and three
    products of ``F = grad u`` with basis gradients.
    """
    q = cell_quadrature(dm, degree)
    _, F = eval_vector(dm, u, degree)
    mu, lam = params.mu, params.lam
    g = q.dphi  # (nt, nq, nloc, 2)
    nt, nq, nloc, _ = g.shape
    key = ("jac-linear", degree)
    if key not in dm._cache:
        w = q.dx
        gg = np.einsum("kq,kqmj,kqnj->knm", w, g, g)
        lin = np.zeros((nt, nloc, 2, nloc, 2))
        lin[:, :, 0, :, 0] = gg
        lin[:, :, 1, :, 1] = gg
        lin += np.einsum("kq,kqmc,kqnd->kncmd", w, g, g)
        dm._cache[key] = 0.5 * lin
    # batched matmuls over cells; einsum would be several times slower here
    Fg = np.matmul(g, F.swapaxes(-1, -2))  # (F grad psi_m)_d
    wg = q.dx[:, :, None, None] * g
    wgT = wg.reshape(nt, nq, 2 * nloc).swapaxes(1, 2)
    wgg = np.matmul(wg, g.swapaxes(-1, -2)).reshape(nt, nq, nloc * nloc)
    FgT = Fg.reshape(nt, nq, 2 * nloc).swapaxes(1, 2)
    t1 = np.matmul(FgT, wg.reshape(nt, nq, 2 * nloc)).reshape(nt, nloc, 2, nloc, 2).transpose(0, 1, 4, 3, 2)
    t2 = np.matmul(wgg.swapaxes(1, 2), F.reshape(nt, nq, 4)).reshape(nt, nloc, nloc, 2, 2).transpose(0, 1, 4, 2, 3)
    t3 = np.matmul(wgT, Fg.reshape(nt, nq, 2 * nloc)).reshape(nt, nloc, 2, nloc, 2)
    local = mu * (dm._cache[key] + t1 + t2) + 2.0 * lam * t3
    return _pattern(dm, dm).matrix(local.reshape(nt, 2 * nloc, 2 * nloc))


# -- linear blocks -------------------------------------------------------------


def assemble_div(vdm: DofMap, sdm: DofMap, degree: int = 5) -> sp.csr_matrix:
    """``B[i, j] = (div phi_j, psi_i)`` with rows in the scalar space."""
    if vdm.kind is not SpaceKind.VECTOR_P2 or sdm.ncomp != 1:
        raise ValueError("assemble_div needs a vector and a scalar space")
    if vdm.mesh is not sdm.mesh:
        raise ValueError("spaces live on different meshes")
    qv = cell_quadrature(vdm, degree)
    qs = cell_quadrature(sdm, degree)
    local = np.einsum("kq,qi,kqmd->kimd", qv.dx, qs.phi, qv.dphi)
    nt = len(local)
    return _pattern(sdm, vdm).matrix(local.reshape(nt, sdm.cell_dofs.shape[1], -1))


def assemble_mass(dm: DofMap, coeff: float = 1.0, degree: int = 5) -> sp.csr_matrix:
    """``coeff (phi_j, phi_i)``; for vector spaces the component-wise mass."""
    q = cell_quadrature(dm, degree)
    local = coeff * np.einsum("kq,qi,qj->kij", q.dx, q.phi, q.phi)
    if dm.ncomp == 2:
        nt, n, _ = local.shape
        full = np.zeros((nt, n, 2, n, 2))
        full[:, :, 0, :, 0] = local
        full[:, :, 1, :, 1] = local
        local = full.reshape(nt, 2 * n, 2 * n)
    return _pattern(dm, dm).matrix(local)


def assemble_diffusion(dm: DofMap, params: ModelParams, degree: int = 5) -> sp.csr_matrix:
    """``(1/mu_f) (K grad phi_j, grad phi_i)``."""
    if dm.ncomp != 1:
        raise ValueError("diffusion is assembled on a scalar space")
    K = params.K_matrix
    if not np.allclose(K, K.T) or np.linalg.eigvalsh(K).min() <= 0:
        raise ValueError("permeability must be symmetric positive definite")
    q = cell_quadrature(dm, degree)
    local = np.einsum("kq,kqia,ab,kqjb->kij", q.dx, q.dphi, K, q.dphi, optimize=True) / params.mu_f
    return _pattern(dm, dm).matrix(local)


def assemble_source(dm: DofMap, fn: Callable, t: float, degree: int = 5) -> np.ndarray:
    """``(f, phi_i)`` for a scalar or vector ``fn(x, t)``; ``x`` has shape (..., 2)."""
    q = cell_quadrature(dm, degree)
    vals = np.asarray(fn(q.x, t), dtype=float)
    if dm.ncomp == 1:
        vals = np.broadcast_to(vals, q.dx.shape)
        local = np.einsum("kq,kq,qn->kn", q.dx, vals, q.phi)
    else:
        vals = np.broadcast_to(vals, q.dx.shape + (2,))
        local = np.einsum("kq,kqc,qn->knc", q.dx, vals, q.phi)
    return _scatter(dm, local)


# -- boundary terms ------------------------------------------------------------


@dataclass(frozen=True)
class EdgeQuadrature:
    x: np.ndarray  # (nb, nq, 2)
    ds: np.ndarray  # (nb, nq)
    normal: np.ndarray  # (nb, 2)
    tags: np.ndarray  # (nb,)
    nodes: np.ndarray  # (nb, 2 or 3) scalar node ids
    phi: np.ndarray  # (nq, 2 or 3)


def edge_quadrature(dm: DofMap, npts: int = 3) -> EdgeQuadrature:
    key = ("edge_quad", npts)
    if key not in dm._cache:
        m = dm.mesh
        s, w = gauss_line(npts)
        be = m.boundary_edges
        a = m.vertices[m.edges[be, 0]]
        b = m.vertices[m.edges[be, 1]]
        length = np.linalg.norm(b - a, axis=1)
        x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        ds = length[:, None] * w[None, :]
        if dm.element.degree == 1:
            nodes = m.edges[be]
            phi = np.column_stack([1 - s, s])
        else:
            nodes = np.column_stack([m.edges[be], m.num_vertices + be])
            phi = np.column_stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
        dm._cache[key] = EdgeQuadrature(x, ds, facet_normals(m), m.boundary_tags, nodes, phi)
    return dm._cache[key]


def assemble_boundary_scalar(dm: DofMap, fn: Callable, t: float, tags) -> np.ndarray:
    """``<g, psi_i>`` over the tagged edges; ``fn(x, t, n)`` with outward normal n."""
    eq = edge_quadrature(dm)
    sel = np.isin(eq.tags, [int(tg) for tg in tags])
    out = np.zeros(dm.ndofs)
    if not sel.any():
        return out
    n = np.broadcast_to(eq.normal[sel][:, None, :], eq.x[sel].shape)
    vals = np.broadcast_to(np.asarray(fn(eq.x[sel], t, n), dtype=float), eq.ds[sel].shape)
    local = np.einsum("bq,bq,qn->bn", eq.ds[sel], vals, eq.phi)
    np.add.at(out, eq.nodes[sel].ravel(), local.ravel())
    return out


def assemble_boundary_vector(dm: DofMap, fn: Callable, t: float, parts) -> np.ndarray:
    """``<f1, v_i>`` where ``parts`` maps tag -> components carrying traction."""
    eq = edge_quadrature(dm)
    out = np.zeros(dm.ndofs)
    for tag, comps in parts.items():
        comps = list(comps)
        sel = eq.tags == int(tag)
        if not comps or not sel.any():
            continue
        n = np.broadcast_to(eq.normal[sel][:, None, :], eq.x[sel].shape)
        vals = np.broadcast_to(np.asarray(fn(eq.x[sel], t, n), dtype=float), eq.ds[sel].shape + (2,))
        local = np.einsum("bq,bqc,qn->bnc", eq.ds[sel], vals, eq.phi)
        for c in comps:
            np.add.at(out, 2 * eq.nodes[sel].ravel() + c, local[:, :, c].ravel())
    return out


ALL_TAGS = tuple(BoundaryTag)


@dataclass
class LoadData:
    """Data functions of ``(x, t)``; boundary ones also receive the normal.

    ``traction_parts`` maps each tag to the displacement components on which
    the traction ``f1`` is applied; ``flux_tags`` lists where ``phi1`` acts.
    """

    f: Callable | None = None
    f1: Callable | None = None
    phi: Callable | None = None
    phi1: Callable | None = None
    traction_parts: dict = field(default_factory=lambda: {t: (0, 1) for t in ALL_TAGS})
    flux_tags: tuple = ALL_TAGS


def assemble_loads(vdm: DofMap, sdm: DofMap, params: ModelParams, data: LoadData, t: float):
    """Right-hand sides ``(f, v) + <f1, v>`` and ``(phi, psi) + <phi1, psi> + (1/mu_f)(K rho_f g, grad psi)``."""
    rhs_u = np.zeros(vdm.ndofs)
    rhs_flow = np.zeros(sdm.ndofs)
    if data.f is not None:
        rhs_u += assemble_source(vdm, data.f, t)
    if data.f1 is not None:
        rhs_u += assemble_boundary_vector(vdm, data.f1, t, data.traction_parts)
    if data.phi is not None:
        rhs_flow += assemble_source(sdm, data.phi, t)
    if data.phi1 is not None and len(data.flux_tags):
        rhs_flow += assemble_boundary_scalar(sdm, data.phi1, t, data.flux_tags)
    grav = params.rho_f * np.asarray(params.g, dtype=float)
    if np.any(grav != 0):
        q = cell_quadrature(sdm)
        kg = params.K_matrix @ grav / params.mu_f
        local = np.einsum("kq,kqni,i->kn", q.dx, q.dphi, kg)
        rhs_flow += _scatter(sdm, local)
    return rhs_u, rhs_flow


def assemble_rigid_motion_rows(vdm: DofMap, rm_fields: np.ndarray) -> np.ndarray:
    """Rows ``(phi_j, r_k)`` so that ``rows @ v = (v_h, r_k)``."""
    key = "vector_mass"
    if key not in vdm._cache:
        vdm._cache[key] = assemble_mass(vdm)
    return np.asarray(vdm._cache[key] @ rm_fields.T).T


def l2_project(dm: DofMap, values_at_quad: np.ndarray, degree: int = 5) -> np.ndarray:
    """L2 projection into a scalar space of a field given at quadrature points."""
    from .linalg import solve

    q = cell_quadrature(dm, degree)
    rhs = _scatter(dm, np.einsum("kq,kq,qn->kn", q.dx, values_at_quad, q.phi))
    key = ("mass", degree)
    if key not in dm._cache:
        dm._cache[key] = assemble_mass(dm, 1.0, degree)
    return solve(dm._cache[key], rhs)

"""Backward Euler time stepping in the (u, xi, eta) variables with Newton.

``theta = 1`` solves displacement, pseudo-pressure and fluid content
monolithically each step; ``theta = 0`` first solves the nonlinear
Stokes-like block with the previous fluid content frozen and then a
diffusion problem for the new fluid content.

Prescribed pressure on the boundary enters through the flux potential
``chi = kappa1 xi + kappa2 eta``: the monolithic solve replaces the flow
rows of constrained nodes by ``kappa1 xi + kappa2 eta = p_D``, the
decoupled flow step solves for ``chi`` with ``chi = p_D`` and recovers
``eta = (chi - kappa1 xi) / kappa2``.  Without displacement data the
rigid motions are removed with three Lagrange multipliers.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from .linalg import SolverError, SparsityPattern, apply_dirichlet, block, csr, solve
from .mesh import Mesh
from .mms import Scenario
from .spaces import (
    SpaceKind,
    build_dof_map,
    dirichlet_set,
    eval_vector,
    interpolate,
    merge_constraints,
    rigid_motion_basis,
)

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass
class SchemeConfig:
    theta: int = 1
    dt: float = 0.01
    T: float = 1.0
    newton_tol: float = 1e-10
    newton_atol: float = 1e-14
    newton_max_iter: int = 20
    linear_tol: float = 1e-10
    dt_h2_constant: float = 1.0

    def __post_init__(self):
        if self.theta not in (0, 1):
            raise ValueError(f"theta must be 0 or 1, got {self.theta!r}")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.T < 0:
            raise ValueError("final time must be non-negative")

    @property
    def num_steps(self) -> int:
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-12 * max(self.T, 1.0):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        return int(n)


@dataclass
class SystemState:
    """Coefficients at one time level.

    ``p`` and ``q`` follow the scheme's update: ``p = kappa1 xi + kappa2
    eta^{n+theta}`` and ``q = kappa1 eta - kappa3 xi``; ``chi`` is the flux
    potential ``kappa1 xi + kappa2 eta`` (equal to ``p`` when ``theta = 1``).
    """

    t: float
    u: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    chi: np.ndarray
    step: int = 0
    newton_iterations: int = 0
    newton_residuals: list = field(default_factory=list)


@dataclass
class NewtonInfo:
    iterations: int
    residuals: list


class Discretization:
    """Spaces, constant matrices and boundary data for one mesh and scenario."""

    def __init__(self, mesh: Mesh, scenario: Scenario, params: asm.ModelParams | None = None):
        self.mesh = mesh
        self.scenario = scenario
        self.params = params if params is not None else scenario.params
        self.V = build_dof_map(mesh, SpaceKind.VECTOR_P2)
        self.Q = build_dof_map(mesh, SpaceKind.SCALAR_P1)
        self.nV, self.nQ = self.V.ndofs, self.Q.ndofs
        prm = self.params
        self.M = asm.assemble_mass(self.Q)
        self.S = asm.assemble_diffusion(self.Q, prm)
        self.B = asm.assemble_div(self.V, self.Q)
        self.Bt = csr(self.B.T)

        sc = scenario
        u_sets = [dirichlet_set(self.V, tags, comp, sc.u_exact) for comp, tags in sc.u_dirichlet]
        self.u_dofs, self.u_values = merge_constraints(*u_sets)
        if sc.p_dirichlet_tags:
            pset = dirichlet_set(self.Q, sc.p_dirichlet_tags, None, sc.p_exact)
            self.p_dofs, self.p_values = pset.dofs, pset.values
        else:
            self.p_dofs, self.p_values = np.zeros(0, dtype=np.int64), (lambda t: np.zeros(0))
        self.use_rm = len(self.u_dofs) == 0
        if self.use_rm:
            self.rm = rigid_motion_basis(self.V).fields
            self.R = sp.csr_matrix(asm.assemble_rigid_motion_rows(self.V, self.rm))
        else:
            self.rm = None
            self.R = sp.csr_matrix((0, self.nV))
        self.nrm = self.R.shape[0]
        self.loads = asm.LoadData(
            f=sc.f,
            f1=sc.f1,
            phi=sc.phi,
            phi1=sc.phi1,
            traction_parts=sc.traction_parts,
            flux_tags=sc.flux_tags,
        )

    def loads_at(self, t: float):
        return asm.assemble_loads(self.V, self.Q, self.params, self.loads, t)

    def div_projection(self, u: np.ndarray) -> np.ndarray:
        """L2 projection of div u_h into P1."""
        _, F = eval_vector(self.V, u)
        return asm.l2_project(self.Q, np.trace(F, axis1=-2, axis2=-1))


def initialize(disc: Discretization) -> SystemState:
    prm, sc = disc.params, disc.scenario
    u = interpolate(disc.V, lambda x, t: sc.initial_u(x), 0.0)
    p = interpolate(disc.Q, lambda x, t: sc.initial_p(x), 0.0)
    q = disc.div_projection(u)
    eta = prm.c0 * p + prm.alpha * q
    xi = prm.alpha * p - prm.lam * q
    return SystemState(0.0, u, xi, eta, p.copy(), q, p.copy())


# -- Newton --------------------------------------------------------------------


def _newton(residual: Callable, jacobian: Callable, x0: np.ndarray, cfg: SchemeConfig):
    x = x0.copy()

    r = residual(x)
    norms = [float(np.linalg.norm(r))]
    target = max(cfg.newton_tol * norms[0], cfg.newton_atol)
    k = 0
    while norms[-1] > target:
        if k >= cfg.newton_max_iter:
            raise StepError(f"Newton did not converge in {k} iterations", norms[-1])
        try:
            dx = solve(jacobian(x), -r, tol=cfg.linear_tol)
        except SolverError:
            raise
        x += dx
        k += 1
        r = residual(x)
        norms.append(float(np.linalg.norm(r)))
        if not np.isfinite(norms[-1]):
            raise StepError("Newton iterate diverged", norms[-1])
        # stagnation at round-off: increment negligible relative to the iterate
        if norms[-1] > target and np.linalg.norm(dx) <= 1e-14 * max(np.linalg.norm(x), 1e-300):
            break
    return x, NewtonInfo(k, norms)


def _eliminate(J: sp.csr_matrix, rows: np.ndarray) -> sp.csr_matrix:
    """Zero the listed rows and columns and put ones on the diagonal."""
    if len(rows) == 0:
        return J
    keep = np.ones(J.shape[0])
    keep[rows] = 0.0
    d = sp.diags(keep)
    return csr(d @ J @ d + sp.diags(1.0 - keep))


def _replace_rows(J: sp.csr_matrix, rows: np.ndarray, new_rows: sp.csr_matrix) -> sp.csr_matrix:
    if len(rows) == 0:
        return J
    keep = np.ones(J.shape[0])
    keep[rows] = 0.0
    sel = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(J.shape[0], len(rows)))
    return csr(sp.diags(keep) @ J + sel @ new_rows)


class _JacobianTemplate:
    """Monolithic Newton matrix on a fixed pattern.

    Everything except the nonlinear elasticity block is assembled once,
    including boundary-row elimination; per iteration only the values of
    that block are scattered in.
    """

    def __init__(self, static: sp.csr_matrix, jn_pattern, keep: np.ndarray):
        st = static.tocoo()
        rows = np.concatenate([st.row, jn_pattern[0][keep]])
        cols = np.concatenate([st.col, jn_pattern[1][keep]])
        self.pattern = SparsityPattern(rows, cols, static.shape)
        self.static = st.data
        self.keep = keep

    def __call__(self, JN: sp.csr_matrix) -> sp.csr_matrix:
        return self.pattern.matrix(np.concatenate([self.static, JN.data[self.keep]]))


def _jacobian_template(disc: Discretization, cfg: SchemeConfig) -> _JacobianTemplate:
    key = (cfg.theta, cfg.dt)
    cache = disc.__dict__.setdefault("_jac_templates", {})
    if key in cache:
        return cache[key]
    prm = disc.params
    k1, k2, k3 = prm.kappa1, prm.kappa2, prm.kappa3
    nV, nQ, nrm = disc.nV, disc.nQ, disc.nrm
    M, S, B, Bt, R = disc.M, disc.S, disc.B, disc.Bt, disc.R
    coupled = cfg.theta == 1
    udofs = disc.u_dofs
    pdofs = disc.p_dofs if coupled else np.zeros(0, dtype=np.int64)
    zero = sp.csr_matrix((nV, nV))
    Rt = R.T if nrm else None
    if coupled:
        rows = [
            [zero, -Bt, None],
            [B, k3 * M, -k1 * M],
            [None, k1 * S, M / cfg.dt + k2 * S],
        ]
        if nrm:
            rows[0].append(Rt)
            rows[1].append(None)
            rows[2].append(None)
            rows.append([R, None, None, None])
    else:
        rows = [[zero, -Bt], [B, k3 * M]]
        if nrm:
            rows[0].append(Rt)
            rows[1].append(None)
            rows.append([R, None, None])
    J = _eliminate(block(rows), udofs)
    if len(pdofs):
        n = J.shape[0]
        cols = np.concatenate([nV + pdofs, nV + nQ + pdofs])
        vals = np.concatenate([np.full(len(pdofs), k1), np.full(len(pdofs), k2)])
        rr = np.tile(np.arange(len(pdofs)), 2)
        new = sp.csr_matrix((vals, (rr, cols)), shape=(len(pdofs), n))
        J = _replace_rows(J, nV + nQ + pdofs, new)
    pat = asm.assemble_newton_jacobian(disc.V, np.zeros(nV), prm)
    jr = np.repeat(np.arange(nV), np.diff(pat.indptr))
    jc = pat.indices.astype(np.int64)
    fixed = np.zeros(nV, dtype=bool)
    fixed[udofs] = True
    keep = ~(fixed[jr] | fixed[jc])
    cache[key] = _JacobianTemplate(J, (jr, jc), keep)
    return cache[key]


def newton_solve(disc: Discretization, state: SystemState, cfg: SchemeConfig):
    """Nonlinear solve of one step.

    ``theta = 1``: unknowns (u, xi, eta[, multipliers]), returns all three.
    ``theta = 0``: unknowns (u, xi[, multipliers]) with ``eta^n`` frozen,
    returns (u, xi, None).
    """
    prm = disc.params
    k1, k2, k3 = prm.kappa1, prm.kappa2, prm.kappa3
    nV, nQ, nrm = disc.nV, disc.nQ, disc.nrm
    t1 = state.t + cfg.dt
    rhs_u, rhs_flow = disc.loads_at(t1)
    M, S, B, Bt, R = disc.M, disc.S, disc.B, disc.Bt, disc.R
    Meta_n = M @ state.eta
    coupled = cfg.theta == 1

    iu = slice(0, nV)
    ix = slice(nV, nV + nQ)
    ie = slice(nV + nQ, nV + 2 * nQ)
    nflow = nQ if coupled else 0
    il = slice(nV + nQ + nflow, nV + nQ + nflow + nrm)
    udofs = disc.u_dofs
    pdofs = disc.p_dofs if coupled else np.zeros(0, dtype=np.int64)
    p_d = disc.p_values(t1) if coupled else None

    x0 = np.concatenate([state.u, state.xi, state.eta if coupled else [], np.zeros(nrm)])
    x0[udofs] = disc.u_values(t1)

    def residual(x):
        u, xi, lmb = x[iu], x[ix], x[il]
        ru = asm.assemble_nonlinear_residual(disc.V, u, prm) - Bt @ xi - rhs_u
        if nrm:
            ru += R.T @ lmb
        ru[udofs] = 0.0
        parts = [ru]
        if coupled:
            eta = x[ie]
            parts.append(k3 * (M @ xi) + B @ u - k1 * (M @ eta))
            rflow = (M @ eta - Meta_n) / cfg.dt + S @ (k1 * xi + k2 * eta) - rhs_flow
            rflow[pdofs] = k1 * xi[pdofs] + k2 * eta[pdofs] - p_d
            parts.append(rflow)
        else:
            parts.append(k3 * (M @ xi) + B @ u - k1 * Meta_n)
        if nrm:
            parts.append(R @ u)
        return np.concatenate(parts)

    template = _jacobian_template(disc, cfg)

    def jacobian(x):
        JN = asm.assemble_newton_jacobian(disc.V, x[iu], prm)
        return template(JN)

    x, info = _newton(residual, jacobian, x0, cfg)
    return x[iu].copy(), x[ix].copy(), (x[ie].copy() if coupled else None), info


def flow_step(disc: Discretization, state: SystemState, xi_new: np.ndarray, cfg: SchemeConfig) -> np.ndarray:
    """Backward Euler diffusion solve for the new fluid content (decoupled scheme)."""
    prm = disc.params
    k1, k2 = prm.kappa1, prm.kappa2
    t1 = state.t + cfg.dt
    _, rhs_flow = disc.loads_at(t1)
    M, S = disc.M, disc.S
    if len(disc.p_dofs) == 0:
        A = M / cfg.dt + k2 * S
        b = M @ state.eta / cfg.dt + rhs_flow - k1 * (S @ xi_new)
        try:
            return solve(A, b, tol=cfg.linear_tol)
        except SolverError as exc:
            raise StepError(f"flow solve failed: {exc}", exc.residual) from exc
    A = M / (k2 * cfg.dt) + S
    b = M @ state.eta / cfg.dt + rhs_flow + k1 * (M @ xi_new) / (k2 * cfg.dt)
    A, b = apply_dirichlet(csr(A), b, disc.p_dofs, disc.p_values(t1))
    try:
        chi = solve(A, b, tol=cfg.linear_tol)
    except SolverError as exc:
        raise StepError(f"flow solve failed: {exc}", exc.residual) from exc
    return (chi - k1 * xi_new) / k2


def mfea_step(disc: Discretization, state: SystemState, cfg: SchemeConfig) -> SystemState:
    prm = disc.params
    k1, k2, k3 = prm.kappa1, prm.kappa2, prm.kappa3
    u, xi, eta, info = newton_solve(disc, state, cfg)
    if cfg.theta == 0:
        eta = flow_step(disc, state, xi, cfg)
        eta_p = state.eta
    else:
        eta_p = eta
    return SystemState(
        t=state.t + cfg.dt,
        u=u,
        xi=xi,
        eta=eta,
        p=k1 * xi + k2 * eta_p,
        q=k1 * eta - k3 * xi,
        chi=k1 * xi + k2 * eta,
        step=state.step + 1,
        newton_iterations=info.iterations,
        newton_residuals=info.residuals,
    )


@dataclass
class Trajectory:
    states: list
    config: SchemeConfig
    disc: Discretization
    monitors: list = field(default_factory=list)

    @property
    def final(self) -> SystemState:
        return self.states[-1]


def check_stability(disc: Discretization, cfg: SchemeConfig) -> None:
    h = disc.mesh.h_label
    if cfg.theta == 0 and cfg.dt > cfg.dt_h2_constant * h * h * (1 + 1e-12):
        warnings.warn(
            f"decoupled scheme with dt={cfg.dt:.3g} > {cfg.dt_h2_constant:g} h^2 = {cfg.dt_h2_constant * h * h:.3g}",
            RuntimeWarning,
            stacklevel=3,
        )


def run(disc: Discretization, cfg: SchemeConfig, monitors=(), initial: SystemState | None = None, keep: str = "all") -> Trajectory:
    """March from t=0 to T; each monitor is called as ``monitor(disc, prev, new, cfg)``.

    ``keep="last"`` stores only the initial and latest states.
    """
    nsteps = cfg.num_steps
    check_stability(disc, cfg)
    state = initial if initial is not None else initialize(disc)
    states = [state]
    records = []
    for n in range(nsteps):
        new = mfea_step(disc, state, replace(cfg))
        # exact multiple of dt avoids drift in t
        new.t = (n + 1) * cfg.dt
        for mon in monitors:
            rec = mon(disc, state, new, cfg)
            if rec is not None:
                records.append(rec)
        log.debug("step %d t=%.6g newton=%d", new.step, new.t, new.newton_iterations)
        if keep == "all":
            states.append(new)
        else:
            states = [states[0], new]
        state = new
    return Trajectory(states, cfg, disc, records)


def default_dt(h: float, theta: int, c: float = 1.0) -> float:
    """Study time step: c h^2 for the decoupled scheme, c h^2 / 2 for the coupled one."""
    return c * h * h if theta == 0 else c * h * h / 2.0


def steps_for(T: float, dt: float) -> int:
    return int(math.floor(T / dt + 0.5))

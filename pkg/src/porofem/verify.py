"""Error norms, convergence tables, conservation and energy monitors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import assembly as asm
from .mesh import build_uniform_mesh
from .mms import Scenario
from .spaces import cell_quadrature, eval_scalar, eval_vector, interpolate
from .stepper import Discretization, SchemeConfig, StepError, SystemState, Trajectory, default_dt, run

NORM_DEGREE = 6


@dataclass
class ErrorReport:
    h: float
    dt: float
    theta: int
    L2_u: float
    H1_u: float
    L2_p: float
    H1_p: float
    newton_max: int = 0


def error_norms(disc: Discretization, state, scenario: Scenario | None = None, t: float | None = None, degree: int = NORM_DEGREE, cfg: SchemeConfig | None = None) -> ErrorReport:
    """L2 and full H1 errors of u_h and p_h against the exact fields at ``state.t``."""
    sc = scenario if scenario is not None else disc.scenario
    t = state.t if t is None else t
    qv = cell_quadrature(disc.V, degree)
    qs = cell_quadrature(disc.Q, degree)
    uh, guh = eval_vector(disc.V, state.u, degree)
    ph, gph = eval_scalar(disc.Q, state.p, degree)
    ue = np.asarray(sc.u_exact(qv.x, t))
    gue = np.asarray(sc.grad_u_exact(qv.x, t))
    pe = np.broadcast_to(np.asarray(sc.p_exact(qs.x, t), dtype=float), ph.shape)
    gpe = np.asarray(sc.grad_p_exact(qs.x, t))
    l2u = float(np.sqrt(np.einsum("kq,kqi->", qv.dx, (uh - ue) ** 2)))
    h1u_semi = float(np.sqrt(np.einsum("kq,kqij->", qv.dx, (guh - gue) ** 2)))
    l2p = float(np.sqrt(np.einsum("kq,kq->", qs.dx, (ph - pe) ** 2)))
    h1p_semi = float(np.sqrt(np.einsum("kq,kqi->", qs.dx, (gph - gpe) ** 2)))
    return ErrorReport(
        h=disc.mesh.h_label,
        dt=cfg.dt if cfg else float("nan"),
        theta=cfg.theta if cfg else -1,
        L2_u=l2u,
        H1_u=math.hypot(l2u, h1u_semi),
        L2_p=l2p,
        H1_p=math.hypot(l2p, h1p_semi),
    )


NORMS = ("L2_u", "H1_u", "L2_p", "H1_p")


def rates(hs, errors):
    """Observed orders log(e_{i-1}/e_i) / log(h_{i-1}/h_i); first entry is None."""
    out = [None]
    for i in range(1, len(hs)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(hs[i - 1] / hs[i]))
        else:
            out.append(float("nan"))
    return out


@dataclass
class RateTable:
    reports: list
    failed: str | None = None  # message when a level aborted

    @property
    def hs(self):
        return [r.h for r in self.reports]

    def errors(self, norm: str):
        return [getattr(r, norm) for r in self.reports]

    def rates(self, norm: str):
        return rates(self.hs, self.errors(norm))

    def rows(self):
        """Rows (h, L2_u, rate, H1_u, rate, L2_p, rate, H1_p, rate)."""
        cols = {n: (self.errors(n), self.rates(n)) for n in NORMS}
        out = []
        for i, r in enumerate(self.reports):
            row = [r.h]
            for n in NORMS:
                row += [cols[n][0][i], cols[n][1][i]]
            out.append(row)
        return out


def run_level(scenario: Scenario, n: int, theta: int, dt: float | None = None, **cfg_kw):
    """One solve on the uniform n x n mesh; returns (disc, trajectory, config, max Newton iterations)."""
    mesh = build_uniform_mesh(n)
    disc = Discretization(mesh, scenario)
    h = mesh.h_label
    dt = default_dt(h, theta) if dt is None else dt
    cfg = SchemeConfig(theta=theta, dt=dt, T=scenario.T, **cfg_kw)
    iters = [0]

    def count(disc, prev, new, cfg):
        iters[0] = max(iters[0], new.newton_iterations)

    traj = run(disc, cfg, monitors=(count,), keep="last")
    return disc, traj, cfg, iters[0]


def _study_level(scenario: Scenario, n: int, theta: int, dt: float, cfg_kw: dict):
    try:
        disc, traj, cfg, nmax = run_level(scenario, n, theta, dt, **cfg_kw)
    except StepError as exc:
        return f"level n={n}: {exc}"
    rep = error_norms(disc, traj.final, scenario, cfg=cfg)
    rep.newton_max = nmax
    return rep


_POOL_TASK = None  # inherited by forked workers; closures in Scenario do not pickle


def _pool_level(i):
    scenario, levels, theta, dts, cfg_kw = _POOL_TASK
    return _study_level(scenario, levels[i], theta, dts[i], cfg_kw)


def convergence_study(scenario: Scenario, levels, theta: int = 1, dt_policy=None, jobs: int = 1, **cfg_kw) -> RateTable:
    """Solve on each uniform mesh ``n`` in ``levels`` and tabulate errors at T.

    ``jobs > 1`` runs levels in forked worker processes; results are merged
    in level order, so the table does not depend on scheduling.
    """
    global _POOL_TASK
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least 2 mesh levels")
    if any(n < 1 for n in levels):
        raise ValueError(f"mesh levels must be >= 1, got {levels}")
    dts = [dt_policy(1.0 / n) if dt_policy is not None else default_dt(1.0 / n, theta) for n in levels]
    if jobs > 1 and len(levels) > 1:
        import multiprocessing as mp

        _POOL_TASK = (scenario, levels, theta, dts, cfg_kw)
        try:
            with mp.get_context("fork").Pool(min(jobs, len(levels))) as pool:
                results = pool.map(_pool_level, range(len(levels)), chunksize=1)
        finally:
            _POOL_TASK = None
    else:
        results = []
        for n, dt in zip(levels, dts):
            results.append(_study_level(scenario, n, theta, dt, cfg_kw))
            if isinstance(results[-1], str):
                break
    reports = []
    for res in results:
        if isinstance(res, str):
            return RateTable(reports, failed=res)
        reports.append(res)
    return RateTable(reports)


def random_initial_state(disc: Discretization, amplitude: float = 1e-3, seed: int = 0):
    """Random state satisfying the constraint row kappa3 xi + div u = kappa1 eta.

    u is made orthogonal to rigid motions when the discretization carries
    multipliers.  Needed as a starting point for the energy identity, which
    differences that row in time.
    """
    from .linalg import solve

    prm = disc.params
    k1, k2, k3 = prm.kappa1, prm.kappa2, prm.kappa3
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(disc.nV)
    if disc.use_rm:
        u -= disc.rm.T @ np.linalg.solve(disc.R @ disc.rm.T, disc.R @ u)
    u[disc.u_dofs] = 0.0
    u *= amplitude
    eta = amplitude * rng.standard_normal(disc.nQ)
    xi = solve(disc.M, k1 * (disc.M @ eta) - disc.B @ u) / k3
    p = k1 * xi + k2 * eta
    return SystemState(0.0, u, xi, eta, p, k1 * eta - k3 * xi, p.copy())


def u_is_discretely_exact(scenario: Scenario, n: int = 2, tol: float = 1e-12) -> bool:
    """True when the exact displacement at T lies in the P2 space.

    Its interpolant then carries no spatial error, so u-rates from a study
    measure the time-stepping and coupling error instead.
    """
    disc = Discretization(build_uniform_mesh(n), scenario)
    t = scenario.T
    u = interpolate(disc.V, scenario.u_exact, t)
    z = np.zeros(disc.nQ)
    rep = error_norms(disc, SystemState(t, u, z, z, z, z, z), scenario, t)
    scale = max(1.0, float(np.abs(u).max()))
    return rep.H1_u <= tol * scale


def newton_order(residuals, floor: float | None = None) -> float:
    """Observed order from the last three residuals above round-off.

    ``floor`` defaults to 1e3 machine epsilon times the initial residual.
    Returns nan when fewer than three usable residuals exist.
    """
    r = np.asarray(residuals, dtype=float)
    if floor is None:
        floor = 1e3 * np.finfo(float).eps * r[0] if len(r) else 0.0
    r = r[r > floor]
    if len(r) < 3:
        return float("nan")
    a, b, c = r[-3:]
    return float(np.log(c / b) / np.log(b / a))


# -- per-step monitors -------------------------------------------------------------


def _integral_of_one(dm):
    key = "ones_integral"
    if key not in dm._cache:
        q = cell_quadrature(dm)
        dm._cache[key] = np.bincount(dm.cell_dofs.ravel(), weights=np.einsum("kq,qn->kn", q.dx, q.phi).ravel(), minlength=dm.ndofs)
    return dm._cache[key]


def _boundary_normal_flux(disc: Discretization, u) -> float:
    """<u_h . n, 1> by 3-point Gauss quadrature on boundary edges."""
    eq = asm.edge_quadrature(disc.V)
    uu = np.asarray(u).reshape(-1, 2)[eq.nodes]  # (nb, 3, 2)
    vals = np.einsum("qn,bnc->bqc", eq.phi, uu)
    return float(np.einsum("bq,bqc,bc->", eq.ds, vals, eq.normal))


class StepMonitor:
    """Per-step record of the discrete conservation and energy identities.

    Conservation rows are meaningful for pure traction/flux configurations;
    the energy identity holds for ``theta = 1`` under the same condition.
    """

    def __init__(self, disc: Discretization, initial):
        self.ones = _integral_of_one(disc.Q)
        self.eta0 = float(self.ones @ initial.eta)
        self.c_eta = self.eta0  # running (eta_0, 1) + sum of source integrals
        self.c_eta_prev = self.eta0

    def __call__(self, disc: Discretization, prev, new, cfg: SchemeConfig) -> dict:
        prm = disc.params
        k1, k2, k3 = prm.kappa1, prm.kappa2, prm.kappa3
        rhs_u, rhs_flow = disc.loads_at(new.t)
        self.c_eta_prev = self.c_eta
        self.c_eta += cfg.dt * float(rhs_flow.sum())
        eta_mass = float(self.ones @ new.eta)
        xi_mass = float(self.ones @ new.xi)
        c_eta_theta = self.c_eta if cfg.theta == 1 else self.c_eta_prev
        _, F = eval_vector(disc.V, new.u)
        qv = cell_quadrature(disc.V)
        div_int = float(np.einsum("kq,kq->", qv.dx, np.trace(F, axis1=-2, axis2=-1)))
        un_flux = _boundary_normal_flux(disc, new.u)
        c_u = k1 * c_eta_theta - k3 * xi_mass
        rec = {
            "step": new.step,
            "t": new.t,
            "newton_iterations": new.newton_iterations,
            "newton_final_residual": new.newton_residuals[-1] if new.newton_residuals else 0.0,
            "eta_mass": eta_mass,
            "eta_conservation": eta_mass - self.c_eta,
            "xi_identity": k3 * xi_mass + div_int - k1 * c_eta_theta,
            "u_flux_identity": un_flux - c_u,
            "p_chi_gap": float(np.abs(new.p - new.chi).max()),
        }
        terms = energy_terms(disc, prev, new, cfg, rhs_u, rhs_flow)
        rec["energy_identity"] = terms["residual"]
        rec["energy_scale"] = terms["scale"]
        return rec


def energy_terms(disc: Discretization, prev, new, cfg: SchemeConfig, rhs_u=None, rhs_flow=None) -> dict:
    """Terms of the step energy identity obtained from the residual equations.

    kappa3 (d_t xi, xi) + kappa2 (d_t eta, eta) + (N(grad u), eps(d_t u))
    + (1/mu_f)(K grad p, grad p) - data terms = 0, tested with d_t u, xi and p.
    """
    prm = disc.params
    dt = cfg.dt
    if rhs_u is None:
        rhs_u, rhs_flow = disc.loads_at(new.t)
    M = disc.M
    q = cell_quadrature(disc.V)
    _, F1 = eval_vector(disc.V, new.u)
    _, F0 = eval_vector(disc.V, prev.u)
    N = asm.nonlinear_stress(F1, prm.mu, prm.lam)
    deps = asm.strain((F1 - F0) / dt)
    t_xi = prm.kappa3 * float((new.xi - prev.xi) @ (M @ new.xi)) / dt
    t_eta = prm.kappa2 * float((new.eta - prev.eta) @ (M @ new.eta)) / dt
    t_u = float(np.einsum("kq,kqij,kqij->", q.dx, N, deps))
    t_p = float(new.chi @ (disc.S @ new.chi))
    t_fu = -float(rhs_u @ (new.u - prev.u)) / dt
    t_fp = -float(rhs_flow @ new.chi)
    terms = [t_xi, t_eta, t_u, t_p, t_fu, t_fp]
    return {
        "xi": t_xi,
        "eta": t_eta,
        "u": t_u,
        "p": t_p,
        "data_u": t_fu,
        "data_p": t_fp,
        "residual": sum(terms),
        "scale": max(abs(v) for v in terms),
    }


def conservation_check(traj: Trajectory):
    """Per-step residuals of the three conservation identities."""
    mon = StepMonitor(traj.disc, traj.states[0])
    out = []
    for prev, new in zip(traj.states[:-1], traj.states[1:]):
        rec = mon(traj.disc, prev, new, traj.config)
        out.append({k: rec[k] for k in ("step", "t", "eta_conservation", "xi_identity", "u_flux_identity")})
    return out


@dataclass
class MonitorLog:
    steps: list = field(default_factory=list)  # StepMonitor records
    J: list = field(default_factory=list)
    S: list = field(default_factory=list)
    S_alt: list = field(default_factory=list)
    S_hat: list = field(default_factory=list)

    def inequality_holds(self):
        """J^l + S^l <= J^0 for each l >= 1 (diagnostic only)."""
        return [self.J[l] + self.S[l] <= self.J[0] + 1e-12 * abs(self.J[0]) for l in range(1, len(self.J))]


def energy_monitor(traj: Trajectory, C1: float, C2: float, C4: float) -> MonitorLog:
    """Discrete energies J^l, S^l (and the decoupled-scheme S-hat) for supplied constants.

    For ``theta = 0`` the d_t eta term is evaluated with eta^{n+theta} in
    ``S`` and with eta^{n+1} in ``S_alt``.
    """
    disc, cfg = traj.disc, traj.config
    prm = disc.params
    st = traj.states
    th = cfg.theta
    dt = cfg.dt
    M, Sd = disc.M, disc.S
    q = cell_quadrature(disc.V)
    k1, k2, k3 = prm.kappa1, prm.kappa2, prm.kappa3

    eps = []
    for s in st:
        _, F = eval_vector(disc.V, s.u)
        eps.append(asm.strain(F))

    def l2eps(e):
        return float(np.sqrt(np.einsum("kq,kqij,kqij->", q.dx, e, e)))

    def l2(v):
        return float(np.sqrt(max(v @ (M @ v), 0.0)))

    def eta_at(i):
        i = min(max(i, 0), len(st) - 1)
        return st[i].eta

    log = MonitorLog()
    loads = {i: disc.loads_at(st[i].t) for i in range(len(st))}
    grav = prm.rho_f * np.asarray(prm.g, dtype=float)
    gq = cell_quadrature(disc.Q)

    def grav_term(p):
        if not np.any(grav):
            return 0.0
        _, gp = eval_scalar(disc.Q, p)
        return float(np.einsum("kq,kqi,i->", gq.dx, gp, prm.K_matrix @ grav)) / prm.mu_f

    for l in range(len(st) - 1):
        rhs_u, _ = loads[l + 1]
        log.J.append(
            0.5
            * (
                C2 * l2eps(eps[l + 1]) ** 2
                + k2 * l2(eta_at(l + th)) ** 2
                + k3 * l2(st[l + 1].xi) ** 2
                - 2.0 * float(rhs_u @ st[l + 1].u)
            )
        )
    S = S_alt = S_hat = 0.0
    log.S.append(0.0)
    log.S_alt.append(0.0)
    log.S_hat.append(0.0)
    for l in range(1, len(st) - 1):
        n = l
        a, b = st[n], st[n + 1]
        _, rhs_flow = loads[n + 1]
        p = b.p
        dteps = l2eps((eps[n + 1] - eps[n]) / dt) ** 2
        dtxi = l2((b.xi - a.xi) / dt) ** 2
        dteta = l2((eta_at(n + th) - eta_at(n + th - 1)) / dt) ** 2
        dteta_alt = l2((b.eta - a.eta) / dt) ** 2
        flux = float(p @ (Sd @ p)) - grav_term(p)
        src = float(rhs_flow @ p) - grav_term(p)  # rhs_flow carries the gravity term already
        common = dt / 2 * k3 * dtxi - src
        coupling = 0.0
        if th == 0:
            coupling = k1 * dt * float(((b.xi - a.xi) / dt) @ (Sd @ p))
        lip = C1 / dt * l2eps(eps[n]) * l2eps(eps[n + 1])
        base = dt / 2 * C4 * dteps + flux + common - (1 - th) * coupling - lip
        S += dt * (base + k2 * dt / 2 * dteta)
        S_alt += dt * (base + k2 * dt / 2 * dteta_alt)
        S_hat += dt * (
            dt / 4 * C4 * dteps
            + 0.5 * float(p @ (Sd @ p))  # K/(2 mu_f) |grad p|^2 for scalar K
            - grav_term(p)
            + k2 * dt / 2 * dteta
            + k3 * dt / 2 * dtxi
            - src
            - C1 / dt * l2eps(eps[n + 1]) ** 2
        )
        log.S.append(S)
        log.S_alt.append(S_alt)
        log.S_hat.append(S_hat)
    return log


# -- stress diagnostics --------------------------------------------------------------


def monotonicity_sample(V, params, nsamples: int = 100, grad_bound: float = 0.5, seed: int = 0) -> dict:
    """Empirical constants for (N(u)-N(v), eps(u)-eps(v)) >= C4 |eps(u)-eps(v)|^2
    and |N(u)-N(v)| <= C3 |eps(u)-eps(v)| over random P2 pairs with |grad| <= bound."""
    rng = np.random.default_rng(seed)
    q = cell_quadrature(V)
    pairing, lip = [], []
    for _ in range(nsamples):
        pair = []
        for _ in range(2):
            c = rng.uniform(-1.0, 1.0, V.ndofs)
            _, F = eval_vector(V, c)
            c *= grad_bound * rng.uniform(0.2, 1.0) / np.abs(F).max()
            pair.append(c)
        _, Fu = eval_vector(V, pair[0])
        _, Fv = eval_vector(V, pair[1])
        dN = asm.nonlinear_stress(Fu, params.mu, params.lam) - asm.nonlinear_stress(Fv, params.mu, params.lam)
        de = asm.strain(Fu) - asm.strain(Fv)
        e2 = float(np.einsum("kq,kqij,kqij->", q.dx, de, de))
        pairing.append(float(np.einsum("kq,kqij,kqij->", q.dx, dN, de)) / e2)
        lip.append(float(np.sqrt(np.einsum("kq,kqij,kqij->", q.dx, dN, dN) / e2)))
    return {
        "pairing": np.array(pairing),
        "C4_estimate": float(min(pairing)),
        "lipschitz": np.array(lip),
        "C3_estimate": float(max(lip)),
    }

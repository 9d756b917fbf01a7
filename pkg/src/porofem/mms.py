"""Manufactured solutions: the two unit-square benchmarks and their parameter sets.

Data functions take points ``x`` of shape (..., 2) and a time ``t``;
boundary functions additionally take the outward normal ``n`` (same shape
as ``x``).  Source terms are coded in closed form as given; ``residual_audit``
checks them against the model independently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import ModelParams, nonlinear_stress
from .mesh import BoundaryTag

G1, G2, G3, G4 = BoundaryTag.GAMMA1, BoundaryTag.GAMMA2, BoundaryTag.GAMMA3, BoundaryTag.GAMMA4

PARAM_SETS = {
    "test1-soft": dict(lam=0.1, mu=0.1, alpha=1e-5, K=1e-3, c0=2.0),
    "test1-stiff": dict(lam=1e3, mu=1e3, alpha=1e-5, K=1e-3, c0=1.0),
    "test2-soft": dict(lam=0.1, mu=10.0, alpha=1e-4, K=0.1, c0=20.0),
    "test2-stiff": dict(lam=1e3, mu=1e3, alpha=1e-4, K=0.1, c0=0.01),
}


def param_set(name: str, **overrides) -> ModelParams:
    """Benchmark parameter set by name; ``mu_f = 1`` and ``rho_f g = 0`` unless overridden."""
    try:
        values = dict(PARAM_SETS[name])
    except KeyError:
        raise KeyError(f"unknown parameter set {name!r}; choose from {sorted(PARAM_SETS)}") from None
    values.update(overrides)
    return ModelParams(**values)


@dataclass
class Scenario:
    """Exact fields, data and boundary configuration for one benchmark.

    ``u_dirichlet`` lists (component, tags) pairs whose values come from
    ``u_exact``; ``p_dirichlet_tags`` lists where the pressure is prescribed
    from ``p_exact``.  Traction acts on every (tag, component) that is not
    displacement-constrained; flux acts on tags without pressure data.
    """

    name: str
    params: ModelParams
    u_exact: Callable
    p_exact: Callable
    grad_u_exact: Callable
    grad_p_exact: Callable
    f: Callable | None
    phi: Callable | None
    f1: Callable | None = None
    phi1: Callable | None = None
    u_dirichlet: tuple = ()
    p_dirichlet_tags: tuple = ()
    T: float = 1.0
    u0: Callable | None = None
    p0: Callable | None = None
    extra: dict = field(default_factory=dict)

    def initial_u(self, x):
        fn = self.u0 if self.u0 is not None else self.u_exact
        return fn(x, 0.0)

    def initial_p(self, x):
        fn = self.p0 if self.p0 is not None else self.p_exact
        return fn(x, 0.0)

    @property
    def traction_parts(self) -> dict:
        parts = {t: {0, 1} for t in BoundaryTag}
        for comp, tags in self.u_dirichlet:
            for t in tags:
                parts[BoundaryTag(t)].discard(comp)
        return {t: tuple(sorted(c)) for t, c in parts.items()}

    @property
    def flux_tags(self) -> tuple:
        return tuple(t for t in BoundaryTag if t not in set(self.p_dirichlet_tags))


def _split(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1]


def _vec(a, b):
    a, b = np.broadcast_arrays(a, b)
    return np.stack([a, b], axis=-1)


def _diag_grad(a, b):
    a, b = np.broadcast_arrays(a, b)
    z = np.zeros_like(a)
    return np.stack([np.stack([a, z], -1), np.stack([z, b], -1)], -2)


def test1(params: ModelParams | None = None) -> Scenario:
    """u = t/2 (x1^2, x2^2), p = t exp(x1 + x2) on the unit square, T = 1."""
    prm = params if params is not None else param_set("test1-soft")
    lam, mu, alpha, c0, mu_f = prm.lam, prm.mu, prm.alpha, prm.c0, prm.mu_f
    K = float(np.asarray(prm.K).ravel()[0])

    def u(x, t):
        x1, x2 = _split(x)
        return 0.5 * t * _vec(x1**2, x2**2)

    def grad_u(x, t):
        x1, x2 = _split(x)
        return t * _diag_grad(x1, x2)

    def p(x, t):
        x1, x2 = _split(x)
        return t * np.exp(x1 + x2)

    def grad_p(x, t):
        e = p(x, t)
        return _vec(e, e)

    def f(x, t):
        x1, x2 = _split(x)
        e = np.exp(x1 + x2)
        return _vec(
            -(lam + mu) * t - 2 * (mu + lam) * t**2 * x1 + alpha * t * e,
            -(lam + mu) * t - 2 * (mu + lam) * t**2 * x2 + alpha * t * e,
        )

    def phi(x, t):
        x1, x2 = _split(x)
        e = np.exp(x1 + x2)
        return c0 * e - 2 * K / mu_f * t * e + alpha * (x1 + x2)

    def f1(x, t, n):
        x1, x2 = _split(x)
        n1, n2 = _split(n)
        e = np.exp(x1 + x2)
        s = lam * (x1 + x2) * t + lam * t**2 * (x1**2 + x2**2) - alpha * t * e
        return _vec(
            s * n1 + mu * t * x1 * n1 + mu * t**2 * x1**2 * n1,
            s * n2 + mu * t * x2 * n2 + mu * t**2 * x2**2 * n2,
        )

    return Scenario(
        name="test1",
        params=prm,
        u_exact=u,
        p_exact=p,
        grad_u_exact=grad_u,
        grad_p_exact=grad_p,
        f=f,
        phi=phi,
        f1=f1,
        u_dirichlet=((0, (G1, G3)), (1, (G2, G4))),
        p_dirichlet_tags=tuple(BoundaryTag),
        T=1.0,
    )


def test2(params: ModelParams | None = None) -> Scenario:
    """u = t^2/2 (x1^2, x2^2), p = sin(x1 + x2) e^t on the unit square, T = 1."""
    prm = params if params is not None else param_set("test2-soft")
    lam, mu, alpha, c0, mu_f = prm.lam, prm.mu, prm.alpha, prm.c0, prm.mu_f
    K = float(np.asarray(prm.K).ravel()[0])

    def u(x, t):
        x1, x2 = _split(x)
        return 0.5 * t**2 * _vec(x1**2, x2**2)

    def grad_u(x, t):
        x1, x2 = _split(x)
        return t**2 * _diag_grad(x1, x2)

    def p(x, t):
        x1, x2 = _split(x)
        return np.sin(x1 + x2) * np.exp(t)

    def grad_p(x, t):
        x1, x2 = _split(x)
        c = np.cos(x1 + x2) * np.exp(t)
        return _vec(c, c)

    def f(x, t):
        x1, x2 = _split(x)
        c = alpha * np.cos(x1 + x2) * np.exp(t)
        return _vec(
            -(lam + mu) * t**2 - 2 * (mu + lam) * t**4 * x1 + c,
            -(lam + mu) * t**2 - 2 * (mu + lam) * t**4 * x2 + c,
        )

    def phi(x, t):
        x1, x2 = _split(x)
        return (c0 + 2 * K / mu_f) * np.sin(x1 + x2) * np.exp(t) + 2 * t * alpha * (x1 + x2)

    def f1(x, t, n):
        x1, x2 = _split(x)
        n1, n2 = _split(n)
        s = lam * (x1 + x2) * t**2 + lam * t**4 * (x1**2 + x2**2) - alpha * np.sin(x1 + x2) * np.exp(t)
        return _vec(
            s * n1 + mu * t**2 * x1 * n1 + mu * t**4 * x1**2 * n1,
            s * n2 + mu * t**2 * x2 * n2 + mu * t**4 * x2**2 * n2,
        )

    return Scenario(
        name="test2",
        params=prm,
        u_exact=u,
        p_exact=p,
        grad_u_exact=grad_u,
        grad_p_exact=grad_p,
        f=f,
        phi=phi,
        f1=f1,
        u_dirichlet=((0, (G1, G3)), (1, (G2, G4))),
        p_dirichlet_tags=tuple(BoundaryTag),
        T=1.0,
    )


def pure_flux(params: ModelParams, phi_value: float = 0.0, T: float = 1.0, u0=None, p0=None) -> Scenario:
    """Traction-free, flux-free box with a constant fluid source and no exact solution."""

    def zero_vec(x, t):
        x1, _ = _split(x)
        return _vec(np.zeros_like(x1), np.zeros_like(x1))

    def zero_grad(x, t):
        x1, _ = _split(x)
        return np.zeros(np.shape(x1) + (2, 2))

    def zero(x, t):
        return np.zeros(np.shape(x)[:-1])

    def phi(x, t):
        return np.full(np.shape(x)[:-1], float(phi_value))

    return Scenario(
        name="pure-flux",
        params=params,
        u_exact=zero_vec,
        p_exact=zero,
        grad_u_exact=zero_grad,
        grad_p_exact=lambda x, t: zero_vec(x, t),
        f=None,
        phi=phi if phi_value else None,
        T=T,
        u0=u0 if u0 is not None else zero_vec,
        p0=p0 if p0 is not None else zero,
    )


SCENARIOS = {"test1": test1, "test2": test2}


def scenario(name: str, params: ModelParams | None = None) -> Scenario:
    try:
        return SCENARIOS[name](params)
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


# -- independent residual audit ---------------------------------------------------


def green_stress(grad_u, mu, lam):
    """Effective stress mu E + lam tr(E) I with E = (F + F^T + 2 F^T F) / 2."""
    F = np.asarray(grad_u, dtype=float)
    E = 0.5 * (F + np.swapaxes(F, -1, -2) + 2 * np.swapaxes(F, -1, -2) @ F)
    return mu * E + lam * np.trace(E, axis1=-2, axis2=-1)[..., None, None] * np.eye(2)


_FD4 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_OFF = np.array([-2.0, -1.0, 1.0, 2.0])


def _d(fn, x, j, h):
    """Fourth-order central difference of fn along coordinate j."""
    out = 0.0
    for c, o in zip(_FD4, _OFF):
        xs = np.array(x, dtype=float)
        xs[..., j] += o * h
        out = out + c * fn(xs)
    return out / h


def residual_audit(sc: Scenario, npts: int = 20, seed: int = 0, h: float = 1e-3) -> dict:
    """Compare the coded f, phi and f1 with model residuals of the exact fields.

    The stress comes from the Green strain of finite-difference gradients
    of ``u_exact``; its divergence and the time derivatives are again finite
    differences.  Returns maximum relative discrepancies.
    """
    prm = sc.params
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.05, 0.95, size=(npts, 2))
    ts = rng.uniform(0.1, 1.0, size=npts)
    K = prm.K_matrix
    grav = prm.rho_f * np.asarray(prm.g, dtype=float)
    out = {"f": 0.0, "phi": 0.0, "f1": 0.0}

    def fd_grad_u(x, t):
        cols = [_d(lambda y: sc.u_exact(y, t), x, j, h) for j in range(2)]
        return np.stack(cols, axis=-1)

    def stress(x, t):
        return green_stress(fd_grad_u(x, t), prm.mu, prm.lam)

    for x, t in zip(pts, ts):
        div_s = sum(_d(lambda y: stress(y, t)[..., :, j], x, j, h) for j in range(2))
        grad_p = np.array([_d(lambda y: sc.p_exact(y, t), x, j, h) for j in range(2)])
        f_model = -div_s + prm.alpha * grad_p
        f_coded = np.asarray(sc.f(x, t), dtype=float)
        out["f"] = max(out["f"], np.abs(f_model - f_coded).max() / max(1.0, np.abs(f_coded).max()))

        def content(s):
            div_u = np.trace(fd_grad_u(x, s))
            return prm.c0 * sc.p_exact(x, s) + prm.alpha * div_u

        dt = 1e-4
        eta_t = sum(c * content(t + o * dt) for c, o in zip(_FD4, _OFF)) / dt

        def flux(y):
            gp = np.stack([_d(lambda z: sc.p_exact(z, t), y, j, h) for j in range(2)], axis=-1)
            return -(gp - grav) @ K.T / prm.mu_f

        div_flux = sum(_d(lambda y: flux(y)[..., j], x, j, h) for j in range(2))
        phi_coded = float(sc.phi(x, t))
        out["phi"] = max(out["phi"], abs(eta_t + div_flux - phi_coded) / max(1.0, abs(phi_coded)))

    if sc.f1 is not None:
        normals = {G1: (1.0, 0.0), G2: (0.0, -1.0), G3: (-1.0, 0.0), G4: (0.0, 1.0)}
        for tag, n in normals.items():
            s = rng.uniform(0.0, 1.0, size=npts)
            if tag in (G1, G3):
                xb = np.column_stack([np.full(npts, 1.0 if tag == G1 else 0.0), s])
            else:
                xb = np.column_stack([s, np.full(npts, 0.0 if tag == G2 else 1.0)])
            for x, t in zip(xb, ts):
                n_arr = np.array(n)
                sig = green_stress(sc.grad_u_exact(x, t), prm.mu, prm.lam)
                model = sig @ n_arr - prm.alpha * sc.p_exact(x, t) * n_arr
                coded = np.asarray(sc.f1(x, t, n_arr), dtype=float)
                out["f1"] = max(out["f1"], np.abs(model - coded).max() / max(1.0, np.abs(coded).max()))
    return out


def stress_split_check(grad_u, mu, lam) -> float:
    """max |N(F) - (sigma(F) - lam tr(F) I)| for an array of gradients."""
    F = np.asarray(grad_u, dtype=float)
    ref = green_stress(F, mu, lam) - lam * np.trace(F, axis1=-2, axis2=-1)[..., None, None] * np.eye(2)
    return float(np.abs(nonlinear_stress(F, mu, lam) - ref).max())

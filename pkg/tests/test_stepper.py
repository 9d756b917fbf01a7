import warnings

import numpy as np
import pytest

from porofem.mesh import build_uniform_mesh
from porofem.mms import param_set, pure_flux, scenario
from porofem.spaces import interpolate
from porofem.stepper import (
    Discretization,
    SchemeConfig,
    StepError,
    default_dt,
    flow_step,
    initialize,
    mfea_step,
    newton_solve,
    run,
)
from porofem.verify import error_norms


def disc_for(name, pset, n):
    return Discretization(build_uniform_mesh(n), scenario(name, param_set(pset)))


def test_initialize_test1_zero():
    s = initialize(disc_for("test1", "test1-soft", 3))
    for v in (s.u, s.xi, s.eta, s.p, s.q):
        assert not np.any(v)


def test_initialize_test2():
    d = disc_for("test2", "test2-soft", 4)
    prm = d.params
    s = initialize(d)
    p0 = interpolate(d.Q, lambda x, t: np.sin(x[:, 0] + x[:, 1]))
    assert np.allclose(s.eta, prm.c0 * p0, atol=1e-15) and np.allclose(s.xi, prm.alpha * p0, atol=1e-15)
    assert np.abs(prm.kappa1 * s.xi + prm.kappa2 * s.eta - s.p).max() <= 1e-14


def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.3, T=1.0).num_steps
    assert SchemeConfig(dt=0.25, T=1.0).num_steps == 4
    assert default_dt(0.5, 1) == 0.125 and default_dt(0.5, 0) == 0.25


def test_zero_data_stays_zero():
    d = Discretization(build_uniform_mesh(3), pure_flux(param_set("test2-soft")))
    for theta in (0, 1):
        traj = run(d, SchemeConfig(theta=theta, dt=0.1, T=0.3))
        for s in traj.states:
            assert not np.any(s.u) and not np.any(s.eta) and s.newton_iterations <= 1


def test_no_steps():
    d = disc_for("test1", "test1-soft", 2)
    traj = run(d, SchemeConfig(dt=0.1, T=0.0))
    assert len(traj.states) == 1 and traj.final.t == 0.0


@pytest.mark.parametrize("theta", [0, 1])
def test_update_identities(theta):
    d = disc_for("test2", "test2-soft", 4)
    k1, k2, k3 = d.params.kappa1, d.params.kappa2, d.params.kappa3
    prev = initialize(d)
    cfg = SchemeConfig(theta=theta, dt=1 / 16, T=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        new = mfea_step(d, prev, cfg)
    eta_p = new.eta if theta else prev.eta
    scale = np.abs(new.p).max()
    assert np.abs(new.p - k1 * new.xi - k2 * eta_p).max() <= 1e-15 * scale
    assert np.abs(new.q - k1 * new.eta + k3 * new.xi).max() <= 1e-15 * np.abs(new.q).max()
    assert np.abs(new.chi - k1 * new.xi - k2 * new.eta).max() <= 1e-15 * scale


def test_newton_iterations_test1():
    d = disc_for("test1", "test1-soft", 6)
    traj = run(d, SchemeConfig(theta=1, dt=1 / 36, T=6 / 36, newton_tol=1e-10))
    assert max(s.newton_iterations for s in traj.states[1:]) <= 5


def test_pressure_dirichlet_imposed():
    d = disc_for("test2", "test2-soft", 4)
    cfg = SchemeConfig(theta=1, dt=1 / 8, T=1 / 8)
    s = run(d, cfg).final
    assert np.allclose(s.chi[d.p_dofs], d.p_values(s.t), atol=1e-12)
    u_exact = d.u_values(s.t)
    assert np.allclose(s.u[d.u_dofs], u_exact, atol=1e-14)


def test_flow_step_constant_potential():
    prm = param_set("test2-soft")
    sc = pure_flux(prm, p0=lambda x, t: np.full(x.shape[:-1], 0.3))
    d = Discretization(build_uniform_mesh(3), sc)
    s0 = initialize(d)
    eta = flow_step(d, s0, s0.xi, SchemeConfig(theta=0, dt=0.05, T=1.0))
    assert np.allclose(eta, s0.eta, atol=1e-12)


def test_decoupled_newton_returns_no_eta():
    d = disc_for("test1", "test1-soft", 3)
    s0 = initialize(d)
    u, xi, eta, info = newton_solve(d, s0, SchemeConfig(theta=0, dt=1 / 9, T=1.0))
    assert eta is None and info.iterations >= 1 and info.residuals[-1] <= 1e-10 * info.residuals[0]


def test_stability_warning():
    d = disc_for("test1", "test1-soft", 3)
    with pytest.warns(RuntimeWarning):
        run(d, SchemeConfig(theta=0, dt=0.5, T=0.5))


def test_newton_failure_raises():
    d = disc_for("test2", "test2-soft", 3)
    with pytest.raises(StepError):
        run(d, SchemeConfig(theta=1, dt=0.25, T=0.25, newton_max_iter=1, newton_tol=1e-14))


def test_single_step_regression():
    d = disc_for("test1", "test1-soft", 6)
    cfg = SchemeConfig(theta=0, dt=1 / 36, T=1 / 36)
    s = run(d, cfg).final
    sc = d.scenario
    prm = d.params
    eta_exact = interpolate(d.Q, lambda x, t: prm.c0 * sc.p_exact(x, t) + prm.alpha * (x[:, 0] + x[:, 1]) * t, s.t)
    err = float(np.sqrt((s.eta - eta_exact) @ (d.M @ (s.eta - eta_exact))))
    assert err <= cfg.dt + d.mesh.h_label**2
    assert err == pytest.approx(ETA_ERR_ONE_STEP, rel=1e-6)


# decoupled scheme, Test 1 soft, h = 1/6, dt = 1/36; recorded from a validated run
ETA_ERR_ONE_STEP = 1.0802168143944594e-3


def test_deterministic():
    d1 = disc_for("test2", "test2-soft", 4)
    d2 = disc_for("test2", "test2-soft", 4)
    cfg = SchemeConfig(theta=1, dt=1 / 8, T=0.5)
    a, b = run(d1, cfg).final, run(d2, cfg).final
    assert np.array_equal(a.u, b.u) and np.array_equal(a.eta, b.eta)


def test_time_error_halves():
    d = disc_for("test2", "test2-soft", 6)
    ps = [run(d, SchemeConfig(theta=1, dt=dt, T=1.0), keep="last").final.p for dt in (1 / 4, 1 / 8, 1 / 16)]
    diffs = [np.sqrt((ps[i] - ps[i + 1]) @ (d.M @ (ps[i] - ps[i + 1]))) for i in range(2)]
    assert 1.6 <= diffs[0] / diffs[1] <= 2.4


def test_time_refinement_monotone():
    d = disc_for("test2", "test2-soft", 6)
    errs = []
    for dt in (1 / 4, 1 / 8, 1 / 16):
        cfg = SchemeConfig(theta=1, dt=dt, T=1.0)
        errs.append(error_norms(d, run(d, cfg, keep="last").final, cfg=cfg).L2_p)
    assert errs[0] > errs[1] > errs[2]

"""Command-line driver.

Subcommands::

    porofem run     single solve; writes solution_t<T>.vtk and monitors.csv
    porofem study   convergence study over a mesh list; writes rates.csv
    porofem audit   compare the coded source terms with model residuals
    porofem energy  rerun with energy/conservation monitors only; writes energy.csv

Settings come from an optional INI file (``--config``) and are overridden
by flags.  Recognised sections and keys::

    [run]     scenario, params, n, mesh_list, theta, dt, T, phi, output_dir, jobs
    [params]  lambda, mu, alpha, c0, K, mu_f, rho_f, g
    [energy]  C1, C2, C4
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import ModelParams
from .linalg import SolverError
from .mesh import build_uniform_mesh, write_vtk
from .mms import PARAM_SETS, SCENARIOS, param_set, pure_flux, residual_audit
from .stepper import Discretization, SchemeConfig, StepError, initialize, run
from .verify import StepMonitor, convergence_study, energy_monitor, random_initial_state, u_is_discretely_exact

log = logging.getLogger("porofem")

SCENARIO_NAMES = sorted(SCENARIOS) + ["pure-flux"]
DEFAULT_STUDY_LEVELS = (3, 6, 12, 24)

# INI key -> ModelParams field
PARAM_KEYS = {
    "lambda": "lam",
    "mu": "mu",
    "alpha": "alpha",
    "c0": "c0",
    "k": "K",
    "mu_f": "mu_f",
    "rho_f": "rho_f",
    "g": "g",
}
RUN_KEYS = {"scenario", "params", "n", "mesh_list", "theta", "dt", "t", "phi", "output_dir", "jobs"}
ENERGY_KEYS = {"c1", "c2", "c4"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str = "test1"
    params: str = "test1-soft"
    overrides: dict = field(default_factory=dict)
    n: int = 6
    mesh_list: tuple | None = None
    theta: int = 1
    dt: float | None = None  # None: h^2 for run, the study policy for study
    T: float | None = None  # None: scenario default
    phi: float = 1.0  # source for the pure-flux scenario
    output_dir: str = "."
    emit_vtk: bool = True
    emit_monitors: bool = True
    pretty: bool = False
    jobs: int = 1
    energy_constants: dict = field(default_factory=dict)

    def model_params(self) -> ModelParams:
        try:
            return param_set(self.params, **self.overrides)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc).strip("'\"")) from None

    def build_scenario(self):
        prm = self.model_params()
        if self.scenario == "pure-flux":
            sc = pure_flux(prm, phi_value=self.phi)
        else:
            sc = SCENARIOS[self.scenario](prm)
        if self.T is not None:
            sc.T = self.T
        return sc


# -- parsing ---------------------------------------------------------------------


def _float(key, text) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: value must be finite, got {text!r}")
    return v


def _int(key, text) -> int:
    try:
        return int(str(text).strip())
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _mesh_list(text) -> tuple:
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError("mesh_list: empty")
    levels = tuple(_int("mesh_list", p) for p in parts)
    if any(n < 1 for n in levels):
        raise ConfigError(f"mesh_list: levels must be >= 1, got {text!r}")
    return levels


def _param_value(key, text):
    if key == "g":
        parts = str(text).split(",")
        if len(parts) != 2:
            raise ConfigError(f"g: expected two comma-separated numbers, got {text!r}")
        return tuple(_float("g", p) for p in parts)
    return _float(key, text)


def _apply(cfg: RunConfig, key: str, value) -> None:
    """Set one run-section setting, validating it."""
    if key == "scenario":
        if value not in SCENARIO_NAMES:
            raise ConfigError(f"scenario: unknown {value!r}; choose from {SCENARIO_NAMES}")
        cfg.scenario = value
    elif key == "params":
        if value not in PARAM_SETS:
            raise ConfigError(f"params: unknown {value!r}; choose from {sorted(PARAM_SETS)}")
        cfg.params = value
    elif key == "n":
        cfg.n = _int("n", value)
        if cfg.n < 1:
            raise ConfigError(f"n: must be >= 1, got {value!r}")
    elif key == "mesh_list":
        cfg.mesh_list = _mesh_list(value)
    elif key == "theta":
        th = _int("theta", value)
        if th not in (0, 1):
            raise ConfigError(f"theta: must be 0 or 1, got {value!r}")
        cfg.theta = th
    elif key == "dt":
        cfg.dt = _float("dt", value)
        if cfg.dt <= 0:
            raise ConfigError("dt: must be positive")
    elif key == "t":
        cfg.T = _float("T", value)
        if cfg.T <= 0:
            raise ConfigError("T: must be positive")
    elif key == "phi":
        cfg.phi = _float("phi", value)
    elif key == "output_dir":
        cfg.output_dir = str(value)
    elif key == "jobs":
        cfg.jobs = _int("jobs", value)
        if cfg.jobs < 1:
            raise ConfigError("jobs: must be >= 1")
    else:  # pragma: no cover - guarded by RUN_KEYS
        raise ConfigError(f"unknown key {key!r}")


def read_config_file(path, cfg: RunConfig) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    for section in cp.sections():
        items = cp[section]
        if section == "run":
            for key, value in items.items():
                if key not in RUN_KEYS:
                    raise ConfigError(f"[run] unknown key {key!r}")
                _apply(cfg, key, value)
        elif section == "params":
            for key, value in items.items():
                if key not in PARAM_KEYS:
                    raise ConfigError(f"[params] unknown key {key!r}")
                cfg.overrides[PARAM_KEYS[key]] = _param_value(key, value)
        elif section == "energy":
            for key, value in items.items():
                if key not in ENERGY_KEYS:
                    raise ConfigError(f"[energy] unknown key {key!r}")
                cfg.energy_constants[key.upper()] = _float(key, value)
        else:
            raise ConfigError(f"unknown section [{section}]")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("settings (override the config file)")
    g.add_argument("--config", help="INI file with [run], [params] and [energy] sections")
    g.add_argument("--scenario", choices=SCENARIO_NAMES, help="benchmark (default test1)")
    g.add_argument("--params", choices=sorted(PARAM_SETS), help="parameter set (default test1-soft)")
    for flag in ("lambda", "mu", "alpha", "c0", "K", "mu-f", "rho-f"):
        g.add_argument(f"--{flag}", dest=f"p_{flag.lower().replace('-', '_')}", metavar="X", help=f"override {flag}")
    g.add_argument("--g", dest="p_g", metavar="GX,GY", help="override gravity vector")
    g.add_argument("--n", help="mesh divisions per side for run/energy (default 6)")
    g.add_argument("--mesh-list", help="comma-separated levels for study (default 3,6,12,24)")
    g.add_argument("--theta", help="1 monolithic, 0 decoupled (default 1)")
    g.add_argument("--dt", help="time step (run default h^2; study default h^2/2 for theta=1, h^2 for theta=0)")
    g.add_argument("--T", dest="t", help="final time (default from scenario)")
    g.add_argument("--phi", help="constant source of the pure-flux scenario (default 1)")
    g.add_argument("--output-dir", help="output directory (default $PF_OUTPUT_DIR or .)")
    g.add_argument("--jobs", help="parallel study levels (default 1)")
    g.add_argument("--pretty", action="store_true", help="also print an aligned table")
    g.add_argument("--no-vtk", action="store_true", help="run: skip the VTK file")
    g.add_argument("--no-monitors", action="store_true", help="run: skip monitors.csv")
    g.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="porofem", description="Nonlinear poroelasticity finite element driver.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single solve with VTK and monitor output")
    sub.add_parser("study", parents=[common], help="convergence study writing rates.csv")
    a = sub.add_parser("audit", parents=[common], help="source-term residual audit")
    a.add_argument("--points", type=int, default=20, help="random sample points (default 20)")
    e = sub.add_parser("energy", parents=[common], help="energy and conservation monitors")
    for c in ("C1", "C2", "C4"):
        e.add_argument(f"--{c}", type=float, default=None, help=f"constant {c} (defaults 4mu, mu, mu/2)")
    e.add_argument("--random-init", type=float, default=None, metavar="AMP", help="start from a random consistent state of this amplitude")
    return p


def parse_config(argv=None) -> tuple[str, RunConfig, argparse.Namespace]:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(output_dir=os.environ.get("PF_OUTPUT_DIR", "."))
    if args.config:
        read_config_file(args.config, cfg)
    for key in ("scenario", "params", "n", "mesh_list", "theta", "dt", "t", "phi", "output_dir", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            _apply(cfg, key, value)
    for flag, attr in PARAM_KEYS.items():
        value = getattr(args, f"p_{flag.lower()}", None)
        if value is not None:
            cfg.overrides[attr] = _param_value(flag, value)
    for c in ("C1", "C2", "C4"):
        value = getattr(args, c, None)
        if value is not None:
            cfg.energy_constants[c] = value
    cfg.pretty = args.pretty
    cfg.emit_vtk = not args.no_vtk
    cfg.emit_monitors = not args.no_monitors
    if args.command in ("run", "energy") and cfg.mesh_list is not None and len(cfg.mesh_list) > 1:
        raise ConfigError(f"{args.command} takes a single mesh; got mesh_list {cfg.mesh_list}")
    if args.command in ("run", "energy") and cfg.mesh_list is not None:
        cfg.n = cfg.mesh_list[0]
    cfg.model_params()  # validate overrides early
    return args.command, cfg, args


# -- output helpers --------------------------------------------------------------


def _fmt(v) -> str:
    """Locale-independent text for one CSV cell."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.10e}"


def _prepare_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(prefix=".probe-", dir=out)
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


class _AtomicFiles:
    """Write into temporaries, then rename all of them; nothing is left on failure."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.pending = []  # (tmp, final)

    def path(self, name: str) -> Path:
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.dir)
        os.close(fd)
        self.pending.append((Path(tmp), self.dir / name))
        return Path(tmp)

    def commit(self):
        mask = os.umask(0)
        os.umask(mask)
        for tmp, final in self.pending:
            os.chmod(tmp, 0o666 & ~mask)  # mkstemp creates 0600
            os.replace(tmp, final)
        self.pending = []

    def discard(self):
        for tmp, _ in self.pending:
            try:
                tmp.unlink()
            except OSError:
                pass
        self.pending = []


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _pretty(header, rows) -> str:
    cells = [list(header)] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _time_label(T: float) -> str:
    return format(T, "g")


def _mesh_and_dt(cfg: RunConfig):
    mesh = build_uniform_mesh(cfg.n)
    h = mesh.h_label
    dt = cfg.dt if cfg.dt is not None else h * h
    return mesh, dt


# -- subcommands -----------------------------------------------------------------

MONITOR_COLUMNS = (
    "step",
    "t",
    "newton_iterations",
    "newton_final_residual",
    "eta_mass",
    "eta_conservation",
    "xi_identity",
    "u_flux_identity",
    "p_chi_gap",
    "energy_identity",
    "energy_scale",
)


def cmd_run(cfg: RunConfig) -> int:
    out = _prepare_dir(cfg.output_dir)
    sc = cfg.build_scenario()
    mesh, dt = _mesh_and_dt(cfg)
    disc = Discretization(mesh, sc)
    scfg = SchemeConfig(theta=cfg.theta, dt=dt, T=sc.T)
    init = initialize(disc)
    monitors = [StepMonitor(disc, init)] if cfg.emit_monitors else []
    traj = run(disc, scfg, monitors=monitors, initial=init, keep="last")
    final = traj.final
    files = _AtomicFiles(out)
    try:
        if cfg.emit_vtk:
            nv = mesh.num_vertices
            write_vtk(
                files.path(f"solution_t{_time_label(sc.T)}.vtk"),
                mesh,
                {
                    "u": final.u.reshape(-1, 2)[:nv],
                    "p": final.p,
                    "xi": final.xi,
                    "eta": final.eta,
                },
                title=f"{sc.name} n={cfg.n} theta={cfg.theta} t={_time_label(final.t)}",
            )
        if cfg.emit_monitors:
            rows = [[rec[c] for c in MONITOR_COLUMNS] for rec in traj.monitors]
            _write_csv(files.path("monitors.csv"), MONITOR_COLUMNS, rows)
            if cfg.pretty:
                print(_pretty(MONITOR_COLUMNS, rows[-5:]))
        files.commit()
    except BaseException:
        files.discard()
        raise
    log.info("run finished: %d steps, t=%g", final.step, final.t)
    return 0


RATE_HEADER = ("h", "L2_u", "rate", "H1_u", "rate", "L2_p", "rate", "H1_p", "rate")


def cmd_study(cfg: RunConfig) -> int:
    levels = cfg.mesh_list if cfg.mesh_list is not None else DEFAULT_STUDY_LEVELS
    if len(levels) < 2:
        raise ConfigError("study needs at least 2 mesh levels")
    out = _prepare_dir(cfg.output_dir)
    sc = cfg.build_scenario()
    policy = (lambda h: cfg.dt) if cfg.dt is not None else None
    table = convergence_study(sc, levels, theta=cfg.theta, dt_policy=policy, jobs=cfg.jobs)
    rows = table.rows()
    files = _AtomicFiles(out)
    try:
        _write_csv(files.path("rates.csv"), RATE_HEADER, rows)
        files.commit()
    except BaseException:
        files.discard()
        raise
    if cfg.pretty:
        print(_pretty(RATE_HEADER, rows))
    if u_is_discretely_exact(sc):
        print("note: the exact u is in the P2 space, so the u columns carry no interpolation error of u", file=sys.stderr)
    if table.failed:
        print(f"porofem: study aborted at {table.failed}; rates.csv holds the completed levels", file=sys.stderr)
        return 1
    return 0


def cmd_audit(cfg: RunConfig, points: int = 20) -> int:
    sc = cfg.build_scenario()
    if sc.f is None and sc.phi is None:
        print("scenario has no source terms to audit")
        return 0
    res = residual_audit(sc, npts=points)
    for key in ("f", "phi", "f1"):
        print(f"{key:4s} max relative discrepancy {res[key]:.3e}")
    return 0


ENERGY_HEADER = ("step", "t", "J", "S", "S_alt", "S_hat", "energy_identity", "energy_scale", "eta_conservation")


def cmd_energy(cfg: RunConfig, random_init: float | None = None) -> int:
    out = _prepare_dir(cfg.output_dir)
    sc = cfg.build_scenario()
    mesh, dt = _mesh_and_dt(cfg)
    disc = Discretization(mesh, sc)
    prm = disc.params
    consts = {"C1": 4 * prm.mu, "C2": prm.mu, "C4": prm.mu / 2}
    consts.update(cfg.energy_constants)
    scfg = SchemeConfig(theta=cfg.theta, dt=dt, T=sc.T)
    init = random_initial_state(disc, random_init) if random_init else initialize(disc)
    mon = StepMonitor(disc, init)
    traj = run(disc, scfg, monitors=[mon], initial=init)
    mlog = energy_monitor(traj, consts["C1"], consts["C2"], consts["C4"])
    rows = []
    for i, rec in enumerate(traj.monitors):
        rows.append(
            [rec["step"], rec["t"], mlog.J[i], mlog.S[i], mlog.S_alt[i], mlog.S_hat[i],
             rec["energy_identity"], rec["energy_scale"], rec["eta_conservation"]]
        )
    files = _AtomicFiles(out)
    try:
        _write_csv(files.path("energy.csv"), ENERGY_HEADER, rows)
        files.commit()
    except BaseException:
        files.discard()
        raise
    if cfg.pretty:
        print(_pretty(ENERGY_HEADER, rows))
    return 0


def main(argv=None) -> int:
    try:
        command, cfg, args = parse_config(argv)
    except ConfigError as exc:
        print(f"porofem: configuration error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if command == "run":
            return cmd_run(cfg)
        if command == "study":
            return cmd_study(cfg)
        if command == "audit":
            return cmd_audit(cfg, args.points)
        return cmd_energy(cfg, args.random_init)
    except ConfigError as exc:
        print(f"porofem: configuration error: {exc}", file=sys.stderr)
        return 2
    except (StepError, SolverError) as exc:
        print(f"porofem: step failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"porofem: invalid setup: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"porofem: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

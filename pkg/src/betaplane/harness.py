"""
Run configuration and orchestration: simulations, tangent analysis, the
zonal-limit experiment, parameter sweeps and the verification suite.

Configuration files are INI text with one section per concern::

    [spectral]
    nx = 64
    ny = 64

    [dynamics]
    epsilon = 0.01
    grashof = 2
    forcing = mixed

    [sweep]
    epsilons = 0.1, 0.01, 0.001
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .diagnostics import (
    CheckResult,
    ConvergenceWarning,
    EnergyHistory,
    bounded_check,
    check_energy_budget,
    check_fcheck_orthogonality,
    fit_power_law,
    report_csv,
    report_text,
)
from .dynamics import (
    CFLError,
    FlowParams,
    FlowState,
    Forcing,
    Observer,
    apply_coriolis,
    bilinear_B,
    choose_dt,
    evolve,
    initial_state,
    make_forcing,
    rhs,
    semigroup_apply,
)
from .limit1d import ZonalField1D, h1_distance, heat_step, heat_steady_state, steady_state_2d
from .spectral import (
    hm_norm,
    inner_product,
    l2_norm,
    make_lattice,
    project_nonzonal,
    project_zonal,
    random_field,
    to_physical,
    to_spectral,
)
from .tangent import (
    TangentRun,
    bbar_decomposition_check,
    projector_derivative_check,
    run_tangent,
    trace_breakdown,
    write_trace_csv,
)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class RunConfig:
    epsilon: float
    grashof: float
    nx: int = 32
    ny: int = 32
    forcing: str = "mixed"
    a: float = 1.0
    b: float = 1.0
    dt: float = 0.0  # 0 selects dt from the CFL rule
    dt_max: float = 1e-2
    t_burnin_min: float = 50.0
    t_burnin_max: float = 500.0
    burnin_window: float = 10.0
    burnin_threshold: float = 0.05
    t_horizon: float = 100.0
    t_tangent: float = 50.0
    n_tangent: int = 4
    reorth_stride: int = 10
    observer_stride: int = 10
    checkpoint_stride: int = 0
    seed: int = 0
    init_amplitude: float = 1.0
    steady_tol: float = 1e-9
    steady_t_max: float = 2000.0
    output_dir: str = "out"

    def __post_init__(self):
        positive = ("epsilon", "nx", "ny", "dt_max", "t_burnin_max", "burnin_window", "burnin_threshold",
                    "n_tangent", "reorth_stride", "observer_stride", "steady_tol", "steady_t_max")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}", name)
        non_negative = ("dt", "t_burnin_min", "t_horizon", "t_tangent", "checkpoint_stride",
                        "init_amplitude", "seed")
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}", name)
        if not self.grashof >= 1:
            raise ConfigError(f"grashof must be >= 1, got {self.grashof}", "grashof")
        if self.forcing not in ("mixed", "zonal", "zero"):
            raise ConfigError(f"forcing must be mixed, zonal or zero, got {self.forcing!r}", "forcing")
        try:
            lat = make_lattice(self.nx, self.ny)
        except ValueError as exc:
            raise ConfigError(str(exc), "nx") from None
        if self.n_tangent > lat.n_retained:
            raise ConfigError(f"n_tangent={self.n_tangent} exceeds the {lat.n_retained} retained modes",
                              "n_tangent")

    def digest(self) -> str:
        """Content hash of every field that affects results."""
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def lattice(self):
        return make_lattice(self.nx, self.ny)

    @property
    def params(self) -> FlowParams:
        return FlowParams(self.epsilon, self.grashof)

    def make_forcing(self) -> Forcing:
        return make_forcing(self.lattice, self.grashof, self.forcing, self.a, self.b)


@dataclass(frozen=True)
class SweepConfig:
    base: RunConfig
    epsilons: tuple
    grashofs: tuple
    workers: int = 1

    def __post_init__(self):
        for name in ("epsilons", "grashofs"):
            ladder = getattr(self, name)
            if not ladder:
                raise ConfigError(f"{name} ladder is empty", name)
            d = np.diff(ladder)
            if len(ladder) > 1 and not (np.all(d > 0) or np.all(d < 0)):
                raise ConfigError(f"{name} ladder must be strictly monotone", name)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", "workers")

    def points(self) -> list[RunConfig]:
        return [dataclasses.replace(self.base, epsilon=e, grashof=g)
                for g in self.grashofs for e in self.epsilons]


SECTIONS = {
    "spectral": ("nx", "ny"),
    "dynamics": ("epsilon", "grashof", "forcing", "a", "b", "dt", "dt_max", "t_burnin_min",
                 "t_burnin_max", "burnin_window", "burnin_threshold", "t_horizon",
                 "observer_stride", "checkpoint_stride", "seed", "init_amplitude"),
    "tangent": ("n_tangent", "reorth_stride", "t_tangent"),
    "limit": ("steady_tol", "steady_t_max"),
    "output": ("output_dir",),
    "sweep": ("epsilons", "grashofs", "workers"),
}
REQUIRED = ("epsilon", "grashof")


def _convert(name: str, raw: str, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"cannot read {name} = {raw!r} as {kind.__name__}", name) from None


def _ladder(name: str, raw: str) -> tuple:
    try:
        return tuple(float(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot read ladder {name} = {raw!r}", name) from None


def parse_config(text: str) -> tuple[RunConfig, SweepConfig | None]:
    """Parse INI text into a run config and, if present, a sweep config."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    kinds = {"int": int, "float": float, "str": str}
    values: dict = {}
    sweep: dict = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", section)
        for key, raw in cp.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", key)
            if section == "sweep":
                sweep[key] = int(_convert(key, raw, int)) if key == "workers" else _ladder(key, raw)
            else:
                values[key] = _convert(key, raw, kinds[types[key]])
    if "epsilons" in sweep:
        values.setdefault("epsilon", sweep["epsilons"][0])
    if "grashofs" in sweep:
        values.setdefault("grashof", sweep["grashofs"][0])
    for name in REQUIRED:
        if name not in values:
            raise ConfigError(f"missing required field {name!r} in [dynamics]", name)
    base = RunConfig(**values)
    if not sweep:
        return base, None
    sc = SweepConfig(base, sweep.get("epsilons", (base.epsilon,)),
                     sweep.get("grashofs", (base.grashof,)), sweep.get("workers", 1))
    return base, sc


def load_config(path) -> tuple[RunConfig, SweepConfig | None]:
    return parse_config(Path(path).read_text())


def regime_label(epsilon: float, grashof: float) -> str:
    """Regime annotation from the dimension-bound boundaries with all constants set to 1."""
    lg = 1.0 + math.log(grashof)
    if epsilon <= grashof ** -4.5 * lg ** -0.5:
        return "collapse"
    if epsilon <= grashof ** (-57 / 22) * lg ** (-39 / 88):
        return "regime1"
    if epsilon <= grashof ** (-31 / 12) * lg ** (-5 / 12):
        return "regime2"
    return "outside"


# ---------------------------------------------------------------- simulation

DIAG_COLUMNS = ("t", "phase", "norm_omega", "grad_norm_sq", "work", "norm_wtilde", "norm_zeta",
                "norm_wbar", "symmetry_defect")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return "" if v is None else str(v)


def write_csv(path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


@dataclass
class SimulationResult:
    config: RunConfig
    state: FlowState
    rows: list
    energy: EnergyHistory
    burnin_converged: bool
    t_burnin: float
    sup_wtilde: float
    limsup_zeta: float
    dt: float
    checks: list = field(default_factory=list)


def simulate(cfg: RunConfig, out_dir=None) -> SimulationResult:
    """Seeded run: burn-in until the windowed enstrophy settles, then a
    recorded horizon of ``t_horizon``.

    The zonal error is measured against the exact heat solution started
    from the zonal part of the initial vorticity.
    """
    lat, params = cfg.lattice, cfg.params
    forcing = cfg.make_forcing()
    state = initial_state(lat, params, cfg.init_amplitude, cfg.seed)
    wbar0 = ZonalField1D.from_2d(state.omega)
    fbar = ZonalField1D.from_2d(forcing.f)
    dt = cfg.dt if cfg.dt > 0 else cfg.dt_max
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows: list = []
    energy = EnergyHistory(cfg.grashof)
    horizon_stats = {"wtilde": 0.0, "zeta": 0.0}
    n_ckpt = [0]

    def record(s: FlowState, phase: int, buf: list):
        wbar_t = heat_step(wbar0, fbar, s.t) if s.t > 0 else wbar0
        zeta = ZonalField1D.from_2d(s.omega) - wbar_t
        wt = l2_norm(project_nonzonal(s.omega))
        g2 = hm_norm(s.omega, 1) ** 2
        work = inner_product(s.omega, forcing.f)
        buf.append((s.t, phase, l2_norm(s.omega), g2, work, wt, zeta.norm(),
                    wbar_t.norm(), s.omega.symmetry_defect()))

    def segment(s: FlowState, t_end: float, phase: int):
        nonlocal dt
        while True:
            buf: list = []
            obs = [Observer(lambda x: record(x, phase, buf), cfg.observer_stride)]
            try:
                new = evolve(s, forcing, t_end, dt, obs)
            except CFLError as exc:
                dt = min(dt / 2, exc.suggested_dt)
                continue
            return new, buf

    # burn-in in windows
    t_start = state.t
    means: list[float] = []
    converged = False
    record(state, 0, rows)
    while state.t - t_start < cfg.t_burnin_max - 1e-9:
        state, buf = segment(state, state.t + cfg.burnin_window, 0)
        rows.extend(buf)
        if buf:
            means.append(float(np.mean([r[2] ** 2 for r in buf])))
        if state.t - t_start >= cfg.t_burnin_min - 1e-9 and len(means) >= 2:
            m0, m1 = means[-2], means[-1]
            scale = max(abs(m0), abs(m1))
            if scale < 1e-300 or abs(m1 - m0) <= cfg.burnin_threshold * scale:
                converged = True
                break
    if not converged:
        warnings.warn("burn-in did not reach a stationary window", ConvergenceWarning, stacklevel=2)
    t_burn = state.t
    # recorded horizon
    t_end = state.t + cfg.t_horizon
    n_seg = max(1, int(cfg.checkpoint_stride and round(cfg.t_horizon / (cfg.checkpoint_stride * dt))))
    bounds = np.linspace(state.t, t_end, n_seg + 1)[1:]
    energy.record(state.t, state.omega, forcing.f)
    for b in bounds:
        state, buf = segment(state, float(b), 1)
        for r in buf:
            rows.append(r)
        if out is not None and cfg.checkpoint_stride:
            n_ckpt[0] += 1
            checkpoint.save_checkpoint(out / f"checkpoint_{n_ckpt[0]:04d}.bpln", state)
    for r in rows:
        if r[1] == 1:
            horizon_stats["wtilde"] = max(horizon_stats["wtilde"], r[5])
            horizon_stats["zeta"] = max(horizon_stats["zeta"], r[6])
    # energy averages use the observer samples of the horizon
    for r in rows:
        if r[1] == 1 and r[0] > energy.dissipation.segments[0][0][-1]:
            energy.dissipation.update(r[0], r[3])
            energy.work.update(r[0], r[4])
    checks = []
    if cfg.t_horizon >= 10:
        checks = check_energy_budget(energy)
    res = SimulationResult(cfg, state, rows, energy, converged, t_burn,
                           horizon_stats["wtilde"], horizon_stats["zeta"], dt, checks)
    if out is not None:
        write_csv(out / "diagnostics.csv", DIAG_COLUMNS, rows)
        checkpoint.save_checkpoint(out / "state.bpln", state)
        if checks:
            (out / "report.txt").write_text(report_text(checks))
            (out / "checks.csv").write_text(report_csv(checks))
    return res


# ---------------------------------------------------------------- tangent / limit

def tangent_analysis(cfg: RunConfig, state: FlowState, out_dir=None) -> TangentRun:
    forcing = cfg.make_forcing()
    dt = cfg.dt if cfg.dt > 0 else choose_dt(state, cfg.dt_max)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        run = run_tangent(state, forcing, cfg.n_tangent, cfg.t_tangent, dt, cfg.reorth_stride)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trace_csv(out / "trace.csv", run.rows)
        summary = run.summary()
        summary["split_residual_max"] = max(r.split_residual for r in run.rows)
        summary["a0_residual_max"] = max(r.a0_residual for r in run.rows)
        (out / "tangent_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return run


LIMIT_COLUMNS = ("epsilon", "grashof", "norm_wtilde_star", "norm_zeta_star", "h1_distance",
                 "rhs_residual", "converged")


def limit_analysis(cfg: RunConfig, initial: FlowState | None = None) -> dict:
    """Steady state of the 2D flow compared with the zonal heat steady state."""
    forcing = cfg.make_forcing()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        st = steady_state_2d(cfg.params, forcing, cfg.steady_tol, cfg.steady_t_max,
                             dt=cfg.dt if cfg.dt > 0 else None, initial=initial)
    wstar = heat_steady_state(ZonalField1D.from_2d(forcing.f))
    resid = l2_norm(rhs(st, forcing))
    return {
        "epsilon": cfg.epsilon,
        "grashof": cfg.grashof,
        "norm_wtilde_star": l2_norm(project_nonzonal(st.omega)),
        "norm_zeta_star": (ZonalField1D.from_2d(st.omega) - wstar).norm(),
        "h1_distance": h1_distance(st.omega, wstar),
        "rhs_residual": resid,
        "converged": bool(resid < cfg.steady_tol and not caught),
        "state": st,
    }


# ---------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ("epsilon", "grashof", "regime", "sup_wtilde", "limsup_zeta", "h1_distance", "lambda_1",
                 "n_star", "kaplan_yorke", "steady_converged", "burnin_converged", "error")


def sweep_point(cfg: RunConfig) -> dict:
    """Simulate, analyse tangents and locate the steady state for one point."""
    try:
        sim = simulate(cfg)
        tan = tangent_analysis(cfg, sim.state)
        lim = limit_analysis(cfg, sim.state)
        return {
            "epsilon": cfg.epsilon, "grashof": cfg.grashof,
            "regime": regime_label(cfg.epsilon, cfg.grashof),
            "sup_wtilde": sim.sup_wtilde, "limsup_zeta": sim.limsup_zeta,
            "h1_distance": lim["h1_distance"], "lambda_1": float(tan.exponents[0]),
            "n_star": tan.n_star, "kaplan_yorke": tan.kaplan_yorke,
            "steady_converged": lim["converged"], "burnin_converged": sim.burnin_converged,
            "error": "",
        }
    except Exception as exc:  # a failing point must not stop the sweep
        return {"epsilon": cfg.epsilon, "grashof": cfg.grashof,
                "regime": regime_label(cfg.epsilon, cfg.grashof), "error": f"{type(exc).__name__}: {exc}"}


FIT_COLUMNS = ("grashof", "observable", "slope", "intercept", "max_rel_residual", "n_points")


def fit_rows(rows: Sequence[dict]) -> list[tuple]:
    out = []
    for g in sorted({r["grashof"] for r in rows}):
        sub = [r for r in rows if r["grashof"] == g and not r.get("error")]
        for name in ("sup_wtilde", "limsup_zeta", "h1_distance", "n_star"):
            pairs = [(r["epsilon"], r[name]) for r in sub
                     if r.get(name) is not None and r[name] > 0]
            if len(pairs) >= 3:
                fit = fit_power_law(pairs)
                out.append((g, name, fit.slope, fit.intercept, fit.max_rel_residual, len(pairs)))
    return out


def run_sweep(sc: SweepConfig, out_dir, workers: int | None = None, resume: bool = False) -> list[dict]:
    """Run every ladder point, flushing each finished row to ``rows/<hash>.json``.

    With ``resume`` rows already on disk are reused instead of recomputed.
    """
    out = Path(out_dir)
    rows_dir = out / "rows"
    rows_dir.mkdir(parents=True, exist_ok=True)
    points = sc.points()
    done: dict[str, dict] = {}
    todo = []
    for p in points:
        path = rows_dir / f"{p.digest()}.json"
        if resume and path.exists():
            done[p.digest()] = json.loads(path.read_text())
        else:
            todo.append(p)

    def flush(p: RunConfig, row: dict):
        path = rows_dir / f"{p.digest()}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(row, sort_keys=True))
        tmp.replace(path)
        done[p.digest()] = row

    n_workers = workers or sc.workers
    if n_workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for p, row in zip(todo, pool.map(sweep_point, todo)):
                flush(p, row)
    else:
        for p in todo:
            flush(p, sweep_point(p))
    rows = [done[p.digest()] for p in points]
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, [[r.get(c) for c in SWEEP_COLUMNS] for r in rows])
    write_csv(out / "fits.csv", FIT_COLUMNS, fit_rows(rows))
    return rows


# ---------------------------------------------------------------- verification

def verify_suite(nx: int = 32, seed: int = 0) -> list[CheckResult]:
    """Operator identities and trace checks at desk scale.

    Every check is deterministic; the list order is fixed.
    """
    rng = np.random.default_rng(seed)
    lat = make_lattice(nx, nx)
    eps = 0.1
    results: list[CheckResult] = []

    def add(name, value, bound):
        results.append(bounded_check(name, float(value), float(bound)))

    th = random_field(lat, rng, 1.0, -1.0)
    th1 = random_field(lat, rng, 1.0, -1.0)
    lt = apply_coriolis(th, eps)
    add("coriolis_skewness", abs(inner_product(lt, th)) / l2_norm(th) ** 2, 1e-12)
    b = bilinear_B(th1, th)
    add("advection_antisymmetry", abs(inner_product(b, th)) / (l2_norm(th1) * l2_norm(th) ** 2), 1e-10)
    z1, z2 = project_zonal(th1), project_zonal(th)
    add("zonal_cancellation", float(np.max(np.abs(bilinear_B(z1, z2).coeffs))), 1e-300)
    t_rand = float(rng.uniform(-10, 10))
    add("semigroup_unitarity", abs(l2_norm(semigroup_apply(th, t_rand, eps)) - l2_norm(th)) / l2_norm(th), 1e-12)
    forcing = make_forcing(lat, 2.0)
    add("fcheck_orthogonality", check_fcheck_orthogonality(forcing), 1e-12)
    add("forcing_symmetry_defect", forcing.f.symmetry_defect(), 1e-12)
    grid = to_physical(th)
    parseval = abs(np.sqrt(4 * np.pi**2 * np.mean(grid**2)) - l2_norm(th)) / l2_norm(th)
    add("parseval", parseval, 1e-10)
    add("round_trip", float(np.max(np.abs(to_spectral(grid, lat).coeffs - th.coeffs))), 1e-12)
    params = FlowParams(eps, 2.0)
    state = FlowState(random_field(lat, rng, 3.0, -2.0, symmetric=True), 0.0, params)
    r = rhs(state, forcing)
    energy = inner_product(r, state.omega) - (inner_product(forcing.f, state.omega) - hm_norm(state.omega, 1) ** 2)
    add("energy_identity", abs(energy) / hm_norm(state.omega, 1) ** 2, 1e-8)
    state = evolve(state, forcing, 1.0, 0.01)
    run = run_tangent(state, forcing, 6, 1.0, 0.01, reorth_stride=10)
    st, bundle = run.state, run.bundle
    tb = trace_breakdown(st, bundle, forcing)
    add("trace_split", tb.split_residual, 1e-8)
    add("trace_a0", tb.a0_residual, 1e-8)
    add("projector_derivative", projector_derivative_check(st, bundle, forcing, 1e-3), 1e-3)
    add("bbar_decomposition", bbar_decomposition_check(st, bundle, forcing, 1e-3), 1e-3)
    add("symmetry_preserved", st.omega.symmetry_defect(), 1e-10)
    return results


def verify(out_dir=None) -> list[CheckResult]:
    results = verify_suite()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text(report_text(results))
        (out / "verify.csv").write_text(report_csv(results))
    return results

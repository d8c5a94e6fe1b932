"""
Tangent dynamics: N-volumes under the linearised flow, trace diagnostics,
Lyapunov exponents and the search for the smallest expanding N.

Perturbations are evolved in the original frame,

    d dx/dt = -J(t) dx - L_eps dx,   J = -Lap + B(omega, .) + B(., omega),

and the rotating frame ``dz = exp(t L_eps) dx`` is reached by the unitary
semigroup when needed.  Since that map is unitary, orthonormal bases,
projector traces and volumes agree in both frames.  The basis vectors
``phis`` held by a bundle are the original-frame vectors, i.e. the
``exp(-t L_eps) phi_j`` that appear in the trace formulas.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .diagnostics import ConvergenceWarning, RunningTimeAverage, windowed_variation
from .dynamics import (
    Engine,
    FlowState,
    Forcing,
    _to_grid,
    advection_terms,
    choose_dt,
    semigroup_factor,
)
from .spectral import AREA, SpectralField, WavenumberLattice, inner, velocity_coeffs


class DegenerateDirectionWarning(UserWarning):
    """A tangent direction collapsed below the rank tolerance."""


RANK_TOL = 1e-14


# ---------------------------------------------------------------- bundles

def tangent_modes(lattice: WavenumberLattice, n: int) -> np.ndarray:
    """The first ``n`` realified unit modes, ordered by ``(|k|^2, k1, k2)``.

    Each half-plane wavevector contributes ``cos(k.x)`` then ``sin(k.x)``.
    """
    if not 1 <= n <= lattice.n_retained:
        raise ValueError(f"n_tangent must be in [1, {lattice.n_retained}], got {n}")
    m1, m2 = lattice.kmax
    half = [(k1, k2) for k1 in range(0, m1 + 1) for k2 in range(-m2, m2 + 1)
            if k1 > 0 or k2 > 0]
    half.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    out = np.zeros((n,) + lattice.shape, dtype=complex)
    norm = math.sqrt(AREA / 2)
    j = 0
    for k in half:
        row, col = k[1] % lattice.ny, k[0]
        for val in (0.5, -0.5j):
            if j == n:
                return out
            out[j, row, col] += val / norm
            if col == 0:
                out[j, (-row) % lattice.ny, 0] += np.conj(val) / norm
            j += 1
    return out


@dataclass(eq=False)
class TangentBundle:
    """``N`` tangent vectors with their orthonormalised span and volume record.

    ``deltas`` and ``phis`` are stacked half spectra of shape ``(N, ny, nx//2+1)``.
    """

    lattice: WavenumberLattice
    deltas: np.ndarray
    t: float = 0.0
    phis: np.ndarray | None = None
    logvol: float = 0.0
    lyap_sums: np.ndarray | None = None
    degenerate: tuple = ()

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=complex)
        if self.deltas.ndim != 3 or self.deltas.shape[1:] != self.lattice.shape:
            raise ValueError(f"deltas must have shape (N, {self.lattice.shape}), got {self.deltas.shape}")
        if self.lyap_sums is None:
            self.lyap_sums = np.zeros(self.n)

    @property
    def n(self) -> int:
        return self.deltas.shape[0]

    @property
    def delta_fields(self) -> list[SpectralField]:
        return [SpectralField(self.lattice, d) for d in self.deltas]

    @property
    def phi_fields(self) -> list[SpectralField]:
        self._require_basis()
        return [SpectralField(self.lattice, p) for p in self.phis]

    @property
    def psis(self) -> np.ndarray:
        """Grid velocities ``psi_j = -grad_perp (-Lap)^{-1} phi_j``, shape ``(2, N, ny, nx)``."""
        self._require_basis()
        u1, u2 = velocity_coeffs(self.phis, self.lattice)
        return _to_grid(np.stack([u1, u2]), self.lattice)

    def _require_basis(self):
        if self.phis is None:
            raise ValueError("bundle has no orthonormal basis yet; call reorthonormalize")

    def copy(self) -> "TangentBundle":
        return replace(self, deltas=self.deltas.copy(),
                       phis=None if self.phis is None else self.phis.copy(),
                       lyap_sums=self.lyap_sums.copy())


def make_bundle(lattice: WavenumberLattice, n: int, t: float = 0.0) -> TangentBundle:
    """Bundle started on the lowest ``n`` realified modes (already orthonormal)."""
    modes = tangent_modes(lattice, n)
    return TangentBundle(lattice, modes, t, modes.copy())


def _realify(c: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    """Real column vectors whose dot products are the L2 inner products."""
    m = lat.mask
    s = np.sqrt(AREA * np.broadcast_to(lat.weights, lat.shape)[m])
    v = c[:, m]
    return np.concatenate([s * v.real, s * v.imag], axis=1).T


def reorthonormalize(bundle: TangentBundle) -> tuple[TangentBundle, np.ndarray]:
    """QR step: orthonormal ``phis``, stretches ``R_jj`` and updated volume.

    The new bundle continues from ``deltas = phis``.
    """
    a = _realify(bundle.deltas, bundle.lattice)
    r = np.linalg.qr(a, mode="r")
    sign = np.where(np.diag(r) < 0, -1.0, 1.0)
    r = sign[:, None] * r
    stretches = np.diag(r).copy()
    bad = tuple(int(j) for j in np.flatnonzero(stretches < RANK_TOL))
    if bad:
        warnings.warn(f"degenerate tangent directions {bad}", DegenerateDirectionWarning, stacklevel=2)
        r[bad, bad] = RANK_TOL
    rinv = sla.solve_triangular(r, np.eye(bundle.n))
    phis = np.einsum("ij,i...->j...", rinv, bundle.deltas)
    logs = np.log(np.maximum(stretches, RANK_TOL))
    out = TangentBundle(bundle.lattice, phis, bundle.t, phis.copy(),
                        bundle.logvol + float(np.sum(logs)), bundle.lyap_sums + logs,
                        bundle.degenerate + bad)
    return out, stretches


def gram_volume(deltas: np.ndarray, lattice: WavenumberLattice) -> float:
    """``sqrt(det G)`` with ``G_ij = (delta_i, delta_j)``."""
    g = inner(deltas[:, None], deltas[None, :], lattice)
    return float(math.sqrt(max(np.linalg.det(g), 0.0)))


# ---------------------------------------------------------------- linearisation

def _engine(state: FlowState, forcing: Forcing | None = None) -> Engine:
    return Engine(state.lattice, state.params, forcing)


def linearized_rhs(state: FlowState, dx: SpectralField) -> SpectralField:
    """``-B(omega, dx) - B(dx, omega) + Lap dx - L_eps dx``."""
    state.omega._check(dx)
    eng = _engine(state)
    aux = advection_terms(state.omega.coeffs, state.lattice)
    out = eng.jvp(aux, dx.coeffs) + eng.symbol * dx.coeffs
    return SpectralField(state.lattice, out)


def apply_J(eng: Engine, aux: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``J d = -Lap d + B(omega, d) + B(d, omega)`` for stacked ``d``."""
    return eng.lattice.ksq * d - eng.jvp(aux, d)


def joint_step(eng: Engine, c: np.ndarray, t: float, dt: float, deltas: np.ndarray,
               cfl: float | None = 1.0, frozen: bool = False):
    """Advance base state and tangent vectors together by one ETDRK4 step.

    The tangent update is the exact derivative of the base ETDRK4 map, so
    each stage uses the Jacobian at the matching base stage state.  With
    ``frozen`` the base state is held fixed and only time advances.
    """
    e, e2, q, f1, f2, f3 = eng.coefficients(dt)
    if frozen:
        _, aux = eng.nonlinear(c, t)
        auxes, new_c = [aux] * 4, c
    else:
        new_c, stages = eng.step(c, t, dt, cfl)
        auxes = [s[2] for s in stages]
    d = deltas
    nd = eng.jvp(auxes[0], d)
    da = e2 * d + q * nd
    na = eng.jvp(auxes[1], da)
    db = e2 * d + q * na
    nb = eng.jvp(auxes[2], db)
    dc = e2 * da + q * (2 * nb - nd)
    nc = eng.jvp(auxes[3], dc)
    new_d = e * d + f1 * nd + 2 * f2 * (na + nb) + f3 * nc
    return new_c, new_d


def step_tangent(state: FlowState, bundle: TangentBundle, forcing: Forcing, dt: float,
                 cfl: float | None = 1.0) -> tuple[FlowState, TangentBundle]:
    """One joint step; returns the advanced state and bundle."""
    if abs(state.t - bundle.t) > 1e-12 * max(1.0, abs(state.t)):
        raise ValueError(f"state time {state.t} and bundle time {bundle.t} differ")
    eng = _engine(state, forcing)
    c, d = joint_step(eng, state.omega.coeffs, state.t, dt, bundle.deltas, cfl)
    new_state = state.with_omega(SpectralField(state.lattice, c), state.t + dt)
    return new_state, replace(bundle, deltas=d, t=state.t + dt, phis=None,
                              lyap_sums=bundle.lyap_sums.copy())


def step_tangent_z(eng: Engine, eta: np.ndarray, t: float, dt: float, dz: np.ndarray):
    """Joint ETDRK4 step in the rotating frame.

    The base is advanced in its conjugated form ``eta = exp(tL) omega`` and
    the tangents obey ``dz/dt = -exp(tL) (J(t)) exp(-tL) dz``; only
    viscosity is treated exactly.
    """
    lat, eps = eng.lattice, eng.params.epsilon
    nb = eng.f.shape
    coeffs = eng.coefficients(dt, "eta")
    n_d = dz.shape[0]

    def nonlinear(y, s):
        fwd = semigroup_factor(lat, s, eps)
        w = np.conj(fwd) * y[0]
        n_w, aux = eng.nonlinear(w, s)
        n_d_ = eng.jvp(aux, np.conj(fwd) * y[1:])
        return fwd * np.concatenate([n_w[None], n_d_]), None

    y = np.concatenate([eta[None], dz])
    assert y.shape[1:] == nb and y.shape[0] == n_d + 1
    from .dynamics import etdrk4_step

    new, _ = etdrk4_step(y, t, dt, coeffs, nonlinear)
    return new[0], new[1:]


# ---------------------------------------------------------------- traces

@dataclass(frozen=True)
class TraceBreakdown:
    """Trace terms of the linearised operator restricted to the tangent span."""

    t: float
    tr_lap: float
    tr_a0: float
    tr_bbar: float
    tr_btilde: float
    tr_total: float
    tr_bbar1: complex
    tr_bbar2: complex
    logvol: float = 0.0

    @property
    def split_residual(self) -> float:
        """Relative defect of ``total = lap + bbar + btilde`` (``a0`` excluded)."""
        return abs(self.tr_total - self.tr_lap - self.tr_bbar - self.tr_btilde) / self.scale

    @property
    def a0_residual(self) -> float:
        return abs(self.tr_a0) / self.scale

    @property
    def scale(self) -> float:
        return max(abs(self.tr_lap) + abs(self.tr_bbar) + abs(self.tr_btilde), 1e-300)

    def row(self) -> list:
        return [self.t, self.tr_lap, self.tr_a0, self.tr_bbar, self.tr_btilde, self.tr_total,
                self.tr_bbar1.real, self.tr_bbar1.imag, self.tr_bbar2.real, self.tr_bbar2.imag,
                self.logvol]


TRACE_COLUMNS = ("t", "tr_lap", "tr_a0", "tr_bbar", "tr_btilde", "tr_total", "tr_bbar1_re",
                 "tr_bbar1_im", "tr_bbar2_re", "tr_bbar2_im", "logvol")


def _grid_mean(x: np.ndarray) -> np.ndarray:
    # grid quadrature is exact for products of three retained fields
    return AREA * np.mean(x, axis=(-2, -1))


def zonal_shear(c: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    """Grid values of ``d2`` applied to the zonal part of ``c``."""
    z = np.zeros_like(c)
    z[:, 0] = c[:, 0]
    return _to_grid(1j * lat.k2 * z, lat)


@dataclass(frozen=True)
class _Terms:
    lap: np.ndarray
    a0: np.ndarray
    bbar: np.ndarray
    btilde: np.ndarray
    total: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


def trace_terms(eng: Engine, c: np.ndarray, chis: np.ndarray, dwbar: np.ndarray | None = None) -> _Terms:
    """Per-direction contributions ``(T chi_j, chi_j)`` of every trace term.

    ``dwbar`` is the zonal tendency ``d omega_bar / dt`` (half spectrum); when
    omitted the ``s2`` entries are zero.
    """
    lat = eng.lattice
    aux = advection_terms(c, lat)
    g = advection_terms(chis, lat)  # u1, u2, d1 chi, d2 chi of each chi
    chi = _to_grid(chis, lat)
    wbar = np.zeros_like(c)
    wbar[:, 0] = c[:, 0]
    gbar = _to_grid(np.stack([1j * lat.k1 * wbar, 1j * lat.k2 * wbar]), lat)
    gtil = aux[2:] - gbar
    a0 = _grid_mean((aux[0] * g[2] + aux[1] * g[3]) * chi)
    bbar = _grid_mean((g[0] * gbar[0] + g[1] * gbar[1]) * chi)
    btil = _grid_mean((g[0] * gtil[0] + g[1] * gtil[1]) * chi)
    kc = np.sqrt(lat.ksq) * chis
    lap = inner(kc, kc, lat)
    total = inner(apply_J(eng, aux, chis), chis, lat)
    s1 = _grid_mean(gbar[1] * chi**2)
    if dwbar is None:
        s2 = np.zeros_like(s1)
    else:
        s2 = _grid_mean(zonal_shear(dwbar, lat) * chi**2)
    return _Terms(lap, a0, bbar, btil, total, s1, s2)


def zonal_tendency(eng: Engine, c: np.ndarray) -> np.ndarray:
    n, _ = eng.nonlinear(c)
    out = np.zeros_like(c)
    out[:, 0] = (n + eng.symbol * c)[:, 0]
    return out


def trace_breakdown(state: FlowState, bundle: TangentBundle, forcing: Forcing) -> TraceBreakdown:
    """Trace of each piece of the linearised operator on span(phis)."""
    bundle._require_basis()
    eng = _engine(state, forcing)
    c = state.omega.coeffs
    tt = trace_terms(eng, c, bundle.phis, zonal_tendency(eng, c))
    return TraceBreakdown(state.t, float(tt.lap.sum()), float(tt.a0.sum()), float(tt.bbar.sum()),
                          float(tt.btilde.sum()), float(tt.total.sum()),
                          0.5j * float(tt.s1.sum()), 0.5j * float(tt.s2.sum()), bundle.logvol)


def write_trace_csv(path, rows: Sequence[TraceBreakdown]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([f"{v:.17g}" for v in r.row()])


def dg_ratio(bundle: TangentBundle) -> float:
    """``|| sum_j |psi_j|^2 ||_inf / (1 + log Tr[-Lap P_N])``."""
    psi = bundle.psis
    dens = np.sum(psi[0] ** 2 + psi[1] ** 2, axis=0)
    kc = np.sqrt(bundle.lattice.ksq) * bundle.phis
    tr = float(np.sum(inner(kc, kc, bundle.lattice)))
    return float(np.max(dens)) / (1.0 + math.log(tr))


# ---------------------------------------------------------------- identity checks

def _orthonormal(deltas: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    return reorthonormalize(TangentBundle(lat, deltas))[0].phis


def _project(basis: np.ndarray, v: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    """Orthogonal projection of stacked ``v`` onto span(basis)."""
    coef = inner(v[:, None], basis[None, :], lat)
    return np.einsum("ij,j...->i...", coef, basis)


@dataclass
class _Triple:
    """Bases and states at ``s - dt``, ``s``, ``s + dt``."""

    dt: float
    cs: list
    bases: list
    t_mid: float


def _triple(state: FlowState, bundle: TangentBundle, forcing: Forcing, dt: float,
            frozen: bool = False) -> tuple[Engine, _Triple]:
    eng = _engine(state, forcing)
    c, d, t = state.omega.coeffs, bundle.deltas, state.t
    cs, bases = [c], [_orthonormal(d, state.lattice)]
    for _ in range(2):
        c, d = joint_step(eng, c, t, dt, d, cfl=None, frozen=frozen)
        t += dt
        cs.append(c)
        bases.append(_orthonormal(d, state.lattice))
    return eng, _Triple(dt, cs, bases, state.t + dt)


def projector_derivative_check(state: FlowState, bundle: TangentBundle, forcing: Forcing,
                               dt: float, h: SpectralField | None = None,
                               frozen: bool = False) -> float:
    """Relative residual of ``(dP/ds) P h = -(I - P) A P h`` in the rotating frame.

    The bundle is advanced twice by ``dt`` and the identity is evaluated at
    the middle time by central differences.  ``h`` defaults to ``phi_1``.
    """
    eng, tri = _triple(state, bundle, forcing, dt, frozen)
    lat = state.lattice
    p0, p1, p2 = tri.bases
    if h is None:
        g = p1[:1]
    else:
        # h is given in the rotating frame at the middle time
        back = np.conj(semigroup_factor(lat, tri.t_mid, state.params.epsilon))
        g = _project(p1, back * h.coeffs[None], lat)
        if math.sqrt(float(inner(g, g, lat)[0])) < 1e-14 * max(
                math.sqrt(float(inner(h.coeffs, h.coeffs, lat))), 1e-300):
            return 0.0
    # everything mapped to the original frame at the middle time
    rot = semigroup_factor(lat, dt, state.params.epsilon)
    fwd = rot * _project(p2, np.conj(rot) * g, lat)
    bwd = np.conj(rot) * _project(p0, rot * g, lat)
    lhs = (fwd - bwd) / (2 * dt)
    aux = advection_terms(tri.cs[1], lat)
    jg = apply_J(eng, aux, g)
    qjg = jg - _project(p1, jg, lat)
    res = lhs + qjg
    den = math.sqrt(float(inner(jg, jg, lat)[0]))
    return math.sqrt(float(inner(res, res, lat)[0])) / den


@dataclass(frozen=True)
class BbarDecomposition:
    """Both sides of the zonal-trace decomposition at one time.

    ``tr_bbar`` should equal ``eps * (-ds_s1/2 + s2/2 + s3)`` where
    ``s1 = sum_j (dy wbar, chi_j^2)``, ``s2`` the same with ``ds dy wbar`` and
    ``s3 = -sum_j (dy wbar (I-P) J chi_j, chi_j)``.  In operator language
    ``tr_bbar1 = (i/2) s1``, ``tr_bbar2 = (i/2) s2`` and
    ``Tr[P B1 dP/ds] = (i/2) s3``, so ``i tr_bbar = eps (-d/ds tr_bbar1
    + 2 Tr[P B1 dP/ds] + tr_bbar2)``.
    """

    tr_bbar: float
    ds_s1: float
    s2: float
    s3: float
    s3_fd: float
    epsilon: float

    @property
    def rhs(self) -> float:
        return self.epsilon * (-0.5 * self.ds_s1 + 0.5 * self.s2 + self.s3)

    @property
    def rhs_fd(self) -> float:
        return self.epsilon * (-0.5 * self.ds_s1 + 0.5 * self.s2 + self.s3_fd)

    @property
    def scale(self) -> float:
        return abs(self.tr_bbar) + self.epsilon * (0.5 * abs(self.ds_s1) + 0.5 * abs(self.s2) + abs(self.s3))

    @property
    def residual(self) -> float:
        return abs(self.tr_bbar - self.rhs) / self.scale if self.scale > 0 else 0.0

    @property
    def residual_fd(self) -> float:
        return abs(self.tr_bbar - self.rhs_fd) / self.scale if self.scale > 0 else 0.0


def bbar_decomposition(state: FlowState, bundle: TangentBundle, forcing: Forcing, dt: float,
                       frozen: bool = False) -> BbarDecomposition:
    eng, tri = _triple(state, bundle, forcing, dt, frozen)
    lat, eps = state.lattice, state.params.epsilon
    p0, p1, p2 = tri.bases
    c1 = tri.cs[1]
    dwbar = np.zeros_like(c1) if frozen else zonal_tendency(eng, c1)
    mid = trace_terms(eng, c1, p1, dwbar)
    s1_ends = [float(trace_terms(eng, c, p).s1.sum()) for c, p in ((tri.cs[0], p0), (tri.cs[2], p2))]
    ds_s1 = (s1_ends[1] - s1_ends[0]) / (2 * dt)
    aux = advection_terms(c1, lat)
    gy = zonal_shear(c1, lat)
    chi = _to_grid(p1, lat)
    jp = apply_J(eng, aux, p1)
    qjp = jp - _project(p1, jp, lat)
    s3 = -float(_grid_mean(gy * _to_grid(qjp, lat) * chi).sum())
    rot = semigroup_factor(lat, dt, eps)
    dp = (rot * _project(p2, np.conj(rot) * p1, lat) - np.conj(rot) * _project(p0, rot * p1, lat)) / (2 * dt)
    s3_fd = float(_grid_mean(gy * _to_grid(dp, lat) * chi).sum())
    return BbarDecomposition(float(mid.bbar.sum()), ds_s1, float(mid.s2.sum()), s3, s3_fd, eps)


def bbar_decomposition_check(state: FlowState, bundle: TangentBundle, forcing: Forcing,
                             dt: float, frozen: bool = False) -> float:
    """Relative residual of the zonal-trace decomposition (analytic projector derivative)."""
    return bbar_decomposition(state, bundle, forcing, dt, frozen).residual


@dataclass(frozen=True)
class VolumeTraceCheck:
    dts: tuple
    residuals: tuple

    @property
    def orders(self) -> tuple:
        r = self.residuals
        return tuple(math.log2(r[i] / r[i + 1]) for i in range(len(r) - 1))


def volume_trace_residual(state: FlowState, forcing: Forcing, n: int, s: float, dt: float,
                          t0: float | None = None) -> float:
    """``|d(log V)/dt + Tr[A P_N]|`` at time ``s`` by central differences.

    The bundle starts on the lowest modes at ``t0`` (default: ``state.t``)
    and is integrated with step ``dt``; ``s - t0`` must be a multiple of ``dt``.
    """
    t0 = state.t if t0 is None else t0
    if t0 != state.t:
        raise ValueError("t0 must equal the state time")
    n_steps = round((s - t0) / dt)
    if n_steps < 1 or abs(n_steps * dt - (s - t0)) > 1e-9 * max(1.0, s):
        raise ValueError(f"(s - t0) = {s - t0} is not a positive multiple of dt = {dt}")
    eng = _engine(state, forcing)
    c, t = state.omega.coeffs, state.t
    bundle = make_bundle(state.lattice, n, t)
    d = bundle.deltas
    logv = 0.0
    record = {-1: (c, d, logv)} if n_steps == 1 else {}
    for i in range(1, n_steps + 2):
        c, d = joint_step(eng, c, t, dt, d, cfl=None)
        t = t0 + i * dt
        b, _ = reorthonormalize(TangentBundle(state.lattice, d, t))
        logv += b.logvol
        d = b.deltas
        if i >= n_steps - 1:
            record[i - n_steps] = (c, d, logv)
    c_mid, phis, _ = record[0]
    tr = float(trace_terms(eng, c_mid, phis).total.sum())
    return abs((record[1][2] - record[-1][2]) / (2 * dt) + tr)


def volume_trace_check(state: FlowState, forcing: Forcing, n: int, s: float,
                       dts: Sequence[float] = (0.02, 0.01, 0.005)) -> VolumeTraceCheck:
    res = tuple(volume_trace_residual(state, forcing, n, s, dt) for dt in dts)
    return VolumeTraceCheck(tuple(dts), res)


# ---------------------------------------------------------------- long runs

@dataclass
class TangentRun:
    """Outcome of a long tangent integration after burn-in."""

    exponents: np.ndarray
    exponent_errbars: np.ndarray
    kaplan_yorke: float
    mean_traces: np.ndarray
    trace_errbars: np.ndarray
    mean_lap: np.ndarray
    weyl: np.ndarray
    n_star: int | None
    converged: bool
    state: FlowState
    bundle: TangentBundle
    rows: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "n_star": self.n_star,
            "lambda_1": float(self.exponents[0]),
            "kaplan_yorke": self.kaplan_yorke,
            "exponents": [float(x) for x in self.exponents],
            "mean_traces": [float(x) for x in self.mean_traces],
            "converged": self.converged,
        }


def kaplan_yorke(exponents: Sequence[float]) -> float:
    """``j + sum_{i<=j} lam_i / |lam_{j+1}|`` with ``j`` the last non-negative partial sum."""
    lam = np.sort(np.asarray(exponents, dtype=float))[::-1]
    if lam.size == 0 or lam[0] < 0:
        return 0.0
    partial = np.cumsum(lam)
    j = int(np.max(np.flatnonzero(partial >= 0))) + 1
    if j == lam.size:
        return float(j)
    return float(j + partial[j - 1] / abs(lam[j]))


def weyl_lower_bound(lattice: WavenumberLattice, n: int) -> np.ndarray:
    """Cumulative sums of the ``n`` smallest eigenvalues of ``-Lap`` on the retained lattice."""
    modes = tangent_modes(lattice, n)
    ev = np.sum(lattice.ksq * np.abs(modes) ** 2 * lattice.weights, axis=(-2, -1)) * AREA
    return np.cumsum(ev)


def n_star_from_traces(mean_traces: Sequence[float], ladder: Sequence[int] | None = None) -> int | None:
    """Smallest ``N`` on the ladder whose mean trace is positive."""
    tr = np.asarray(mean_traces, dtype=float)
    ladder = range(1, tr.size + 1) if ladder is None else ladder
    for n in ladder:
        if not 1 <= n <= tr.size:
            raise ValueError(f"ladder entry {n} outside 1..{tr.size}")
        if tr[n - 1] > 0:
            return int(n)
    return None


def run_tangent(state: FlowState, forcing: Forcing, n: int, t_horizon: float,
                dt: float | None = None, reorth_stride: int = 10, record_every: int = 1,
                ladder: Sequence[int] | None = None, threshold: float = 0.05,
                callback: Callable[[FlowState, TangentBundle, TraceBreakdown], None] | None = None,
                bundle: TangentBundle | None = None) -> TangentRun:
    """Integrate ``n`` tangent vectors for ``t_horizon`` from ``state``.

    Every ``reorth_stride`` steps the bundle is re-orthonormalised, the
    stretches are accumulated and the per-direction traces are sampled for
    the time averages.  One run serves every ``N <= n`` because the QR
    subspaces are nested.
    """
    if dt is None:
        dt = choose_dt(state)
    if reorth_stride < 1:
        raise ValueError("reorth_stride must be >= 1")
    eng = _engine(state, forcing)
    lat = state.lattice
    bundle = make_bundle(lat, n, state.t) if bundle is None else bundle
    if bundle.n != n:
        raise ValueError(f"bundle carries {bundle.n} vectors, expected {n}")
    if bundle.phis is None:
        bundle, _ = reorthonormalize(bundle)
    c, t0 = state.omega.coeffs, state.t
    base = bundle.lyap_sums.copy()
    n_steps = max(1, round(t_horizon / dt))
    trace_avg, lap_avg, log_hist = RunningTimeAverage(), RunningTimeAverage(), [(t0, np.zeros(n))]
    rows = []

    def sample(t, c, bundle, k):
        tt = trace_terms(eng, c, bundle.phis, zonal_tendency(eng, c))
        trace_avg.update(t, np.cumsum(tt.total))
        lap_avg.update(t, np.cumsum(tt.lap))
        if k % record_every == 0 or callback is not None:
            br = TraceBreakdown(t, float(tt.lap.sum()), float(tt.a0.sum()), float(tt.bbar.sum()),
                                float(tt.btilde.sum()), float(tt.total.sum()),
                                0.5j * float(tt.s1.sum()), 0.5j * float(tt.s2.sum()), bundle.logvol)
            if k % record_every == 0:
                rows.append(br)
            if callback is not None:
                callback(FlowState(SpectralField(lat, c), t, state.params), bundle, br)

    sample(t0, c, bundle, 0)
    d = bundle.deltas
    k = 0
    for i in range(1, n_steps + 1):
        c, d = joint_step(eng, c, t0 + (i - 1) * dt, dt, d)
        if i % reorth_stride == 0 or i == n_steps:
            t = t0 + i * dt
            bundle, _ = reorthonormalize(replace(bundle, deltas=d, t=t))
            d = bundle.deltas
            log_hist.append((t, bundle.lyap_sums - base))
            k += 1
            sample(t, c, bundle, k)
    t_end = t0 + n_steps * dt
    span = t_end - t0
    exps = (bundle.lyap_sums - base) / span
    # block estimates of the exponents from the stretch history
    times = np.array([h[0] for h in log_hist])
    sums = np.array([h[1] for h in log_hist])
    edges = np.linspace(t0, t_end, 6)
    at = np.stack([np.array([np.interp(e, times, sums[:, j]) for e in edges]) for j in range(n)], axis=1)
    blocks = np.diff(at, axis=0) / np.diff(edges)[:, None]
    order = np.argsort(-exps, kind="stable")
    exps, block_err = exps[order], (np.std(blocks, axis=0, ddof=1) / math.sqrt(5))[order]
    mean_tr, tr_err = trace_avg.mean(), trace_avg.errbar()
    converged = True
    if trace_avg.count >= 10:
        var = windowed_variation(trace_avg)
        spread = np.max(np.abs(mean_tr)) if np.any(mean_tr) else 0.0
        if var > threshold and np.max(tr_err) > threshold * max(spread, 1e-12):
            converged = False
            warnings.warn(f"tangent averages not settled (windowed variation {var:.3g})",
                          ConvergenceWarning, stacklevel=2)
    final = FlowState(SpectralField(lat, c), t_end, state.params)
    return TangentRun(exps, block_err, kaplan_yorke(exps), np.asarray(mean_tr), np.asarray(tr_err),
                      np.asarray(lap_avg.mean()), weyl_lower_bound(lat, n),
                      n_star_from_traces(mean_tr, ladder), converged, final, bundle, rows)


def lyapunov_spectrum(state: FlowState, forcing: Forcing, n: int, t_horizon: float, **kw):
    """``(exponents, kaplan_yorke)`` from :func:`run_tangent`."""
    run = run_tangent(state, forcing, n, t_horizon, **kw)
    return run.exponents, run.kaplan_yorke


def n_star_search(state: FlowState, forcing: Forcing, n_max: int, t_horizon: float,
                  ladder: Sequence[int] | None = None, **kw) -> TangentRun:
    """Smallest ``N`` with positive mean trace, from one ``n_max`` bundle."""
    return run_tangent(state, forcing, n_max, t_horizon, ladder=ladder, **kw)

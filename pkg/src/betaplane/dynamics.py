"""
Vorticity dynamics of the rotating Navier-Stokes equations on the beta-plane.

    d omega/dt + B(omega, omega) = f + nu Lap omega - L_eps omega

with ``B(a, b) = -grad_perp (-Lap)^{-1} a . grad b`` and the Coriolis operator
``L_eps = -(1/eps) d1 (-Lap)^{-1}``, Fourier multiplier ``-(i/eps) k1/|k|^2``.

Time integration is exponential time differencing RK4 (Cox & Matthews):
viscosity and the Coriolis phase are integrated exactly per mode, the
nonlinearity and forcing explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Callable, Iterable

import numpy as np
import scipy.fft as sfft

from .spectral import (
    AREA,
    SpectralField,
    WavenumberLattice,
    dealias,
    inner,
    l2_norm,
    project_nonzonal,
    project_zonal,
    symmetrize,
    to_spectral,
    velocity_coeffs,
)


class CFLError(ValueError):
    """Time step too large for the advective CFL bound."""

    def __init__(self, dt: float, suggested_dt: float):
        super().__init__(f"dt={dt:g} violates the CFL bound; try dt <= {suggested_dt:g}")
        self.dt = dt
        self.suggested_dt = suggested_dt


@dataclass(frozen=True)
class FlowParams:
    epsilon: float
    grashof: float
    nu: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.grashof >= 1:
            raise ValueError(f"grashof must be >= 1, got {self.grashof}")
        if not self.nu > 0:
            raise ValueError(f"nu must be > 0, got {self.nu}")


@dataclass(frozen=True, eq=False)
class Forcing:
    """Time-independent vorticity forcing ``f = G curl F``.

    ``fcheck`` stores ``i * fcheck_true`` where ``fcheck_true_k = f_k / lam_k``;
    the true field is purely imaginary, the stored one is real.
    """

    f: SpectralField
    grashof: float = 1.0
    preset: str = "custom"

    @cached_property
    def fbar(self) -> SpectralField:
        return project_zonal(self.f)

    @cached_property
    def ftilde(self) -> SpectralField:
        return project_nonzonal(self.f)

    @cached_property
    def fcheck(self) -> SpectralField:
        lat = self.f.lattice
        lam = lat.lam
        out = np.zeros(lat.shape, dtype=complex)
        nz = lam != 0
        out[nz] = 1j * self.f.coeffs[nz] / lam[nz]
        return SpectralField(lat, out)

    @property
    def lattice(self) -> WavenumberLattice:
        return self.f.lattice

    @classmethod
    def zero(cls, lattice: WavenumberLattice) -> "Forcing":
        return cls(SpectralField(lattice, np.zeros(lattice.shape, dtype=complex)), 1.0, "zero")


def forcing_normalisation(g: SpectralField) -> float:
    """L2 norm of the divergence-free ``F`` with ``curl F = g``, i.e. ``||g||_{H^-1}``."""
    lat = g.lattice
    c = g.coeffs * np.sqrt(lat.inv_ksq)
    return float(np.sqrt(inner(c, c, lat)))


def make_forcing(lattice: WavenumberLattice, grashof: float, preset: str = "mixed",
                 a: float = 1.0, b: float = 1.0) -> Forcing:
    """Canonical forcing ``G c (a sin x2 + b sin x1 sin x2)``.

    ``c`` is fixed so that the underlying force has unit L2 norm.  The
    ``"zonal"`` preset drops the ``b`` term and ``"zero"`` returns f = 0.
    """
    if preset == "zero":
        return Forcing.zero(lattice)
    if preset == "zonal":
        b = 0.0
    elif preset != "mixed":
        raise ValueError(f"unknown forcing preset {preset!r}")
    x1, x2 = lattice.grid()
    g = to_spectral(a * np.sin(x2) + b * np.sin(x1) * np.sin(x2), lattice)
    g = symmetrize(dealias(g))
    scale = forcing_normalisation(g)
    if scale == 0:
        raise ValueError("forcing weights (a, b) are both zero")
    return Forcing(g * (grashof / scale), float(grashof), preset)


@dataclass(frozen=True, eq=False)
class FlowState:
    omega: SpectralField
    t: float
    params: FlowParams

    @property
    def lattice(self) -> WavenumberLattice:
        return self.omega.lattice

    def with_omega(self, omega: SpectralField, t: float | None = None) -> "FlowState":
        return replace(self, omega=omega, t=self.t if t is None else t)


def lambda_k(k: tuple[int, int]) -> float:
    """``k1 / |k|^2``; zero for zonal wavevectors."""
    k1, k2 = k
    if k1 == 0 and k2 == 0:
        raise ValueError("lambda_k undefined at k = 0")
    return k1 / (k1 * k1 + k2 * k2)


def coriolis_symbol(lattice: WavenumberLattice, epsilon: float) -> np.ndarray:
    """Fourier multiplier of ``L_eps``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    return -1j * lattice.lam / epsilon


def apply_coriolis(theta: SpectralField, epsilon: float) -> SpectralField:
    return SpectralField(theta.lattice, coriolis_symbol(theta.lattice, epsilon) * theta.coeffs)


def semigroup_factor(lattice: WavenumberLattice, t: float, epsilon: float) -> np.ndarray:
    """Multiplier of ``exp(t L_eps)``: the unit-modulus phase ``exp(-i t lam_k / eps)``."""
    return np.exp(t * coriolis_symbol(lattice, epsilon))


def semigroup_apply(theta: SpectralField, t: float, epsilon: float) -> SpectralField:
    """Apply the unitary group ``exp(t L_eps)``; negative ``t`` inverts it."""
    return SpectralField(theta.lattice, semigroup_factor(theta.lattice, t, epsilon) * theta.coeffs)


def _to_grid(c: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    return sfft.irfft2(c, s=lat.grid_shape, norm="forward")


def _to_coeffs(g: np.ndarray) -> np.ndarray:
    return sfft.rfft2(g, norm="forward")


def advection_terms(c: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    """Grid ``(u1, u2, d1 theta, d2 theta)`` for stacked half spectra ``c``.

    Output has shape ``(4, *c.shape[:-2], ny, nx)``.
    """
    u1, u2 = velocity_coeffs(c, lat)
    spec = np.stack([u1, u2, 1j * lat.k1 * c, 1j * lat.k2 * c])
    return _to_grid(spec, lat)


def bilinear_coeffs(c1: np.ndarray, c2: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    """Dealiased half spectrum of ``B(theta1, theta2)`` (batched)."""
    u1, u2 = velocity_coeffs(c1, lat)
    grid = _to_grid(np.stack([u1, u2, 1j * lat.k1 * c2, 1j * lat.k2 * c2]), lat)
    return lat.mask * _to_coeffs(grid[0] * grid[2] + grid[1] * grid[3])


def bilinear_B(theta1: SpectralField, theta2: SpectralField) -> SpectralField:
    """``B(theta1, theta2) = u[theta1] . grad theta2``, pseudospectral with 2/3 dealiasing."""
    theta1._check(theta2)
    return SpectralField(theta1.lattice, bilinear_coeffs(theta1.coeffs, theta2.coeffs, theta1.lattice))


def gamma_coefficient(j: tuple[int, int], k: tuple[int, int], l: tuple[int, int]) -> float:
    """``(B(e^{ij.x}, e^{ik.x}), e^{il.x}) = 4 pi^2 (j1 k2 - j2 k1)/|j|^2`` when ``l = j + k``."""
    if tuple(j) == (0, 0) or tuple(k) == (0, 0):
        raise ValueError("j and k must be nonzero")
    if (j[0] + k[0], j[1] + k[1]) != tuple(l):
        return 0.0
    return AREA * (j[0] * k[1] - j[1] * k[0]) / (j[0] ** 2 + j[1] ** 2)


def rhs(state: FlowState, forcing: Forcing) -> SpectralField:
    """Full tendency ``-B(omega, omega) + f + nu Lap omega - L_eps omega``."""
    eng = Engine(state.lattice, state.params, forcing)
    n, _ = eng.nonlinear(state.omega.coeffs)
    return SpectralField(state.lattice, n + eng.symbol * state.omega.coeffs)


def rhs_eta(eta: SpectralField, t: float, params: FlowParams, forcing: Forcing) -> SpectralField:
    """Tendency of ``eta = exp(t L_eps) omega``: ``-B_eps(t)(eta, eta) + g_eps(t) + nu Lap eta``."""
    lat = eta.lattice
    fwd = semigroup_factor(lat, t, params.epsilon)
    w = np.conj(fwd) * eta.coeffs
    n = fwd * (lat.mask * forcing.f.coeffs - bilinear_coeffs(w, w, lat))
    return SpectralField(lat, n - params.nu * lat.ksq * eta.coeffs)


@lru_cache(maxsize=64)
def _etd_coefficients(key: tuple, dt: float, n_contour: int = 32):
    lat, eps, nu, frame = key
    symbol = -nu * lat.ksq + (0j if frame == "eta" else -coriolis_symbol(lat, eps))
    symbol = np.broadcast_to(symbol, lat.shape)
    z = dt * symbol
    r = np.exp(2j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
    lr = z[..., None] + r
    elr = np.exp(lr)
    lr3 = lr**3
    q = dt * np.mean((np.exp(lr / 2) - 1) / lr, axis=-1)
    f1 = dt * np.mean((-4 - lr + elr * (4 - 3 * lr + lr**2)) / lr3, axis=-1)
    f2 = dt * np.mean((2 + lr + elr * (lr - 2)) / lr3, axis=-1)
    f3 = dt * np.mean((-4 - 3 * lr - lr**2 + elr * (4 - lr)) / lr3, axis=-1)
    out = (np.exp(z), np.exp(z / 2), q, f1, f2, f3)
    for a in out:
        a.setflags(write=False)
    return out


def etdrk4_step(c: np.ndarray, t: float, dt: float, coeffs, nonlinear: Callable):
    """One ETDRK4 step of ``c' = symbol*c + N(c, t)``.

    Returns the new coefficients and the four stage states with their
    nonlinear-evaluation byproducts ``[(state, t_stage, aux), ...]``.
    """
    e, e2, q, f1, f2, f3 = coeffs
    nu_, aux0 = nonlinear(c, t)
    a = e2 * c + q * nu_
    na, aux1 = nonlinear(a, t + dt / 2)
    b = e2 * c + q * na
    nb, aux2 = nonlinear(b, t + dt / 2)
    cc = e2 * a + q * (2 * nb - nu_)
    nc, aux3 = nonlinear(cc, t + dt)
    new = e * c + f1 * nu_ + 2 * f2 * (na + nb) + f3 * nc
    stages = [(c, t, aux0), (a, t + dt / 2, aux1), (b, t + dt / 2, aux2), (cc, t + dt, aux3)]
    return new, stages


class Engine:
    """Precomputed operators for one (lattice, params, forcing) triple.

    Works on raw coefficient arrays; holds no state between calls beyond
    cached ETDRK4 coefficients.
    """

    def __init__(self, lattice: WavenumberLattice, params: FlowParams, forcing: Forcing | None = None):
        if forcing is not None and forcing.lattice != lattice:
            raise ValueError("forcing lattice does not match the state lattice")
        self.lattice = lattice
        self.params = params
        self.forcing = forcing if forcing is not None else Forcing.zero(lattice)
        self.f = lattice.mask * self.forcing.f.coeffs
        self.symbol = -params.nu * lattice.ksq - coriolis_symbol(lattice, params.epsilon)
        self.h = 2 * np.pi / max(lattice.nx, lattice.ny)

    def coefficients(self, dt: float, frame: str = "omega"):
        p = self.params
        return _etd_coefficients((self.lattice, p.epsilon, p.nu, frame), float(dt))

    def nonlinear(self, c: np.ndarray, t: float = 0.0):
        """``N(omega) = -B(omega, omega) + f`` plus grid ``(u1, u2, d1 w, d2 w)``."""
        g = advection_terms(c, self.lattice)
        n = self.f - self.lattice.mask * _to_coeffs(g[0] * g[2] + g[1] * g[3])
        return n, g

    def jvp(self, aux: np.ndarray, d: np.ndarray) -> np.ndarray:
        """``-B(w, d) - B(d, w)`` for stacked perturbations ``d`` about ``w``."""
        gd = advection_terms(d, self.lattice)
        prod = aux[0] * gd[2] + aux[1] * gd[3] + gd[0] * aux[2] + gd[1] * aux[3]
        return np.where(self.lattice.mask, -_to_coeffs(prod), 0)

    def umax(self, aux: np.ndarray) -> float:
        return float(np.sqrt(np.max(aux[0] ** 2 + aux[1] ** 2)))

    def cfl_dt(self, umax: float, safety: float = 0.5) -> float:
        return safety * self.h / umax if umax > 0 else math.inf

    def step(self, c: np.ndarray, t: float, dt: float, cfl: float | None = 1.0):
        new, stages = etdrk4_step(c, t, dt, self.coefficients(dt), self.nonlinear)
        if cfl is not None:
            umax = self.umax(stages[0][2])
            if dt * umax > cfl * self.h:
                raise CFLError(dt, self.cfl_dt(umax))
        return new, stages

    def step_eta(self, c: np.ndarray, t: float, dt: float):
        lat, eps = self.lattice, self.params.epsilon
        f = self.f

        def nonlinear(e, s):
            fwd = semigroup_factor(lat, s, eps)
            w = np.conj(fwd) * e
            return fwd * (f - bilinear_coeffs(w, w, lat)), None

        new, _ = etdrk4_step(c, t, dt, self.coefficients(dt, "eta"), nonlinear)
        return new


def step(state: FlowState, forcing: Forcing, dt: float, cfl: float | None = 1.0) -> FlowState:
    """Advance one ETDRK4 step.

    Raises :class:`CFLError` when ``dt * max|u| > cfl * h``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    eng = Engine(state.lattice, state.params, forcing)
    new, _ = eng.step(state.omega.coeffs, state.t, dt, cfl)
    return state.with_omega(SpectralField(state.lattice, new), state.t + dt)


def choose_dt(state: FlowState, dt_max: float = 1e-2, safety: float = 0.5) -> float:
    """``min(safety * h / max|u|, dt_max)``."""
    eng = Engine(state.lattice, state.params)
    g = advection_terms(state.omega.coeffs, state.lattice)
    return min(eng.cfl_dt(eng.umax(g), safety), dt_max)


@dataclass
class Observer:
    """Callback invoked every ``stride`` steps with the current state."""

    func: Callable[[FlowState], None]
    stride: int = 1


def _step_plan(t0: float, t_end: float, dt: float) -> tuple[int, float]:
    span = t_end - t0
    n_full = int(math.floor(span / dt + 1e-9))
    rest = span - n_full * dt
    if rest <= 1e-9 * dt:
        rest = 0.0
    return n_full, rest


def evolve(state: FlowState, forcing: Forcing, t_end: float, dt: float | None = None,
           observers: Iterable[Observer | Callable] = (), dt_max: float = 1e-2,
           cfl: float | None = 1.0) -> FlowState:
    """Integrate to ``t_end`` with a fixed step (the last step may be shorter).

    Plain callables in ``observers`` are called after every step.
    """
    if t_end < state.t:
        raise ValueError(f"t_end={t_end} is before the current time {state.t}")
    if dt is None:
        dt = choose_dt(state, dt_max)
    obs = [o if isinstance(o, Observer) else Observer(o) for o in observers]
    eng = Engine(state.lattice, state.params, forcing)
    c = state.omega.coeffs
    t0 = state.t
    n_full, rest = _step_plan(t0, t_end, dt)
    steps = [dt] * n_full + ([rest] if rest > 0 else [])
    t = t0
    for i, h in enumerate(steps, start=1):
        c, _ = eng.step(c, t, h, cfl)
        t = t_end if i == len(steps) else t0 + i * dt
        for o in obs:
            if i % o.stride == 0:
                o.func(state.with_omega(SpectralField(state.lattice, c), t))
    return state.with_omega(SpectralField(state.lattice, c), t if steps else state.t)


def evolve_eta(state: FlowState, forcing: Forcing, t_end: float, dt: float) -> FlowState:
    """Integrate the conjugated equation for ``eta`` and map back to ``omega``."""
    lat, eps = state.lattice, state.params.epsilon
    eng = Engine(lat, state.params, forcing)
    c = semigroup_factor(lat, state.t, eps) * state.omega.coeffs
    n_full, rest = _step_plan(state.t, t_end, dt)
    t = state.t
    for h in [dt] * n_full + ([rest] if rest > 0 else []):
        c = eng.step_eta(c, t, h)
        t += h
    omega = np.conj(semigroup_factor(lat, t_end, eps)) * c
    return state.with_omega(SpectralField(lat, omega), t_end)


def initial_state(lattice: WavenumberLattice, params: FlowParams, amplitude: float = 0.0,
                  seed: int | None = 0) -> FlowState:
    """Rest state, or a seeded random field in the symmetry class with L2 norm ``amplitude``."""
    from .spectral import random_field, zeros

    if amplitude > 0:
        omega = random_field(lattice, seed, norm=amplitude, slope=-2.0, symmetric=True)
    else:
        omega = zeros(lattice)
    return FlowState(omega, 0.0, params)


def enstrophy(omega: SpectralField) -> float:
    return l2_norm(omega) ** 2


@dataclass
class BurnIn:
    state: FlowState
    converged: bool
    window_means: list = field(default_factory=list)


def burn_in(state: FlowState, forcing: Forcing, dt: float | None = None, window: float = 10.0,
            t_min: float = 50.0, t_max: float = 500.0, threshold: float = 0.05,
            dt_max: float = 1e-2) -> BurnIn:
    """Integrate until windowed means of ``||omega||^2`` settle.

    Stops once at least ``t_min`` has elapsed and two consecutive window
    means differ by less than ``threshold`` (relative).
    """
    if dt is None:
        dt = choose_dt(state, dt_max)
    t_start = state.t
    means: list[float] = []
    converged = False
    while state.t - t_start < t_max - 1e-9:
        samples: list[float] = []
        state = evolve(state, forcing, state.t + window, dt,
                       observers=[lambda s: samples.append(enstrophy(s.omega))])
        means.append(float(np.mean(samples)))
        if len(means) >= 2 and state.t - t_start >= t_min - 1e-9:
            m0, m1 = means[-2], means[-1]
            if abs(m1 - m0) <= threshold * max(abs(m0), abs(m1)) or max(abs(m0), abs(m1)) < 1e-300:
                converged = True
                break
    return BurnIn(state, converged, means)

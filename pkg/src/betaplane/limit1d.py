"""
The zonal limit: heat equation for the zonal vorticity, the zonal error
field and steady states.

As eps -> 0 the zonal part of the flow approaches the solution of

    d wbar/dt - d_yy wbar = fbar

and the gap ``zeta = zonal(omega^eps) - wbar`` is driven only by the zonal
projection of the nonlinearity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .diagnostics import ConvergenceWarning
from .dynamics import Engine, FlowParams, FlowState, Forcing, bilinear_coeffs, choose_dt
from .spectral import SpectralField, WavenumberLattice, inner, project_nonzonal, zeros


@dataclass(frozen=True, eq=False)
class ZonalField1D:
    """A function of ``x2`` alone, held as the ``k1 = 0`` column of a lattice.

    ``coeffs[i]`` is the coefficient of ``exp(i k2 x2)`` with ``k2 = lattice.k2[i]``.
    """

    lattice: WavenumberLattice
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if c.shape != (self.lattice.ny,):
            raise ValueError(f"expected {self.lattice.ny} zonal coefficients, got {c.shape}")
        if abs(c[0]) > 1e-12 * max(1.0, float(np.max(np.abs(c)))):
            raise ValueError("zonal field must be mean-free")
        c = np.where(self.lattice.mask[:, 0], c, 0)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_2d(cls, field: SpectralField) -> "ZonalField1D":
        return cls(field.lattice, field.coeffs[:, 0])

    @classmethod
    def from_sine(cls, lattice: WavenumberLattice, b) -> "ZonalField1D":
        """``sum_m b[m-1] sin(m x2)``."""
        c = np.zeros(lattice.ny, dtype=complex)
        for m, bm in enumerate(np.asarray(b, dtype=float), start=1):
            c[m % lattice.ny] += -0.5j * bm
            c[-m % lattice.ny] += 0.5j * bm
        return cls(lattice, c)

    def to_2d(self) -> SpectralField:
        c = np.zeros(self.lattice.shape, dtype=complex)
        c[:, 0] = self.coeffs
        return SpectralField(self.lattice, c)

    @property
    def k2(self) -> np.ndarray:
        return self.lattice.k2[:, 0]

    @property
    def sine_coefficients(self) -> np.ndarray:
        """``b_m`` for ``m = 1..kmax`` in ``sum b_m sin(m x2)`` (odd part only)."""
        m = np.arange(1, self.lattice.kmax[1] + 1)
        return (1j * (self.coeffs[m] - self.coeffs[-m])).real

    def norm(self) -> float:
        c = self.coeffs
        return float(np.sqrt(4 * np.pi**2 * np.sum(np.abs(c) ** 2)))

    def __add__(self, other: "ZonalField1D") -> "ZonalField1D":
        self._check(other)
        return ZonalField1D(self.lattice, self.coeffs + other.coeffs)

    def __sub__(self, other: "ZonalField1D") -> "ZonalField1D":
        self._check(other)
        return ZonalField1D(self.lattice, self.coeffs - other.coeffs)

    def _check(self, other):
        if not isinstance(other, ZonalField1D) or other.lattice != self.lattice:
            raise ValueError("zonal fields live on different lattices")


def _zonal(x) -> ZonalField1D:
    return x if isinstance(x, ZonalField1D) else ZonalField1D.from_2d(x)


def _heat_update(c: np.ndarray, src: np.ndarray, k2: np.ndarray, dt: float) -> np.ndarray:
    ksq = k2**2
    decay = np.exp(-ksq * dt)
    gain = np.divide(-np.expm1(-ksq * dt), ksq, out=np.zeros_like(ksq), where=ksq > 0)
    return decay * c + gain * src


def heat_step(w: ZonalField1D, fbar: ZonalField1D, dt: float) -> ZonalField1D:
    """Exact update of ``w' = w_yy + fbar`` over ``dt`` (``fbar`` constant)."""
    w, fbar = _zonal(w), _zonal(fbar)
    w._check(fbar)
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return ZonalField1D(w.lattice, _heat_update(w.coeffs, fbar.coeffs, w.k2, dt))


def heat_steady_state(fbar: ZonalField1D) -> ZonalField1D:
    """``(-d_yy)^{-1} fbar``."""
    fbar = _zonal(fbar)
    raw = fbar.coeffs
    ksq = fbar.k2**2
    return ZonalField1D(fbar.lattice, np.divide(raw, ksq, out=np.zeros_like(raw), where=ksq > 0))


def zeta_step(zeta: ZonalField1D, source: ZonalField1D, dt: float) -> ZonalField1D:
    """Heat update of the zonal error with a source frozen over the step."""
    return heat_step(zeta, source, dt)


def zonal_source(omega: SpectralField) -> ZonalField1D:
    """``-zonal(B(omega, omega))``, the forcing of the zonal error."""
    b = bilinear_coeffs(omega.coeffs, omega.coeffs, omega.lattice)
    return ZonalField1D(omega.lattice, -b[:, 0])


def decompose(omega: SpectralField, wbar: ZonalField1D):
    """``omega = wbar + zeta + wtilde``; returns ``(wbar, zeta, wtilde)``."""
    wbar = _zonal(wbar)
    if wbar.lattice != omega.lattice:
        raise ValueError("lattice mismatch")
    zeta = ZonalField1D(omega.lattice, omega.coeffs[:, 0] - wbar.coeffs)
    return wbar, zeta, project_nonzonal(omega)


class ZonalTracker:
    """Follows the heat solution and the integrated zonal error along a 2D run.

    Call :meth:`advance` after every base step with the state at the start
    of that step and the step length.
    """

    def __init__(self, omega0: SpectralField, forcing: Forcing):
        self.lattice = omega0.lattice
        self.fbar = ZonalField1D.from_2d(forcing.f)
        self.wbar = ZonalField1D.from_2d(omega0)
        self.zeta = ZonalField1D(self.lattice, np.zeros(self.lattice.ny))

    def advance(self, omega_start: SpectralField, dt: float) -> None:
        self.zeta = zeta_step(self.zeta, zonal_source(omega_start), dt)
        self.wbar = heat_step(self.wbar, self.fbar, dt)


def steady_state_2d(params: FlowParams, forcing: Forcing, tol: float = 1e-9,
                    t_max: float = 2000.0, dt: float | None = None, chunk: float = 5.0,
                    initial: FlowState | None = None) -> FlowState:
    """Integrate from rest (or ``initial``) until ``||rhs||_L2 < tol``.

    Outside the collapse regime there may be no stable steady state; then a
    :class:`ConvergenceWarning` is issued and the last state is returned.
    """
    lat = forcing.lattice
    state = initial if initial is not None else FlowState(zeros(lat), 0.0, params)
    eng = Engine(lat, params, forcing)
    c, t = state.omega.coeffs, state.t
    dt = choose_dt(state) if dt is None else dt
    n_chunk = max(1, round(chunk / dt))

    def residual(c):
        n, _ = eng.nonlinear(c)
        r = n + eng.symbol * c
        return float(np.sqrt(inner(r, r, lat)))

    res = residual(c)
    t_end = t + t_max
    while res >= tol and t < t_end:
        for _ in range(n_chunk):
            c, _ = eng.step(c, t, dt)
            t += dt
        res = residual(c)
    if res >= tol:
        warnings.warn(f"steady state not reached: ||rhs|| = {res:.3g} after t = {t:g}",
                      ConvergenceWarning, stacklevel=2)
    return FlowState(SpectralField(lat, c), t, params)


def h1_distance(a, b) -> float:
    """``||a - b||_{H^1}`` with multiplier ``(1 + |k|^2)^(1/2)``."""
    a = a.to_2d() if isinstance(a, ZonalField1D) else a
    b = b.to_2d() if isinstance(b, ZonalField1D) else b
    a._check(b)
    lat = a.lattice
    d = (a.coeffs - b.coeffs) * np.sqrt(1.0 + lat.ksq)
    return float(np.sqrt(inner(d, d, lat)))

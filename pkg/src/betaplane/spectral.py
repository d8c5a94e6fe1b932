"""
Fourier representation of real scalar fields on the periodic domain
[0, 2pi] x [-pi, pi].

Fields are stored as half spectra (``rfft2`` layout): an array of shape
``(ny, nx // 2 + 1)`` indexed ``[k2 index, k1]`` with ``k1 >= 0``.  Negative
``k1`` coefficients are implied by reality, ``c(-k) = conj(c(k))``.  Physical
arrays have shape ``(ny, nx)`` and are indexed ``[x2, x1]``.

Coefficients follow the convention ``theta(x) = sum_k c_k exp(i k.x)`` and all
inner products are taken over the full domain (area 4 pi^2, no averaging).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

AREA = 4.0 * np.pi**2


@dataclass(frozen=True)
class WavenumberLattice:
    """Integer wavevectors of an ``nx`` by ``ny`` collocation grid.

    Both periods are 2 pi, so wavevectors are integers.  Modes with
    ``|k1| > kmax1`` or ``|k2| > kmax2`` are removed by the two-thirds rule,
    where ``kmax = (n - 1) // 3`` (this equals ``n // 3`` unless ``n`` is a
    multiple of 3, where one more mode must go to keep products alias-free).
    ``k = 0`` is always excluded.
    """

    nx: int
    ny: int

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of the stored half spectrum."""
        return (self.ny, self.nx // 2 + 1)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @cached_property
    def k1(self) -> np.ndarray:
        return np.arange(self.nx // 2 + 1, dtype=float)[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        return np.fft.fftfreq(self.ny, 1.0 / self.ny)[:, None]

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k1**2 + self.k2**2

    @property
    def kmax(self) -> tuple[int, int]:
        """Largest retained ``(|k1|, |k2|)``."""
        return ((self.nx - 1) // 3, (self.ny - 1) // 3)

    @cached_property
    def inv_ksq(self) -> np.ndarray:
        out = np.zeros(self.shape)
        nz = self.ksq > 0
        out[nz] = 1.0 / self.ksq[nz]
        return out

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean array of retained modes (dealiased, k != 0)."""
        keep = (np.abs(self.k1) <= self.kmax[0]) & (np.abs(self.k2) <= self.kmax[1])
        keep = np.broadcast_to(keep, self.shape).copy()
        keep[0, 0] = False
        return keep

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored column in the full spectrum."""
        w = np.full(self.nx // 2 + 1, 2.0)
        w[0] = 1.0
        if self.nx % 2 == 0:
            w[-1] = 1.0
        return w[None, :]

    @cached_property
    def lam(self) -> np.ndarray:
        """``k1 / |k|^2`` per stored mode, 0 at k = 0."""
        return self.k1 * self.inv_ksq

    @cached_property
    def mirror_k2(self) -> np.ndarray:
        """Index map ``k2 -> -k2`` along the first axis."""
        return (-np.arange(self.ny)) % self.ny

    @property
    def n_retained(self) -> int:
        """Number of real degrees of freedom among retained modes."""
        m1, m2 = self.kmax
        return (2 * m1 + 1) * (2 * m2 + 1) - 1

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Collocation points ``(x1, x2)``, each of shape ``(ny, nx)``.

        ``x2`` is sampled on [0, 2 pi), which is the same torus as [-pi, pi).
        """
        x1 = 2 * np.pi * np.arange(self.nx) / self.nx
        x2 = 2 * np.pi * np.arange(self.ny) / self.ny
        return np.meshgrid(x1, x2)

    def index(self, k: tuple[int, int]) -> tuple[int, int, bool]:
        """Storage index of wavevector ``k``.

        Returns ``(row, col, conjugate)``; when ``conjugate`` is true the
        stored entry holds ``conj(c_k)`` because ``k1 < 0``.
        """
        k1, k2 = int(k[0]), int(k[1])
        conj = k1 < 0
        if conj:
            k1, k2 = -k1, -k2
        if k1 > self.nx // 2 or abs(k2) > self.ny // 2:
            raise ValueError(f"wavevector {k} outside lattice {self.nx}x{self.ny}")
        return k2 % self.ny, k1, conj


def make_lattice(nx: int, ny: int) -> WavenumberLattice:
    """Build a lattice for an ``nx`` by ``ny`` grid (both even, at least 8)."""
    for name, n in (("nx", nx), ("ny", ny)):
        if int(n) != n or n < 8 or n % 2:
            raise ValueError(f"{name} must be an even integer >= 8, got {n}")
    return WavenumberLattice(int(nx), int(ny))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Half-spectrum coefficients of a real scalar field."""

    lattice: WavenumberLattice
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.lattice.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match lattice {self.lattice.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def _check(self, other: "SpectralField") -> None:
        if not isinstance(other, SpectralField):
            raise TypeError(f"expected SpectralField, got {type(other).__name__}")
        if other.lattice != self.lattice:
            raise ValueError("lattice mismatch")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.lattice, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.lattice, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.lattice, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.lattice, self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SpectralField(self.lattice, self.coeffs / scalar)

    @property
    def mean(self) -> float:
        return float(self.coeffs[0, 0].real)

    def coefficient(self, k: tuple[int, int]) -> complex:
        row, col, conj = self.lattice.index(k)
        c = self.coeffs[row, col]
        return complex(np.conj(c) if conj else c)

    def symmetry_defect(self) -> float:
        """Relative size of the part that is even in x2."""
        c = self.coeffs
        even = c + c[self.lattice.mirror_k2, :]
        num = np.sqrt(np.sum(self.lattice.weights * np.abs(even) ** 2))
        den = np.sqrt(np.sum(self.lattice.weights * np.abs(c) ** 2))
        return float(num / den) if den > 0 else 0.0

    def hermitian_defect(self) -> float:
        """Violation of ``c(0,-k2) = conj(c(0,k2))`` in the zonal column."""
        col = self.coeffs[:, 0]
        return float(np.max(np.abs(col - np.conj(col[self.lattice.mirror_k2])), initial=0.0))


def zeros(lattice: WavenumberLattice) -> SpectralField:
    return SpectralField(lattice, np.zeros(lattice.shape, dtype=complex))


def to_physical(f: SpectralField) -> np.ndarray:
    """Grid values of ``f`` on the ``(ny, nx)`` collocation grid."""
    lat = f.lattice
    return sfft.irfft2(f.coeffs, s=lat.grid_shape, norm="forward")


def to_spectral(g: np.ndarray, lattice: WavenumberLattice) -> SpectralField:
    """Fourier coefficients of real grid data ``g``; nothing is masked."""
    g = np.asarray(g, dtype=float)
    if g.shape != lattice.grid_shape:
        raise ValueError(f"grid shape {g.shape} does not match lattice {lattice.grid_shape}")
    return SpectralField(lattice, sfft.rfft2(g, norm="forward"))


def dealias(f: SpectralField) -> SpectralField:
    """Zero every mode outside the retained set (including the mean)."""
    return SpectralField(f.lattice, np.where(f.lattice.mask, f.coeffs, 0))


def project_zonal(theta: SpectralField) -> SpectralField:
    """Keep the ``k1 = 0`` modes (functions of x2 only)."""
    c = np.zeros_like(theta.coeffs)
    c[:, 0] = theta.coeffs[:, 0]
    return SpectralField(theta.lattice, c)


def project_nonzonal(theta: SpectralField) -> SpectralField:
    c = theta.coeffs.copy()
    c[:, 0] = 0
    return SpectralField(theta.lattice, c)


def symmetrize(theta: SpectralField) -> SpectralField:
    """Project onto fields odd in x2, ``c(k1,-k2) = -c(k1,k2)``."""
    c = theta.coeffs
    return SpectralField(theta.lattice, 0.5 * (c - c[theta.lattice.mirror_k2, :]))


def inverse_laplacian(theta: SpectralField) -> SpectralField:
    """Apply ``(-Delta)^{-1}`` to a mean-free field."""
    _require_mean_free(theta)
    return SpectralField(theta.lattice, theta.coeffs * theta.lattice.inv_ksq)


def laplacian(theta: SpectralField) -> SpectralField:
    return SpectralField(theta.lattice, -theta.lattice.ksq * theta.coeffs)


def velocity_from_vorticity(omega: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    """Grid velocity ``u = -grad_perp (-Delta)^{-1} omega``.

    With stream function ``psi = (-Delta)^{-1} omega`` this is
    ``u = (d2 psi, -d1 psi)``, so ``d1 u2 - d2 u1 = omega``.
    """
    _require_mean_free(omega)
    u1, u2 = velocity_coeffs(omega.coeffs, omega.lattice)
    s = omega.lattice.grid_shape
    return (sfft.irfft2(u1, s=s, norm="forward"), sfft.irfft2(u2, s=s, norm="forward"))


def velocity_coeffs(c: np.ndarray, lat: WavenumberLattice) -> tuple[np.ndarray, np.ndarray]:
    psi = c * lat.inv_ksq
    return 1j * lat.k2 * psi, -1j * lat.k1 * psi


def gradient(theta: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    """Grid values of ``(d1 theta, d2 theta)``."""
    lat = theta.lattice
    s = lat.grid_shape
    return (sfft.irfft2(1j * lat.k1 * theta.coeffs, s=s, norm="forward"),
            sfft.irfft2(1j * lat.k2 * theta.coeffs, s=s, norm="forward"))


def _require_mean_free(theta: SpectralField, tol: float = 1e-12) -> None:
    scale = max(1.0, float(np.max(np.abs(theta.coeffs), initial=0.0)))
    if abs(theta.coeffs[0, 0]) > tol * scale:
        raise ValueError("field must be mean-free")


def inner(a: np.ndarray, b: np.ndarray, lat: WavenumberLattice) -> np.ndarray:
    """L2 inner products of stacked half spectra (last two axes)."""
    return AREA * np.sum(lat.weights * (a * np.conj(b)).real, axis=(-2, -1))


def inner_product(a: SpectralField, b: SpectralField) -> float:
    """``(a, b) = integral of a*b`` over the domain."""
    a._check(b)
    return float(inner(a.coeffs, b.coeffs, a.lattice))


def l2_norm(a: SpectralField) -> float:
    return float(np.sqrt(inner(a.coeffs, a.coeffs, a.lattice)))


def hm_norm(a: SpectralField, m: float) -> float:
    """Norm with Fourier multiplier ``|k|^m`` (homogeneous Sobolev)."""
    lat = a.lattice
    if m < 0:
        _require_mean_free(a)
        mult = np.where(lat.ksq > 0, lat.ksq, 1.0) ** (m / 2)
    else:
        mult = lat.ksq ** (m / 2)
    c = a.coeffs * mult
    return float(np.sqrt(inner(c, c, lat)))


def grid_l2_norm(g: np.ndarray) -> float:
    """Rectangle-rule L2 norm of grid data over the domain."""
    return float(np.sqrt(AREA * np.mean(np.asarray(g) ** 2)))


def single_mode(lattice: WavenumberLattice, k: tuple[int, int], kind: str = "cos",
                amplitude: float = 1.0) -> SpectralField:
    """Realified mode ``amplitude * cos(k.x)`` or ``amplitude * sin(k.x)``."""
    row, col, conj = lattice.index(k)
    c = np.zeros(lattice.shape, dtype=complex)
    if kind == "cos":
        val = 0.5 * amplitude
    elif kind == "sin":
        val = -0.5j * amplitude
        if conj:
            val = -val
    else:
        raise ValueError(f"kind must be 'cos' or 'sin', got {kind!r}")
    c[row, col] += val
    if col == 0:
        # zonal column stores both k2 and -k2
        c[(-row) % lattice.ny, 0] += np.conj(val)
    return SpectralField(lattice, c)


def random_field(lattice: WavenumberLattice, rng: np.random.Generator | int | None = None,
                 norm: float = 1.0, slope: float = 0.0, symmetric: bool = False) -> SpectralField:
    """Seeded random dealiased, mean-free field with L2 norm ``norm``.

    Coefficients are scaled by ``|k|^slope`` before normalisation.
    """
    rng = np.random.default_rng(rng)
    c = rng.standard_normal(lattice.shape) + 1j * rng.standard_normal(lattice.shape)
    c *= np.where(lattice.ksq > 0, lattice.ksq, 1.0) ** (slope / 2)
    # enforce the reality constraint in the zonal column
    col = c[:, 0]
    c[:, 0] = 0.5 * (col + np.conj(col[lattice.mirror_k2]))
    f = dealias(SpectralField(lattice, c))
    if symmetric:
        f = symmetrize(f)
    n = l2_norm(f)
    return f * (norm / n) if n > 0 else f

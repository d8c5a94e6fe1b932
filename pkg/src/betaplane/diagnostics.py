"""
Time averages, budget checks and power-law fits.

Every long-time average in the analysis is a ``limsup`` of window means;
here it becomes a finite-horizon trapezoid mean with a block error bar.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .spectral import SpectralField, inner_product, l2_norm


class ConvergenceWarning(UserWarning):
    """A time average or iteration did not settle within its horizon."""


class HorizonWarning(UserWarning):
    """The averaging window is too short for a meaningful error bar."""


N_BLOCKS = 5


def _trapezoid(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    dt = np.diff(t).reshape((-1,) + (1,) * (v.ndim - 1))
    return np.sum(0.5 * dt * (v[1:] + v[:-1]), axis=0)


def _segment_integral(t: np.ndarray, v: np.ndarray, a: float, b: float) -> np.ndarray:
    """Trapezoid integral of the piecewise-linear interpolant over ``[a, b]``."""
    inside = (t > a) & (t < b)
    tt = np.concatenate([[a], t[inside], [b]])
    if v.ndim == 1:
        vv = np.interp(tt, t, v)
    else:
        vv = np.stack([np.interp(tt, t, col) for col in v.reshape(len(t), -1).T], axis=1)
        vv = vv.reshape((len(tt),) + v.shape[1:])
    return _trapezoid(tt, vv)


@dataclass
class RunningTimeAverage:
    """Trapezoid time average of a scalar or array signal.

    Samples are kept so that block error bars can be formed at the end.
    Disjoint windows from separate runs are combined with :meth:`merge`.
    """

    segments: list = field(default_factory=list)
    sup: float = -math.inf

    def update(self, t: float, value) -> "RunningTimeAverage":
        value = np.asarray(value, dtype=float)
        if not self.segments:
            self.segments.append(([], []))
        ts, vs = self.segments[-1]
        if ts and not t > ts[-1]:
            raise ValueError(f"time must increase strictly: got {t} after {ts[-1]}")
        ts.append(float(t))
        vs.append(value)
        self.sup = max(self.sup, float(np.max(np.abs(value))))
        return self

    @property
    def start(self) -> float:
        return self.segments[0][0][0] if self.segments and self.segments[0][0] else math.nan

    @property
    def count(self) -> int:
        return sum(len(ts) for ts, _ in self.segments)

    @property
    def duration(self) -> float:
        return sum(ts[-1] - ts[0] for ts, _ in self.segments if len(ts) > 1)

    def _arrays(self):
        return [(np.asarray(ts), np.asarray(vs)) for ts, vs in self.segments if len(ts) > 1]

    def integral(self):
        return sum(_trapezoid(t, v) for t, v in self._arrays())

    def mean(self):
        if self.duration <= 0:
            raise ValueError("need at least two samples to form a time average")
        return self.integral() / self.duration

    def block_means(self, n_blocks: int = N_BLOCKS) -> np.ndarray:
        """Means over ``n_blocks`` equal-duration pieces of the sampled windows."""
        segs = self._arrays()
        total = self.duration
        edges = np.linspace(0.0, total, n_blocks + 1)
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            acc, offset = 0.0, 0.0
            for t, v in segs:
                lo, hi = t[0] + max(a - offset, 0.0), t[0] + min(b - offset, t[-1] - t[0])
                if hi > lo:
                    acc = acc + _segment_integral(t, v, lo, hi)
                offset += t[-1] - t[0]
            out.append(acc / (b - a))
        return np.asarray(out)

    def errbar(self, n_blocks: int = N_BLOCKS):
        """Standard error of the block means (zero for a constant signal)."""
        if self.count < 2 * n_blocks:
            warnings.warn(f"only {self.count} samples for {n_blocks} blocks", HorizonWarning, stacklevel=2)
        blocks = self.block_means(n_blocks)
        return np.std(blocks, axis=0, ddof=1) / math.sqrt(n_blocks)

    def merge(self, other: "RunningTimeAverage") -> "RunningTimeAverage":
        """Combine two accumulators over disjoint windows."""
        out = RunningTimeAverage([s for s in self.segments if s[0]] + [s for s in other.segments if s[0]],
                                 max(self.sup, other.sup))
        out.segments.sort(key=lambda s: s[0][0])
        return out


def ta_update(acc: RunningTimeAverage, t: float, value) -> RunningTimeAverage:
    return acc.update(t, value)


def ta_mean(acc: RunningTimeAverage):
    """``(mean, errbar)`` of the accumulated signal."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonWarning)
        return acc.mean(), acc.errbar()


def windowed_variation(acc: RunningTimeAverage, n_blocks: int = N_BLOCKS) -> float:
    """Largest relative change between consecutive block means."""
    b = np.atleast_2d(acc.block_means(n_blocks).T).T
    scale = np.maximum(np.abs(b[1:]), np.abs(b[:-1]))
    diff = np.abs(np.diff(b, axis=0))
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
    return float(np.max(rel))


@dataclass(frozen=True)
class CheckResult:
    check_name: str
    value: float
    bound: float
    margin: float
    errbar: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.check_name}: value={self.value:.6g} bound={self.bound:.6g} "
                f"margin={self.margin:.3g} errbar={self.errbar:.3g}")


CHECK_COLUMNS = ("check_name", "value", "bound", "margin", "errbar", "pass")


def report_text(results: Sequence[CheckResult]) -> str:
    return "\n".join(r.line() for r in results) + "\n"


def report_csv(results: Sequence[CheckResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CHECK_COLUMNS)
    for r in results:
        w.writerow([r.check_name, f"{r.value:.17g}", f"{r.bound:.17g}", f"{r.margin:.17g}",
                    f"{r.errbar:.17g}", int(r.passed)])
    return buf.getvalue()


def bounded_check(name: str, value: float, bound: float, errbar: float = 0.0) -> CheckResult:
    """``value <= bound``; the error bar is charged against the margin."""
    margin = bound - value - errbar
    return CheckResult(name, float(value), float(bound), float(margin), float(errbar), bool(margin > 0))


@dataclass
class EnergyHistory:
    """Samples of ``||grad omega||^2`` and ``(omega, f)`` after burn-in."""

    grashof: float
    dissipation: RunningTimeAverage = field(default_factory=RunningTimeAverage)
    work: RunningTimeAverage = field(default_factory=RunningTimeAverage)

    def record(self, t: float, omega: SpectralField, f: SpectralField) -> None:
        from .spectral import hm_norm

        self.dissipation.update(t, hm_norm(omega, 1) ** 2)
        self.work.update(t, inner_product(omega, f))


def check_energy_budget(history: EnergyHistory, rel_tol: float = 0.02,
                        min_horizon: float = 10.0) -> list[CheckResult]:
    """Time-averaged enstrophy balance and the gradient bound.

    The balance ``<||grad w||^2> = <(w, f)>`` is checked to ``rel_tol``
    (plus error bars); the bound ``<||grad w||^2>^(1/2) <= G`` is an inequality.
    """
    if history.dissipation.duration < min_horizon:
        raise ValueError(f"horizon {history.dissipation.duration:g} shorter than {min_horizon:g}")
    d, d_err = ta_mean(history.dissipation)
    w, w_err = ta_mean(history.work)
    d, d_err, w, w_err = float(d), float(d_err), float(w), float(w_err)
    scale = max(abs(d), abs(w))
    resid = abs(d - w) / scale if scale > 0 else 0.0
    errbar = (d_err + w_err) / scale if scale > 0 else 0.0
    balance = CheckResult("energy_balance", resid, rel_tol, rel_tol - resid, errbar,
                          bool(resid <= rel_tol + errbar))
    grad_rms = math.sqrt(max(d, 0.0))
    grad_err = 0.5 * d_err / grad_rms if grad_rms > 0 else 0.0
    bound = bounded_check("gradient_bound", grad_rms, history.grashof, grad_err)
    return [balance, bound]


def check_fcheck_orthogonality(forcing, floor: float = 1e-300) -> float:
    """``|(fcheck, ftilde)| / (||fcheck|| ||ftilde|| + floor)``.

    The pairing vanishes for every real forcing (the stored ``fcheck`` is
    ``i`` times a purely imaginary field), so it cannot by itself detect a
    forcing outside the symmetry class; use :func:`forcing_in_symmetry_class`.
    """
    fc, ft = forcing.fcheck, forcing.ftilde
    return abs(inner_product(fc, ft)) / (l2_norm(fc) * l2_norm(ft) + floor)


def forcing_in_symmetry_class(forcing, tol: float = 1e-12) -> bool:
    return forcing.f.symmetry_defect() <= tol


@dataclass(frozen=True)
class ScalingFit:
    x: tuple
    y: tuple
    slope: float
    intercept: float
    max_rel_residual: float

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def fit_power_law(pairs: Iterable[tuple[float, float]]) -> ScalingFit:
    """Least-squares line through ``(log x, log y)``."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 pairs, got {len(pairs)}")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise ValueError("power-law fit needs positive finite data")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    pred = np.exp(intercept) * x**slope
    resid = float(np.max(np.abs(pred - y) / y))
    return ScalingFit(tuple(x), tuple(y), float(slope), float(intercept), resid)


def mean_derivative(times: Sequence[float], values: Sequence[float], t0: float,
                    horizons: Sequence[float]) -> np.ndarray:
    """``|v(t0 + T) - v(t0)| / T`` for each ``T``, the window mean of ``dv/dt``.

    Values are linearly interpolated, so sample the signal at ``t0 + T``
    when exactness matters.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    v0 = np.interp(t0, t, v)
    out = []
    for T in horizons:
        if t0 + T > t[-1] + 1e-9:
            raise ValueError(f"horizon {T} exceeds the recorded signal")
        out.append(abs(np.interp(t0 + T, t, v) - v0) / T)
    return np.asarray(out)

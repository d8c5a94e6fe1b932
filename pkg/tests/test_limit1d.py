import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from betaplane.diagnostics import ConvergenceWarning
from betaplane.dynamics import Engine, FlowParams, FlowState, Forcing, evolve, make_forcing
from betaplane.limit1d import (
    ZonalField1D,
    ZonalTracker,
    decompose,
    h1_distance,
    heat_step,
    heat_steady_state,
    steady_state_2d,
    zeta_step,
    zonal_source,
)
from betaplane.spectral import (
    SpectralField,
    l2_norm,
    make_lattice,
    project_nonzonal,
    project_zonal,
    random_field,
    single_mode,
    to_physical,
    zeros,
)


@pytest.fixture(scope="module")
def lat():
    return make_lattice(32, 32)


def zero1d(lat):
    return ZonalField1D(lat, np.zeros(lat.ny))


def test_from_sine_samples(lat):
    _, x2 = lat.grid()
    z = ZonalField1D.from_sine(lat, [1.0, 0.0, -0.5])
    np.testing.assert_allclose(to_physical(z.to_2d()), np.sin(x2) - 0.5 * np.sin(3 * x2), atol=1e-14)
    np.testing.assert_allclose(z.sine_coefficients[:3], [1.0, 0.0, -0.5], atol=1e-15)


def test_zonal_field_validation(lat):
    with pytest.raises(ValueError, match="mean-free"):
        ZonalField1D(lat, np.ones(lat.ny))
    with pytest.raises(ValueError):
        ZonalField1D(lat, np.zeros(lat.ny + 1))
    with pytest.raises(ValueError):
        zero1d(lat) + zero1d(make_lattice(16, 16))


def test_heat_step_examples(lat):
    one = ZonalField1D.from_sine(lat, [1.0])
    out = heat_step(one, zero1d(lat), 1.7)
    np.testing.assert_allclose(out.coeffs, one.coeffs * math.exp(-1.7), atol=1e-16)
    # sin y is its own steady state under sin y forcing
    np.testing.assert_allclose(heat_step(one, one, 0.3).coeffs, one.coeffs, atol=1e-16)
    far = heat_step(zero1d(lat), one, 60.0)
    np.testing.assert_allclose(far.coeffs, one.coeffs, atol=1e-16)
    with pytest.raises(ValueError):
        heat_step(one, one, 0.0)


@given(st.floats(0.01, 5.0), st.integers(0, 2**32 - 1))
def test_heat_step_is_exact(t, seed):
    lat = make_lattice(16, 16)
    rng = np.random.default_rng(seed)
    w = ZonalField1D.from_2d(project_zonal(random_field(lat, rng)))
    f = ZonalField1D.from_2d(project_zonal(random_field(lat, rng)))
    once = heat_step(w, f, t)
    twice = heat_step(heat_step(w, f, t / 2), f, t / 2)
    np.testing.assert_allclose(twice.coeffs, once.coeffs, atol=1e-14)


def test_heat_steady_state_examples(lat):
    np.testing.assert_allclose(heat_steady_state(ZonalField1D.from_sine(lat, [1.0])).sine_coefficients[:1], [1.0])
    s2 = heat_steady_state(ZonalField1D.from_sine(lat, [0.0, 1.0]))
    np.testing.assert_allclose(s2.sine_coefficients[:2], [0.0, 0.25], atol=1e-16)
    assert np.all(heat_steady_state(zero1d(lat)).coeffs == 0)


def test_zeta_step(lat, rng):
    w = project_zonal(random_field(lat, rng))
    src = zonal_source(w)
    assert np.all(src.coeffs == 0)
    z0 = zero1d(lat)
    assert np.all(zeta_step(z0, z0, 0.1).coeffs == 0)
    one = ZonalField1D.from_sine(lat, [0.0, 1.0])
    np.testing.assert_allclose(zeta_step(one, src, 0.5).coeffs, one.coeffs * math.exp(-2.0), atol=1e-16)


def test_decompose(lat, rng):
    w = project_zonal(random_field(lat, rng))
    wbar = ZonalField1D.from_2d(w)
    a, z, t = decompose(w, wbar)
    assert np.all(z.coeffs == 0) and np.all(t.coeffs == 0)
    nz = project_nonzonal(random_field(lat, rng))
    a, z, t = decompose(nz, wbar)
    np.testing.assert_array_equal(z.coeffs, -wbar.coeffs)
    np.testing.assert_array_equal(t.coeffs, nz.coeffs)
    with pytest.raises(ValueError):
        decompose(nz, zero1d(make_lattice(16, 16)))


@given(st.integers(0, 2**32 - 1))
def test_decompose_reconstructs(seed):
    lat = make_lattice(16, 16)
    rng = np.random.default_rng(seed)
    w = random_field(lat, rng)
    wbar = ZonalField1D.from_2d(project_zonal(random_field(lat, rng)))
    a, z, t = decompose(w, wbar)
    back = a.to_2d() + z.to_2d() + t
    np.testing.assert_allclose(back.coeffs, w.coeffs, atol=1e-15)


def _zeta_error(lat, dt):
    forcing = make_forcing(lat, 4.0)
    params = FlowParams(0.1, 4.0)
    state = FlowState(random_field(lat, 4, norm=3.0, slope=-2.0, symmetric=True), 0.0, params)
    tracker = ZonalTracker(state.omega, forcing)
    eng = Engine(lat, params, forcing)
    c = state.omega.coeffs
    for i in range(round(1.0 / dt)):
        tracker.advance(SpectralField(lat, c), dt)
        c, _ = eng.step(c, i * dt, dt)
    _, direct, _ = decompose(SpectralField(lat, c), tracker.wbar)
    return (direct - tracker.zeta).norm(), direct.norm()


def test_zeta_consistency(lat):
    """Integrated zonal error matches the direct difference, first order in dt."""
    e1, size = _zeta_error(lat, 0.01)
    e2, _ = _zeta_error(lat, 0.005)
    assert e1 < 0.02 * size
    assert 1.6 < e1 / e2 < 2.4


def test_steady_state_zonal_forcing(lat):
    forcing = make_forcing(lat, 2.0, "zonal")
    params = FlowParams(0.05, 2.0)
    st = steady_state_2d(params, forcing, tol=1e-10)
    want = heat_steady_state(ZonalField1D.from_2d(forcing.f)).to_2d()
    assert l2_norm(st.omega - want) < 1e-9


def test_steady_state_zero_forcing(lat):
    st = steady_state_2d(FlowParams(0.1, 1.0), Forcing.zero(lat))
    assert np.all(st.omega.coeffs == 0)
    assert st.t == 0.0


def test_steady_state_warns_when_not_reached(lat):
    forcing = make_forcing(lat, 2.0)
    with pytest.warns(ConvergenceWarning):
        steady_state_2d(FlowParams(0.1, 2.0), forcing, tol=1e-12, t_max=1.0, chunk=0.5)


def test_h1_distance(lat, rng):
    w = random_field(lat, rng)
    assert h1_distance(w, w) == 0.0
    m = single_mode(lat, (0, 2))
    m = m / l2_norm(m)
    assert h1_distance(m, zeros(lat)) == pytest.approx(math.sqrt(5), rel=1e-14)
    z = ZonalField1D.from_2d(m)
    assert h1_distance(z, zeros(lat)) == pytest.approx(math.sqrt(5), rel=1e-14)
    with pytest.raises(ValueError):
        h1_distance(w, random_field(make_lattice(16, 16), 0))


def test_short_run_heat_tracking(lat):
    """A zonal-only run is exactly the heat solution."""
    forcing = make_forcing(lat, 2.0, "zonal")
    w0 = project_zonal(random_field(lat, 3, symmetric=True))
    state = evolve(FlowState(w0, 0.0, FlowParams(0.1, 2.0)), forcing, 1.0, 0.01)
    heat = heat_step(ZonalField1D.from_2d(w0), ZonalField1D.from_2d(forcing.f), 1.0)
    np.testing.assert_allclose(state.omega.coeffs[:, 0], heat.coeffs, atol=1e-14)

import numpy as np
import pytest
from hypothesis import given, strategies as st

from betaplane.spectral import (
    AREA,
    SpectralField,
    dealias,
    gradient,
    grid_l2_norm,
    hm_norm,
    inner_product,
    inverse_laplacian,
    l2_norm,
    laplacian,
    make_lattice,
    project_nonzonal,
    project_zonal,
    random_field,
    single_mode,
    symmetrize,
    to_physical,
    to_spectral,
    velocity_from_vorticity,
    zeros,
)


def assert_valid(f: SpectralField, symmetric=False):
    """Reality in the zonal column, zero mean, and (optionally) oddness in x2."""
    assert f.hermitian_defect() < 1e-14
    assert f.coeffs[0, 0] == 0
    if symmetric:
        assert f.symmetry_defect() < 1e-12


@pytest.mark.parametrize("n, kmax", [(8, 2), (64, 21), (32, 10)])
def test_lattice_mask(n, kmax):
    lat = make_lattice(n, n)
    assert lat.kmax == (kmax, kmax)
    kept_k1 = lat.k1[0][lat.mask.any(axis=0)]
    assert kept_k1.max() == kmax
    kept_k2 = lat.k2[:, 0][lat.mask.any(axis=1)]
    assert np.abs(kept_k2).max() == kmax
    assert not lat.mask[0, 0]


def test_lattice_multiple_of_three_stays_alias_free():
    lat = make_lattice(48, 48)
    assert lat.kmax == (15, 15)
    assert 2 * 15 - 48 < -15


@pytest.mark.parametrize("nx, ny", [(7, 8), (8, 7), (6, 8), (8, 0)])
def test_lattice_rejects_bad_sizes(nx, ny):
    with pytest.raises(ValueError):
        make_lattice(nx, ny)


def test_n_retained_counts_real_degrees_of_freedom(lat32):
    # 21 x 21 wavevectors minus k = 0
    assert lat32.n_retained == 21 * 21 - 1
    assert lat32.n_retained == int(lat32.mask.sum() * 2 - lat32.mask[:, 0].sum())


def test_zero_round_trip(lat16):
    g = to_physical(zeros(lat16))
    assert np.all(g == 0)
    assert np.all(to_spectral(g, lat16).coeffs == 0)


def test_cos_mode_samples(lat16):
    x1, _ = lat16.grid()
    g = to_physical(single_mode(lat16, (1, 0), "cos"))
    np.testing.assert_allclose(g, np.cos(x1), atol=1e-14)


@pytest.mark.parametrize("k", [(0, 1), (0, -3), (2, -1), (-2, 1), (3, 3)])
@pytest.mark.parametrize("kind", ["cos", "sin"])
def test_single_mode_matches_grid_function(lat16, k, kind):
    x1, x2 = lat16.grid()
    phase = k[0] * x1 + k[1] * x2
    want = np.cos(phase) if kind == "cos" else np.sin(phase)
    np.testing.assert_allclose(to_physical(single_mode(lat16, k, kind)), want, atol=1e-13)


@pytest.mark.parametrize("seed", range(100))
def test_round_trip_and_parseval(lat32, seed):
    f = random_field(lat32, seed)
    back = to_spectral(to_physical(f), lat32)
    assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-12 * np.max(np.abs(f.coeffs))
    assert abs(grid_l2_norm(to_physical(f)) - l2_norm(f)) < 1e-10 * l2_norm(f)


def test_size_mismatch(lat16, lat32):
    with pytest.raises(ValueError):
        to_spectral(np.zeros((32, 32)), lat16)
    with pytest.raises(ValueError):
        random_field(lat16, 0) + random_field(lat32, 0)


def test_projections(lat32, rng):
    zonal = single_mode(lat32, (0, 1), "sin")
    assert np.all(project_zonal(zonal).coeffs == zonal.coeffs)
    assert np.all(project_nonzonal(zonal).coeffs == 0)
    assert np.all(project_zonal(single_mode(lat32, (1, 1))).coeffs == 0)

    f = random_field(lat32, rng)
    fb, ft = project_zonal(f), project_nonzonal(f)
    assert np.all((fb + ft).coeffs == f.coeffs)
    assert np.all(project_zonal(fb).coeffs == fb.coeffs)
    assert np.all(project_zonal(ft).coeffs == 0)
    assert abs(inner_product(fb, ft)) < 1e-14
    assert abs(l2_norm(fb) ** 2 + l2_norm(ft) ** 2 - l2_norm(f) ** 2) < 1e-12 * l2_norm(f) ** 2


def test_inverse_laplacian(lat32, rng):
    a = 0.7
    assert inverse_laplacian(single_mode(lat32, (0, 1), amplitude=a)).coefficient((0, 1)) == pytest.approx(a / 2)
    assert inverse_laplacian(single_mode(lat32, (2, 2), amplitude=a)).coefficient((2, 2)) == pytest.approx(a / 16)
    f = random_field(lat32, rng)
    back = -laplacian(inverse_laplacian(f))
    np.testing.assert_allclose(back.coeffs, f.coeffs, atol=1e-12)
    mean = f.coeffs.copy()
    mean[0, 0] = 1.0
    with pytest.raises(ValueError, match="mean-free"):
        inverse_laplacian(SpectralField(lat32, mean))


def test_velocity_of_sin_x2(lat32):
    _, x2 = lat32.grid()
    u1, u2 = velocity_from_vorticity(single_mode(lat32, (0, 1), "sin"))
    np.testing.assert_allclose(u1, np.cos(x2), atol=1e-14)
    np.testing.assert_allclose(u2, 0, atol=1e-14)
    u1, u2 = velocity_from_vorticity(zeros(lat32))
    assert np.all(u1 == 0) and np.all(u2 == 0)


def _curl_and_div(u1, u2, lat):
    a, b = to_spectral(u1, lat), to_spectral(u2, lat)
    d1a, d2a = gradient(a)
    d1b, d2b = gradient(b)
    return d1b - d2a, d1a + d2b


@pytest.mark.parametrize("seed", range(5))
def test_velocity_is_right_inverse_of_curl(lat32, seed):
    w = random_field(lat32, seed, symmetric=True)
    u1, u2 = velocity_from_vorticity(w)
    curl, div = _curl_and_div(u1, u2, lat32)
    wg = to_physical(w)
    assert grid_l2_norm(curl - wg) < 1e-10 * l2_norm(w)
    assert grid_l2_norm(div) < 1e-10 * l2_norm(w)
    # mirror symmetry: u1 even, u2 odd in x2 for odd vorticity
    mirror = (-np.arange(lat32.ny)) % lat32.ny
    np.testing.assert_allclose(u1[mirror], u1, atol=1e-12)
    np.testing.assert_allclose(u2[mirror], -u2, atol=1e-12)


def test_norm_examples(lat32, rng):
    cos1 = single_mode(lat32, (1, 0))
    assert l2_norm(cos1) == pytest.approx(np.sqrt(2 * np.pi**2), rel=1e-14)
    f = random_field(lat32, rng)
    assert inner_product(f, f) == pytest.approx(l2_norm(f) ** 2, rel=1e-14)
    m = single_mode(lat32, (0, 2))
    assert hm_norm(m, 1) == pytest.approx(2 * l2_norm(m), rel=1e-14)
    assert hm_norm(m, 0) == pytest.approx(l2_norm(m), rel=1e-14)
    assert AREA == pytest.approx(4 * np.pi**2)


def test_fields_are_immutable(lat16):
    f = random_field(lat16, 1)
    with pytest.raises(ValueError):
        f.coeffs[1, 1] = 3.0


@given(st.integers(0, 2**32 - 1), st.floats(-3, 1))
def test_operations_preserve_invariants(seed, slope):
    lat = make_lattice(16, 16)
    f = random_field(lat, seed, slope=slope, symmetric=True)
    assert_valid(f, symmetric=True)
    for g in (project_zonal(f), project_nonzonal(f), inverse_laplacian(f), laplacian(f),
              dealias(f), symmetrize(f), 2.0 * f - f):
        assert_valid(g, symmetric=True)
    assert_valid(dealias(to_spectral(to_physical(f), lat)), symmetric=True)


@given(st.integers(0, 2**32 - 1))
def test_symmetrize_is_a_projection(seed):
    lat = make_lattice(16, 16)
    f = random_field(lat, seed)
    s = symmetrize(f)
    np.testing.assert_allclose(symmetrize(s).coeffs, s.coeffs, atol=1e-15)
    assert s.symmetry_defect() < 1e-14

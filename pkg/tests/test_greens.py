import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import kv

from prhf import (
    DomainError,
    bessel_k,
    build_grid,
    greens_kernel,
    kinetic_operator,
    nu_of_energy,
    radial_convolution,
    resolvent_apply,
)
from prhf.greens import default_kernel_mesh, energy_of_nu, exp_moment, tail_slope

ALPHA = 1.0 / 137.036
AINV = 137.036


def g3(s, sig):
    """Normalized 3D Gaussian profile: integral against 4 pi s^2 ds is 1."""
    return (2.0 * np.pi * sig**2) ** -1.5 * np.exp(-(s**2) / (2.0 * sig**2))


# --- Bessel functions --------------------------------------------------------


def test_k1_upper_bound_over_decades():
    ts = np.geomspace(1e-3, 1e3, 61)
    vals = bessel_k(1, ts)
    assert np.all(vals <= 1.0 / ts)


def test_k1_exponential_envelope():
    ts = np.linspace(1.0, 40.0, 50)
    env = bessel_k(1, ts) * np.sqrt(ts) * np.exp(ts)
    assert np.all(env <= 2.0)
    assert np.all(env >= 1.0)


@pytest.mark.parametrize("order", [0, 1])
@pytest.mark.parametrize("t", [0.5, 2.0, 10.0])
def test_bessel_integral_representation(order, t):
    # K_nu(t) = int_0^inf exp(-t cosh u) cosh(nu u) du
    val, _err = quad(
        lambda u: np.exp(-t * np.cosh(u)) * np.cosh(order * u),
        0, 40.0, limit=300, epsabs=1e-16, epsrel=1e-13,
    )
    assert bessel_k(order, t) == pytest.approx(val, rel=1e-9, abs=0)


def test_k2_recurrence_against_independent():
    ts = np.geomspace(1e-3, 600.0, 50)
    ours = bessel_k(2, ts)
    ref = kv(2, ts)
    assert np.max(np.abs(ours - ref) / ref) <= 1e-10


def test_bessel_domain_and_underflow():
    with pytest.raises(DomainError):
        bessel_k(1, 0.0)
    with pytest.raises(DomainError):
        bessel_k(0, -2.0)
    with pytest.raises(DomainError):
        bessel_k(3, 1.0)
    assert bessel_k(1, 800.0) == 0.0


# --- decay rate --------------------------------------------------------------


def test_nu_limits_and_identity():
    assert nu_of_energy(-1e-9 * AINV, ALPHA) == pytest.approx(0.0, abs=1e-2)
    E = -AINV * (1.0 - 1.0 / np.sqrt(2.0))
    nu = nu_of_energy(E, ALPHA)
    alt = np.sqrt(AINV**2 - (E + AINV) ** 2)
    assert nu == pytest.approx(alt, rel=1e-14)
    for E in (-0.9 * AINV, -0.5 * AINV, -1e-3 * AINV):
        assert nu_of_energy(E, ALPHA) < AINV


def test_nu_domain():
    with pytest.raises(DomainError):
        nu_of_energy(0.0, ALPHA)
    with pytest.raises(DomainError):
        nu_of_energy(-1.1 * AINV, ALPHA)
    with pytest.raises(DomainError):
        nu_of_energy(0.3, ALPHA)


def test_energy_of_nu_roundtrip():
    for nu in (0.1, 1.0, 10.0):
        E = energy_of_nu(nu, ALPHA)
        assert nu_of_energy(E, ALPHA) == pytest.approx(nu, rel=1e-12)


# --- radial convolution ------------------------------------------------------


def test_convolution_gaussians_analytic():
    mesh = np.linspace(1e-6, 16.0, 4000)
    f = g3(mesh, 0.8)
    g = g3(mesh, 1.1)
    conv = radial_convolution(f, g, mesh)
    exact = g3(mesh, np.sqrt(0.8**2 + 1.1**2))
    assert np.max(np.abs(conv - exact)) <= 1e-6


def test_convolution_mass_product():
    mesh = np.linspace(1e-6, 16.0, 4000)
    f = 1.3 * g3(mesh, 0.8)
    g = 0.7 * g3(mesh, 1.1)
    conv = radial_convolution(f, g, mesh)
    mass = np.trapezoid(conv * 4 * np.pi * mesh**2, mesh)
    assert mass == pytest.approx(1.3 * 0.7, rel=1e-6)


def test_convolution_delta_like_identity():
    mesh = np.linspace(1e-6, 16.0, 6000)
    f = g3(mesh, 1.2)
    bump = g3(mesh, 0.02)
    conv = radial_convolution(f, bump, mesh)
    sel = mesh < 8.0
    # deviation is dominated by the genuine width of the bump
    assert np.max(np.abs(conv[sel] - f[sel])) <= 5e-4 * f.max()
    widened = g3(mesh, np.sqrt(1.2**2 + 0.02**2))
    assert np.max(np.abs(conv[sel] - widened[sel])) <= 1e-4 * f.max()


def test_convolution_symmetric(rng):
    mesh = np.linspace(1e-6, 12.0, 1500)
    for _ in range(5):
        f = g3(mesh, rng.uniform(0.5, 2.0)) * rng.uniform(0.5, 2.0)
        g = g3(mesh, rng.uniform(0.5, 2.0)) * rng.uniform(0.5, 2.0)
        a = radial_convolution(f, g, mesh)
        b = radial_convolution(g, f, mesh)
        assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(a))


def test_convolution_matches_quadrature_oracle():
    nu = 1.0
    E = energy_of_nu(nu, ALPHA)
    mesh = default_kernel_mesh(E, ALPHA)
    f = bessel_k(1, AINV * mesh) / mesh
    g = np.exp(-nu * mesh) / (4.0 * np.pi * mesh)
    conv = radial_convolution(f, g, mesh)

    def oracle(u):
        fn = lambda s: kv(1, AINV * s) * (np.exp(-nu * abs(u - s)) - np.exp(-nu * (u + s)))
        a, _ = quad(fn, 0.0, 30 * ALPHA, points=[u] if u < 30 * ALPHA else None, limit=200)
        b, _ = quad(fn, 30 * ALPHA, np.inf, limit=200)
        return (a + b) / (2.0 * u * nu)

    for u in (0.01, 0.1, 1.0, 5.0, 20.0, 40.0):
        i = int(np.searchsorted(mesh, u))
        assert conv[i] == pytest.approx(oracle(mesh[i]), rel=1e-3)


# --- tabulated kernel --------------------------------------------------------


@pytest.fixture(scope="module")
def kernel():
    E = energy_of_nu(1.0, ALPHA)
    return greens_kernel(E, ALPHA)


def test_kernel_positive(kernel):
    assert np.all(kernel.values > 0.0)


def test_kernel_est1_envelope(kernel):
    env = kernel.envelope()
    assert np.all(kernel.values <= env)


def test_kernel_third_term_coefficient(kernel):
    # alpha^-2 - nu^2 equals (E + alpha^-1)^2 as an identity
    lhs = AINV**2 - kernel.nu**2
    rhs = (kernel.E + AINV) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_kernel_exp_moment_finite(kernel):
    total, tail_fraction = exp_moment(kernel, 0.9 * kernel.nu)
    assert np.isfinite(total) and total > 0
    assert tail_fraction < 0.05


def test_kernel_tail_slope(kernel):
    slope = tail_slope(kernel)
    assert slope >= -kernel.nu - 1e-3
    assert slope <= -0.9 * kernel.nu


# --- resolvent application ---------------------------------------------------


def test_resolvent_zero():
    grid = build_grid(64, 20.0)
    E = energy_of_nu(1.0, ALPHA)
    v = resolvent_apply(np.zeros(64), E, ALPHA, grid)
    assert np.all(v == 0.0)


def test_resolvent_roundtrip_and_dense():
    grid = build_grid(400, 40.0)
    E = energy_of_nu(1.0, ALPHA)
    T = kinetic_operator(grid, 0, ALPHA).matrix
    A = T - E * np.eye(grid.n)
    for c, s in [(10.0, 1.5), (14.0, 2.0), (8.0, 1.5), (12.0, 2.5), (16.0, 1.8)]:
        f = np.exp(-(((grid.nodes - c) / s) ** 2))
        v = resolvent_apply(f, E, ALPHA, grid)
        roundtrip = np.linalg.norm(A @ v - f) / np.linalg.norm(f)
        assert roundtrip <= 1e-3
        dense = np.linalg.solve(A, f)
        agree = np.linalg.norm(v - dense) / np.linalg.norm(dense)
        assert agree <= 1e-3

import numpy as np
import pytest

from prhf import (
    BadGrid,
    LengthMismatch,
    build_grid,
    channel_laplacian,
    inner,
    integrate,
    kinetic_operator,
    spectral_function,
)
from prhf.radial import nonrelativistic_kinetic

ALPHA = 1.0 / 137.036


def test_grid_nodes_formula():
    grid = build_grid(19, 20.0)
    assert grid.h == pytest.approx(1.0)
    assert np.allclose(grid.nodes, np.arange(1, 20, dtype=float))


def test_grid_large():
    grid = build_grid(1000, 40.0)
    assert grid.h == pytest.approx(40.0 / 1001.0)
    assert grid.nodes[0] == pytest.approx(grid.h)
    assert np.all(np.diff(grid.nodes) > 0)
    assert grid.nodes[-1] < grid.r_max


def test_grid_rejects_bad_sizes():
    with pytest.raises(BadGrid):
        build_grid(0, 1.0)
    with pytest.raises(BadGrid):
        build_grid(3, 4.0)
    with pytest.raises(BadGrid):
        build_grid(100, -2.0)


def test_integrate_ones():
    grid = build_grid(19, 20.0)
    assert integrate(grid, np.ones(19)) == pytest.approx(19.0)
    with pytest.raises(LengthMismatch):
        integrate(grid, np.ones(7))


def test_integrate_sine_squared():
    grid = build_grid(2000, 13.0)
    vals = np.sin(np.pi * grid.nodes / grid.r_max) ** 2
    assert integrate(grid, vals) == pytest.approx(grid.r_max / 2.0, abs=1e-6)


def test_inner_positive_definite(rng):
    grid = build_grid(64, 8.0)
    for _ in range(10):
        a = rng.standard_normal(64)
        assert inner(grid, a, a) > 0.0
    assert inner(grid, np.zeros(64), np.zeros(64)) == 0.0
    a = rng.standard_normal(64)
    b = rng.standard_normal(64)
    assert inner(grid, a, b) == pytest.approx(inner(grid, b, a), abs=0)


def test_laplacian_structure():
    grid = build_grid(19, 20.0)
    lap = channel_laplacian(grid, 0)
    assert np.allclose(np.diag(lap.matrix), 2.0)
    assert np.allclose(np.diag(lap.matrix, 1), -1.0)
    assert np.allclose(lap.matrix, lap.matrix.T, atol=0)


def test_laplacian_spectrum_analytic():
    # Dirichlet eigenvalues of the discrete 1D Laplacian:
    # (4/h^2) sin^2(k pi / (2(n+1))), k = 1..n
    grid = build_grid(180, 9.0)
    lap = channel_laplacian(grid, 0)
    vals, _ = lap.eigensystem()
    k = np.arange(1, grid.n + 1)
    exact = (4.0 / grid.h**2) * np.sin(k * np.pi / (2 * (grid.n + 1))) ** 2
    assert np.allclose(np.sort(vals), np.sort(exact), rtol=1e-10)


def test_laplacian_box_ground_state():
    grid = build_grid(2000, 10.0)
    vals, _ = channel_laplacian(grid, 0).eigensystem()
    assert vals[0] == pytest.approx((np.pi / grid.r_max) ** 2, rel=0.01)


def test_laplacian_centrifugal_monotone():
    grid = build_grid(120, 12.0)
    v0, _ = channel_laplacian(grid, 0).eigensystem()
    v1, _ = channel_laplacian(grid, 1).eigensystem()
    assert np.all(v1 >= v0 - 1e-9)


def test_eigensystem_reconstructs():
    grid = build_grid(90, 9.0)
    lap = channel_laplacian(grid, 2)
    vals, vecs = lap.eigensystem()
    rebuilt = (vecs * vals) @ vecs.T
    err = np.linalg.norm(rebuilt - lap.matrix) / np.linalg.norm(lap.matrix)
    assert err <= 1e-12


def test_spectral_function_identity():
    grid = build_grid(60, 6.0)
    lap = channel_laplacian(grid, 0)
    same = spectral_function(lap, lambda x: x)
    err = np.linalg.norm(same.matrix - lap.matrix) / np.linalg.norm(lap.matrix)
    assert err <= 1e-12


def test_spectral_function_composition():
    grid = build_grid(60, 6.0)
    lap = channel_laplacian(grid, 0)
    g = lambda lam: np.sqrt(lam + 4.0)
    f = lambda lam: lam**2 - lam
    direct = spectral_function(lap, lambda lam: f(g(lam)))
    chained = spectral_function(spectral_function(lap, g), f)
    assert np.allclose(direct.matrix, chained.matrix, rtol=0, atol=1e-9 * np.abs(direct.matrix).max())


def test_spectral_sqrt_squares_back():
    grid = build_grid(80, 8.0)
    lap = channel_laplacian(grid, 1)
    root = spectral_function(lap, np.sqrt)
    err = np.linalg.norm(root.matrix @ root.matrix - lap.matrix) / np.linalg.norm(lap.matrix)
    assert err <= 1e-10


def test_spectral_function_commutes():
    grid = build_grid(70, 7.0)
    lap = channel_laplacian(grid, 0)
    f_op = spectral_function(lap, lambda lam: np.log1p(lam))
    comm = f_op.matrix @ lap.matrix - lap.matrix @ f_op.matrix
    scale = np.linalg.norm(lap.matrix) * np.linalg.norm(f_op.matrix)
    assert np.linalg.norm(comm) <= 1e-10 * scale


def test_kinetic_eigenvalue_map_points():
    # f(0) = 0 and f(3 alpha^-2) = alpha^-1 exactly
    ainv = 1.0 / ALPHA
    f = lambda lam: np.sqrt(lam + ainv**2) - ainv
    assert f(0.0) == pytest.approx(0.0, abs=1e-10)
    assert f(3.0 * ainv**2) == pytest.approx(ainv, rel=1e-14)


def test_kinetic_spectral_mapping():
    grid = build_grid(150, 10.0)
    ainv = 1.0 / ALPHA
    lap_vals, _ = channel_laplacian(grid, 0).eigensystem()
    kin_vals, _ = kinetic_operator(grid, 0, ALPHA).eigensystem()
    expected = np.sqrt(np.sort(lap_vals) + ainv**2) - ainv
    assert np.allclose(np.sort(kin_vals), expected, rtol=1e-10)


def test_kinetic_positive_semidefinite():
    grid = build_grid(150, 10.0)
    for ell in (0, 1, 2):
        vals, _ = kinetic_operator(grid, ell, ALPHA).eigensystem()
        assert vals[0] >= -1e-12 / ALPHA


def test_kinetic_monotone_in_ell():
    grid = build_grid(150, 10.0)
    mins = [kinetic_operator(grid, ell, ALPHA).eigensystem()[0][0] for ell in (0, 1, 2)]
    assert mins[1] >= mins[0] - 1e-12
    assert mins[2] >= mins[1] - 1e-12


def test_kinetic_large_alpha_expansion():
    # alpha^-2 small: T = sqrt(L) - alpha^-1 + remainder, with the remainder
    # bounded by alpha^-2 / (2 sqrt(mu)) per eigenvalue
    grid = build_grid(150, 10.0)
    alpha = 1e3
    lap_vals, _ = channel_laplacian(grid, 0).eigensystem()
    kin_vals, _ = kinetic_operator(grid, 0, alpha).eigensystem()
    mu = np.sort(lap_vals)
    rem = np.sort(kin_vals) - (np.sqrt(mu) - 1.0 / alpha)
    assert np.all(rem >= -1e-12)
    assert np.all(rem <= alpha**-2 / (2.0 * np.sqrt(mu)) + 1e-12)


def test_nonrelativistic_limit_eigenvalues():
    # alpha -> 0: alpha^-1 T -> L/2 on the lowest modes
    grid = build_grid(1500, 40.0)
    alpha = 1e-3
    lap_vals, _ = channel_laplacian(grid, 0).eigensystem()
    kin_vals, _ = kinetic_operator(grid, 0, alpha).eigensystem()
    lhs = np.sort(kin_vals)[:10] / alpha
    rhs = np.sort(lap_vals)[:10] / 2.0
    assert np.allclose(lhs, rhs, rtol=1e-3)


def test_nonrelativistic_kinetic_dominates():
    grid = build_grid(150, 10.0)
    T = kinetic_operator(grid, 0, ALPHA).matrix
    Tnr = nonrelativistic_kinetic(grid, 0, ALPHA).matrix
    vals = np.linalg.eigvalsh(Tnr - T)
    assert vals[0] >= -1e-10

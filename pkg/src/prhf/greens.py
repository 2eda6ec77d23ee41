"""Resolvent kernel of the radial square-root kinetic operator.

For E in (-alpha^-1, 0) the operator T - E is invertible with an
explicit radial kernel

    G_E(u) = (E + a) e^{-nu u} / (4 pi u)
           + (a / 2 pi^2) K_1(a u) / u
           + (E + a)^2 (a / 2 pi^2) [ K_1(a|.|)/|.| * e^{-nu|.|}/(4 pi |.|) ](u)

with a = alpha^-1, nu = sqrt(-E (2 a + E)) = sqrt(a^2 - (E+a)^2), K_1 a
modified Bessel function of the second kind, and * the 3D convolution
of radial profiles. The kernel is positive and bounded by

    G_E(u) <= C * e^{-nu u} / (4 pi u) + (a / 2 pi^2) K_1(a u) / u,

where C is recorded on the tabulated kernel (computed from the Newton
bound on the convolution term).

resolvent_apply realizes v = G_E * f for reduced s-channel functions
through exact per-cell integrals of the first two kernel terms (they
have elementary/Bessel antiderivatives) plus a tabulated double
cumulative for the convolution term; this keeps the log-singular
diagonal of the reduced kernel under control.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid, quad
from scipy.special import iti0k0, k0 as _sk0, k1 as _sk1

from .errors import DomainError
from .radial import RadialGrid

_CONV_CHUNK = 256


def bessel_k(order: int, t):
    """Modified Bessel function K_nu of the second kind, nu in {0, 1, 2}.

    Underflows to exact 0 for t beyond roughly 700, which is acceptable
    everywhere the kernel uses it (always multiplied by bounded terms).
    Order 2 follows the three-term recurrence K2 = K0 + (2/t) K1.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise DomainError("bessel_k requires strictly positive finite arguments")
    if order == 0:
        out = _sk0(arr)
    elif order == 1:
        out = _sk1(arr)
    elif order == 2:
        out = _sk0(arr) + (2.0 / arr) * _sk1(arr)
    else:
        raise DomainError(f"unsupported order {order}; only 0, 1, 2 are tabulated")
    return out if isinstance(t, np.ndarray) else float(out)


def nu_of_energy(E: float, alpha: float) -> float:
    """Exponential rate nu = sqrt(-E (2 alpha^-1 + E)) for E in (-alpha^-1, 0)."""
    ainv = 1.0 / alpha
    if not (-ainv < E < 0.0):
        raise DomainError(f"E={E} outside the open interval (-alpha^-1, 0)")
    return float(np.sqrt(-E * (2.0 * ainv + E)))


def energy_of_nu(nu: float, alpha: float) -> float:
    """Inverse of nu_of_energy on the branch E in (-alpha^-1, 0).

    Rationalized form; the naive sqrt difference loses half the digits
    for nu much smaller than alpha^-1.
    """
    ainv = 1.0 / alpha
    if not (0.0 < nu < ainv):
        raise DomainError(f"nu={nu} outside (0, alpha^-1)")
    return float(-(nu**2) / (np.sqrt(ainv**2 - nu**2) + ainv))


def default_kernel_mesh(
    E: float, alpha: float, u_max: float | None = None,
    n_far: int = 2400, u_min: float | None = None,
) -> np.ndarray:
    """Log-refined near zero (the kernel diverges like 1/u^2), uniform beyond.

    The mesh floor scales with alpha: the K1 ingredient has a
    log-divergent cumulative at the origin and a fixed floor would lose
    an O(u_min/alpha) fraction of the short-range mass.
    """
    nu = nu_of_energy(E, alpha)
    if u_max is None:
        u_max = 80.0 / nu
    if u_min is None:
        u_min = min(1e-6, 1e-5 * alpha)
    u_switch = min(1.0, 0.2 * u_max)
    n_log = max(400, int(np.ceil(85.0 * np.log10(u_switch / u_min))))
    head = np.geomspace(u_min, u_switch, n_log)
    tail = np.linspace(u_switch, u_max, n_far + 1)[1:]
    return np.concatenate([head, tail])


def _cell_edges(mesh: np.ndarray) -> np.ndarray:
    edges = np.empty(mesh.size + 1)
    edges[1:-1] = 0.5 * (mesh[1:] + mesh[:-1])
    edges[0] = max(mesh[0] - 0.5 * (mesh[1] - mesh[0]), 0.0)
    edges[-1] = mesh[-1] + 0.5 * (mesh[-1] - mesh[-2])
    return edges


def radial_convolution(f: np.ndarray, g: np.ndarray, mesh: np.ndarray) -> np.ndarray:
    """3D convolution of two radial profiles tabulated on a shared mesh.

    (f*g)(r) = (2 pi / r) int_0^inf s f(s) [ int_{|r-s|}^{r+s} t g(t) dt ] ds.

    The inner integral is taken from tail-anchored cumulatives (so the
    far field is free of cancellation against the saturated total) and
    is itself integrated in closed form over each source cell through a
    second cumulative. That product integration keeps profiles with
    sub-mesh range (short-range Bessel spikes) exact in mass where point
    sampling of the inner difference would miss them. The result is
    symmetrized over the two orderings, making the discrete operation
    symmetric by construction.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    mesh = np.asarray(mesh, dtype=float)
    if f.shape != mesh.shape or g.shape != mesh.shape:
        raise DomainError("f, g, mesh must share a shape")

    # Canonical ordering: the shorter-range profile goes to the inner
    # cumulative (its mass, possibly concentrated below the mesh spacing,
    # is then integrated exactly); the outer sweep samples the smoother
    # one. Both argument orders run the identical computation, so the
    # discrete operation is exactly symmetric.
    def _rms_range(p):
        mass = np.trapezoid(np.abs(p) * mesh**2, mesh)
        if mass <= 0.0:
            return 0.0
        return float(np.sqrt(np.trapezoid(np.abs(p) * mesh**4, mesh) / mass))

    rf, rg = _rms_range(f), _rms_range(g)
    if rf < rg or (rf == rg and f.tobytes() <= g.tobytes()):
        outer, inner = g, f
    else:
        outer, inner = f, g

    edges = _cell_edges(mesh)
    lo_edge = edges[:-1]
    hi_edge = edges[1:]
    # T~(x) = int_0^x t * inner dt - total  (tends to 0 at the far end, so
    # far-field differences are free of cancellation)
    tg = cumulative_simpson(mesh * inner, x=mesh, initial=0.0)
    tg -= tg[-1]
    acc = cumulative_simpson(tg, x=mesh, initial=0.0)
    m0, t0 = mesh[0], tg[0]

    def A(x):
        # linear continuation below the mesh start; plain clamping there
        # drops near-diagonal mass of short-range profiles
        return np.interp(x, mesh, acc) + np.minimum(x - m0, 0.0) * t0

    sf = mesh * outer
    out = np.empty_like(mesh)
    for lo in range(0, mesh.size, _CONV_CHUNK):
        hi = min(lo + _CONV_CHUNK, mesh.size)
        r = mesh[lo:hi, None]
        a = lo_edge[None, :]
        b = hi_edge[None, :]
        plus = A(r + b) - A(r + a)
        ra = A(np.abs(r - a))
        rb = A(np.abs(r - b))
        minus = np.where(r >= b, ra - rb, np.where(r <= a, rb - ra, ra + rb))
        out[lo:hi] = (sf[None, :] * (plus - minus)).sum(axis=1)
    return 2.0 * np.pi * out / mesh


def est1_constant(E: float, alpha: float) -> float:
    """Envelope constant C: (E+a) plus the Newton bound on the convolution term."""
    ainv = 1.0 / alpha
    nu = nu_of_energy(E, alpha)
    integrand = lambda s: _sk1(ainv * s) * np.exp(nu * s) * s
    cut = 50.0 * alpha
    part1 = quad(integrand, 0.0, cut, limit=200)[0]
    part2 = quad(integrand, cut, np.inf, limit=200)[0]
    tail_integral = part1 + part2     # int_0^inf K1(a s) e^{nu s} s ds
    return (E + ainv) + (E + ainv) ** 2 * (ainv / (2.0 * np.pi**2)) * 4.0 * np.pi * tail_integral


@dataclass
class GreensKernel:
    """Tabulated resolvent kernel with its three ingredients."""

    E: float
    alpha: float
    nu: float
    mesh: np.ndarray
    term1: np.ndarray
    term2: np.ndarray
    term3: np.ndarray
    values: np.ndarray
    c_bound: float

    def envelope(self, u=None) -> np.ndarray:
        """Pointwise upper bound C e^{-nu u}/(4 pi u) + (a/2pi^2) K1(a u)/u."""
        if u is None:
            u = self.mesh
        ainv = 1.0 / self.alpha
        yuk = self.c_bound * np.exp(-self.nu * u) / (4.0 * np.pi * u)
        return yuk + (ainv / (2.0 * np.pi**2)) * _sk1(ainv * u) / u


def greens_kernel(E: float, alpha: float, mesh: np.ndarray | None = None) -> GreensKernel:
    """Tabulate the three-term kernel on the mesh (convolution included)."""
    nu = nu_of_energy(E, alpha)
    ainv = 1.0 / alpha
    if mesh is None:
        mesh = default_kernel_mesh(E, alpha)
    u = np.asarray(mesh, dtype=float)
    term1 = (E + ainv) * np.exp(-nu * u) / (4.0 * np.pi * u)
    term2 = (ainv / (2.0 * np.pi**2)) * _sk1(ainv * u) / u
    f_tab = _sk1(ainv * u) / u
    g_tab = np.exp(-nu * u) / (4.0 * np.pi * u)
    conv = radial_convolution(f_tab, g_tab, u)
    # alpha^-2 - nu^2 = (E + alpha^-1)^2 exactly
    term3 = (E + ainv) ** 2 * (ainv / (2.0 * np.pi**2)) * conv
    values = term1 + term2 + term3
    return GreensKernel(
        E=E, alpha=alpha, nu=nu, mesh=u,
        term1=term1, term2=term2, term3=term3, values=values,
        c_bound=est1_constant(E, alpha),
    )


def tail_slope(kernel: GreensKernel, lo: float = 15.0, hi: float = 35.0) -> float:
    """Least-squares slope of log(u G(u)) over nu*u in [lo, hi].

    The 1/u prefactor of the envelope is removed before fitting so the
    asymptote is exactly -nu.
    """
    u = kernel.mesh
    sel = (kernel.nu * u >= lo) & (kernel.nu * u <= hi) & (kernel.values > 0)
    if np.count_nonzero(sel) < 8:
        raise DomainError("mesh does not cover the requested far-field window")
    x = u[sel]
    y = np.log(x * kernel.values[sel])
    slope, _inter = np.polyfit(x, y, 1)
    return float(slope)


def exp_moment(kernel: GreensKernel, beta: float) -> tuple[float, float]:
    """(int e^{beta u} G(u) 4 pi u^2 du on the mesh, tail fraction of last 20%).

    A small tail fraction certifies numerical convergence of the moment,
    i.e. integrability of e^{beta u} G_E.
    """
    u = kernel.mesh
    integrand = np.exp(beta * u) * kernel.values * 4.0 * np.pi * u**2
    total = float(np.trapezoid(integrand, u))
    cut = u[0] + 0.8 * (u[-1] - u[0])
    sel = u >= cut
    tail = float(np.trapezoid(integrand[sel], u[sel]))
    return total, tail / total if total > 0 else float("nan")


# --- resolvent application on the SCF grid ---------------------------------

_RESOLVENT_CACHE: dict = {}
_RESOLVENT_LOCK = threading.Lock()
_RESOLVENT_CACHE_MAX = 4


def _itk0(x):
    """int_0^x K0, clamped: the integral saturates at pi/2 within 1e-16 by x=35."""
    return iti0k0(np.minimum(x, 35.0))[1]


def _interval_k0(a, b, ainv):
    """int_a^b K0(ainv*s) ds for 0 <= a <= b, elementwise."""
    return (_itk0(ainv * b) - _itk0(ainv * a)) / ainv


def _abs_interval(r, a, b, F):
    """int_a^b g(|r - s|) ds given the antiderivative F(x) = int_0^x g.

    Three cases: cell entirely left of r, entirely right, or straddling.
    """
    ra = F(np.abs(r - a))
    rb = F(np.abs(r - b))
    return np.where(r >= b, ra - rb, np.where(r <= a, rb - ra, ra + rb))


def _conv_cumulatives(E: float, alpha: float, u_max: float):
    """Tabulated first and second cumulative of u * term3(u)."""
    key = (round(E, 14), round(alpha, 16), round(u_max, 6))
    with _RESOLVENT_LOCK:
        hit = _RESOLVENT_CACHE.get(key)
    if hit is not None:
        return hit
    mesh = default_kernel_mesh(E, alpha, u_max=u_max, n_far=2600)
    ker = greens_kernel(E, alpha, mesh=mesh)
    ug3 = mesh * ker.term3
    T3 = np.concatenate([[0.0], cumulative_trapezoid(ug3, mesh)])
    A3 = np.concatenate([[0.0], cumulative_trapezoid(T3, mesh)])
    hit = (mesh, T3, A3, ker)
    with _RESOLVENT_LOCK:
        if len(_RESOLVENT_CACHE) >= _RESOLVENT_CACHE_MAX:
            _RESOLVENT_CACHE.pop(next(iter(_RESOLVENT_CACHE)))
        _RESOLVENT_CACHE[key] = hit
    return hit


def resolvent_apply(f: np.ndarray, E: float, alpha: float, grid: RadialGrid) -> np.ndarray:
    """Apply (T - E)^{-1} to a reduced s-channel function via the kernel.

    v(r) = int M(r,s) f(s) ds with the reduced pair kernel

        M(r,s) = (E+a)/(2 nu) [e^{-nu|r-s|} - e^{-nu(r+s)}]
               + (1/pi) [K0(a|r-s|) - K0(a(r+s))]
               + 2 pi [T3(r+s) - T3(|r-s|)],   T3(x) = int_0^x t G3(t) dt,

    integrated cell-by-cell (the K0 part is log-singular on the diagonal
    and concentrated below the grid spacing, so per-cell antiderivatives
    are required rather than point sampling).
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n,):
        raise DomainError("f must be tabulated on the grid nodes")
    nu = nu_of_energy(E, alpha)
    ainv = 1.0 / alpha
    r = grid.nodes
    h = grid.h
    u_max = 2.0 * grid.r_max + 4.0 * h
    mesh, T3, A3, _ker = _conv_cumulatives(E, alpha, u_max)
    T3f = lambda x: np.interp(x, mesh, T3)
    A3f = lambda x: np.interp(x, mesh, A3)
    c1 = (E + ainv) / (2.0 * nu)

    def cum_exp(x):
        # int_0^x e^{-nu t} dt
        return (1.0 - np.exp(-nu * x)) / nu

    def cum_k0(x):
        return _itk0(ainv * x) / ainv

    v = np.empty(grid.n)
    a_cell = r - 0.5 * h
    b_cell = r + 0.5 * h
    for lo in range(0, grid.n, _CONV_CHUNK):
        hi = min(lo + _CONV_CHUNK, grid.n)
        ri = r[lo:hi, None]
        a = a_cell[None, :]
        b = b_cell[None, :]
        # term1: c1 * (int e^{-nu|r-s|} - int e^{-nu(r+s)})
        J1 = _abs_interval(ri, a, b, cum_exp)
        J2 = np.exp(-nu * ri) * (np.exp(-nu * a) - np.exp(-nu * b)) / nu
        W = c1 * (J1 - J2)
        # term2: (1/pi) (int K0(a|r-s|) - int K0(a(r+s)))
        I1 = _abs_interval(ri, a, b, cum_k0)
        I2 = _interval_k0(ri + a, ri + b, ainv)
        W += (I1 - I2) / np.pi
        # term3: 2 pi (int T3(r+s) - int T3(|r-s|))
        K2 = A3f(ri + b) - A3f(ri + a)
        K1_ = _abs_interval(ri, a, b, A3f)
        W += 2.0 * np.pi * (K2 - K1_)
        v[lo:hi] = W @ f
    return v

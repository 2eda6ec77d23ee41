"""Radial discretization and spectral matrix functions.

Everything lives on a uniform grid r_i = i*h, i = 1..n, h = r_max/(n+1),
with Dirichlet values pinned to zero at r = 0 and r = r_max. Reduced
radial functions P(r) = r*phi(r) are stored as plain vectors on the
nodes; integrals are h-weighted sums (rectangle and trapezoid coincide
under the Dirichlet endpoints).

The kinetic operator sqrt(-d^2/dr^2 + ell(ell+1)/r^2 + alpha^-2) - alpha^-1
is realized spectrally from the dense eigendecomposition of the
tridiagonal channel Laplacian. Eigenvector bases are cached per
(n, r_max, ell) and reused across alpha values.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import BadGrid, EigFailure, LengthMismatch


@dataclass(frozen=True)
class RadialGrid:
    """Uniform Dirichlet grid on (0, r_max)."""

    n: int
    r_max: float
    h: float = field(init=False, compare=False)
    nodes: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        h = self.r_max / (self.n + 1)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "nodes", h * np.arange(1, self.n + 1))

    def __hash__(self):
        return hash((self.n, self.r_max))


def build_grid(n: int, r_max: float) -> RadialGrid:
    if n < 16:
        raise BadGrid(f"grid size n={n} below minimum 16")
    if not np.isfinite(r_max) or r_max <= 0:
        raise BadGrid(f"box radius r_max={r_max} must be positive and finite")
    return RadialGrid(n=int(n), r_max=float(r_max))


def integrate(grid: RadialGrid, values) -> float:
    values = np.asarray(values)
    if values.shape[-1] != grid.n:
        raise LengthMismatch(f"expected {grid.n} node values, got {values.shape[-1]}")
    return float(grid.h * values.sum(axis=-1))


def inner(grid: RadialGrid, a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != (grid.n,) or b.shape != (grid.n,):
        raise LengthMismatch("inner() arguments must be node vectors")
    return float(grid.h * (a @ b))


class ChannelOperator:
    """Dense symmetric operator on one angular channel.

    The eigendecomposition is computed on first use under a lock and
    then shared read-only.
    """

    def __init__(self, ell: int, matrix: np.ndarray):
        self.ell = int(ell)
        self.matrix = matrix
        self._eig = None
        self._lock = threading.Lock()

    def eigensystem(self):
        """Return (eigenvalues ascending, orthonormal eigenvector columns)."""
        if self._eig is None:
            with self._lock:
                if self._eig is None:
                    try:
                        vals, vecs = scipy.linalg.eigh(self.matrix)
                    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
                        raise EigFailure(str(exc)) from exc
                    self._eig = (vals, vecs)
        return self._eig

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def channel_laplacian(grid: RadialGrid, ell: int) -> ChannelOperator:
    """-d^2/dr^2 + ell(ell+1)/r^2 with Dirichlet ends, second-order stencil."""
    if ell < 0:
        raise BadGrid(f"angular momentum ell={ell} must be non-negative")
    n, h, r = grid.n, grid.h, grid.nodes
    mat = np.zeros((n, n))
    idx = np.arange(n)
    mat[idx, idx] = 2.0 / h**2 + ell * (ell + 1) / r**2
    mat[idx[:-1], idx[:-1] + 1] = -1.0 / h**2
    mat[idx[:-1] + 1, idx[:-1]] = -1.0 / h**2
    return ChannelOperator(ell, mat)


def spectral_function(op: ChannelOperator, f) -> ChannelOperator:
    """Apply a scalar function to a symmetric operator through its spectrum."""
    vals, vecs = op.eigensystem()
    fvals = np.asarray(f(vals), dtype=float)
    if not np.all(np.isfinite(fvals)):
        raise EigFailure("scalar function produced non-finite values on the spectrum")
    out = (vecs * fvals) @ vecs.T
    out = 0.5 * (out + out.T)
    result = ChannelOperator(op.ell, out)
    order = np.argsort(fvals, kind="stable")
    result._eig = (fvals[order], vecs[:, order])
    return result


# caches keyed on hashable grid identity; bounded to keep memory flat
_LAPLACIAN_CACHE: dict = {}
_KINETIC_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()
_LAPLACIAN_CACHE_MAX = 8
_KINETIC_CACHE_MAX = 12


def _cached_laplacian(grid: RadialGrid, ell: int) -> ChannelOperator:
    key = (grid.n, grid.r_max, ell)
    with _CACHE_LOCK:
        op = _LAPLACIAN_CACHE.get(key)
    if op is None:
        op = channel_laplacian(grid, ell)
        op.eigensystem()
        with _CACHE_LOCK:
            if len(_LAPLACIAN_CACHE) >= _LAPLACIAN_CACHE_MAX:
                _LAPLACIAN_CACHE.pop(next(iter(_LAPLACIAN_CACHE)))
            _LAPLACIAN_CACHE[key] = op
    return op


def kinetic_operator(grid: RadialGrid, ell: int, alpha: float) -> ChannelOperator:
    """T_ell = sqrt(L_ell + alpha^-2) - alpha^-1, built spectrally and cached."""
    if alpha <= 0:
        raise BadGrid(f"alpha={alpha} must be positive")
    key = (grid.n, grid.r_max, ell, alpha)
    with _CACHE_LOCK:
        op = _KINETIC_CACHE.get(key)
    if op is not None:
        return op
    ainv = 1.0 / alpha
    lap = _cached_laplacian(grid, ell)
    op = spectral_function(lap, lambda lam: np.sqrt(lam + ainv**2) - ainv)
    with _CACHE_LOCK:
        if len(_KINETIC_CACHE) >= _KINETIC_CACHE_MAX:
            _KINETIC_CACHE.pop(next(iter(_KINETIC_CACHE)))
        _KINETIC_CACHE[key] = op
    return op


def nonrelativistic_kinetic(grid: RadialGrid, ell: int, alpha: float) -> ChannelOperator:
    """alpha*L_ell/2; comparison operator satisfying T_ell <= alpha*L_ell/2."""
    lap = _cached_laplacian(grid, ell)
    op = ChannelOperator(ell, 0.5 * alpha * lap.matrix)
    if lap._eig is not None:
        vals, vecs = lap._eig
        op._eig = (0.5 * alpha * vals, vecs)
    return op


def momentum_operator(grid: RadialGrid, ell: int = 0) -> ChannelOperator:
    """|p| on one channel: the spectral square root of the channel Laplacian."""
    return spectral_function(_cached_laplacian(grid, ell), np.sqrt)

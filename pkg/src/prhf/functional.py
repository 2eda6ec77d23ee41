"""Total-energy assembly, rank-two perturbation identity, exact line segments.

The functional is quadratic in the density matrix: the one-body part
(with its alpha^-1 prefactor) is linear and the direct-minus-exchange
pair is a quadratic form. Both the rank-two increment formula and the
exact quadratic restriction along convex segments follow from that
structure and are cross-checked against direct re-evaluation in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coulomb import (
    ChannelBlock,
    DensityMatrix,
    direct_energy,
    energy_terms,
    exchange_energy,
    reduced_density,
)
from .errors import EnergyBoundViolated, NotAdmissible, TraceMismatch
from .model import AtomSystem
from .radial import RadialGrid, inner

LOWER_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy contributions on the Hartree-like scale of the functional."""

    kinetic: float    # alpha^-1 Tr[T gamma]
    nuclear: float    # alpha^-1 Tr[V gamma], entered with a minus sign
    direct: float     # D(gamma)
    exchange: float   # Ex(gamma), entered with a minus sign
    total: float

    def as_dict(self) -> dict:
        return {
            "kinetic": self.kinetic,
            "nuclear": self.nuclear,
            "direct": self.direct,
            "exchange": self.exchange,
            "total": self.total,
        }


def total_energy(
    gamma: DensityMatrix,
    grid: RadialGrid,
    sys: AtomSystem,
    kinetic: str = "pseudorelativistic",
) -> EnergyBreakdown:
    """Assemble the functional value with the alpha^-1 one-body prefactor.

    Enforces the global floor total >= -alpha^-2 * Tr[gamma] as a hard
    runtime assertion; a breach signals an implementation bug, not a
    data condition.
    """
    tr_T, tr_V, D, Ex = energy_terms(gamma, grid, sys, kinetic=kinetic)
    ainv = sys.alpha_inv
    kin = ainv * tr_T
    nuc = ainv * tr_V
    tot = kin - nuc + D - Ex
    floor = -(ainv**2) * gamma.trace()
    if tot < floor - LOWER_BOUND_SLACK * (1.0 + abs(floor)):
        raise EnergyBoundViolated(
            f"total {tot} fell below -alpha^-2*Tr = {floor}"
        )
    return EnergyBreakdown(kinetic=kin, nuclear=nuc, direct=D, exchange=Ex, total=tot)


def _orbital_energy(fock, ell: int, spin: int, u: np.ndarray, grid: RadialGrid) -> float:
    H = fock.channel(ell, spin)
    return inner(grid, u, H @ u)


def _added_blocks(entries) -> DensityMatrix:
    """Density matrix made of bare perturbation shells (may carry f<0 weights
    temporarily; only used inside quadratic forms)."""
    blocks: dict[tuple[int, int], ChannelBlock] = {}
    for u, ell, spin, f in entries:
        key = (ell, spin)
        if key in blocks:
            blk = blocks[key]
            blocks[key] = ChannelBlock(
                orbitals=np.column_stack([blk.orbitals, u]),
                occupations=np.append(blk.occupations, f),
            )
        else:
            blocks[key] = ChannelBlock(orbitals=u[:, None], occupations=np.array([f]))
    return DensityMatrix(blocks)


def rank2_delta(
    gamma: DensityMatrix,
    u1: np.ndarray,
    u2: np.ndarray,
    eps1: float,
    eps2: float,
    grid: RadialGrid,
    sys: AtomSystem,
    ell1: int = 0,
    spin1: int = 0,
    ell2: int = 0,
    spin2: int = 1,
    fock=None,
) -> float:
    """Energy change from gamma to gamma + eps1*u1u1* + eps2*u2u2*.

    u1, u2 are channel orbitals with eigenvalue weights eps1, eps2 (a
    shell of 2*ell+1 degenerate orbitals each); for ell = 0 shells this
    is the literal rank-two increment

        alpha^-1 eps1 <u1,h u1> + alpha^-1 eps2 <u2,h u2> + eps1 eps2 R_u

    with R_u the antisymmetrized pair repulsion. The returned value
    equals total_energy(gamma~) - total_energy(gamma) exactly (to
    rounding) because the functional is quadratic.
    """
    for u, ell, spin, eps in ((u1, ell1, spin1, eps1), (u2, ell2, spin2, eps2)):
        if abs(inner(grid, u, u) - 1.0) > 1e-8:
            raise NotAdmissible("perturbation orbitals must be normalized")
        blk = gamma.blocks.get((ell, spin))
        lam_here = 0.0
        if blk is not None and blk.m:
            # occupation gamma already assigns along u; exact when u matches
            # an eigenvector, a quadratic-form proxy otherwise
            coef = grid.h * blk.orbitals.T @ u
            lam_here = float(coef @ (blk.occupations / (2 * ell + 1) * coef))
        if not (-1e-12 - lam_here <= eps <= 1.0 - lam_here + 1e-12):
            raise NotAdmissible(
                f"weight eps={eps} pushes channel (ell={ell}, spin={spin}) "
                "outside 0 <= gamma <= Id"
            )
    if (ell1, spin1) == (ell2, spin2) and abs(inner(grid, u1, u2)) > 1e-8:
        raise NotAdmissible("perturbation orbitals must be mutually orthogonal")

    if fock is None:
        from .scf import fock_build

        fock = fock_build(gamma, grid, sys, ell_max=max(gamma.max_ell(), ell1, ell2))
    ainv = sys.alpha_inv
    f1 = eps1 * (2 * ell1 + 1)
    f2 = eps2 * (2 * ell2 + 1)
    linear = ainv * (
        f1 * _orbital_energy(fock, ell1, spin1, u1, grid)
        + f2 * _orbital_energy(fock, ell2, spin2, u2, grid)
    )
    delta = _added_blocks([(u1, ell1, spin1, f1), (u2, ell2, spin2, f2)])
    w_delta = reduced_density(delta, grid)
    quad = direct_energy(w_delta, grid) - exchange_energy(delta, grid)
    return linear + quad


def line_coefficients(
    gamma: DensityMatrix,
    gamma_target: DensityMatrix,
    grid: RadialGrid,
    sys: AtomSystem,
    fock=None,
    e_gamma: EnergyBreakdown | None = None,
    e_target: EnergyBreakdown | None = None,
    kinetic: str = "pseudorelativistic",
) -> tuple[float, float]:
    """Exact quadratic profile along the segment (1-t) gamma + t gamma_target.

    E(t) = E(gamma) + a t + b t^2 with a = alpha^-1 Tr[h_gamma (target -
    gamma)] and b recovered from one evaluation at t = 1.
    """
    if abs(gamma.trace() - gamma_target.trace()) > 1e-9:
        raise TraceMismatch(
            f"traces differ: {gamma.trace()} vs {gamma_target.trace()}"
        )
    if fock is None:
        from .scf import fock_build

        fock = fock_build(
            gamma, grid, sys,
            ell_max=max(gamma.max_ell(), gamma_target.max_ell()),
            kinetic=kinetic,
        )
    a = 0.0
    for dm, sign in ((gamma_target, 1.0), (gamma, -1.0)):
        for (ell, spin), blk in dm.blocks.items():
            H = fock.channel(ell, spin)
            HP = H @ blk.orbitals
            vals = grid.h * np.einsum("ia,ia->a", blk.orbitals, HP)
            a += sign * float(np.sum(blk.occupations * vals))
    a *= sys.alpha_inv
    if e_gamma is None:
        e_gamma = total_energy(gamma, grid, sys, kinetic=kinetic)
    if e_target is None:
        e_target = total_energy(gamma_target, grid, sys, kinetic=kinetic)
    b = e_target.total - e_gamma.total - a
    return a, b

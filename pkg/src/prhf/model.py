"""Physical parameters, shell configurations, and solver options.

Unit convention: hbar = e = m = 1 throughout. The kinetic operator is
sqrt(-Delta + alpha^-2) - alpha^-1 and one-body terms carry an alpha^-1
prefactor in the total energy, so reported totals come out on a
Hartree-like scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import BadCount, SubcriticalityViolated

TWO_OVER_PI = 2.0 / math.pi

FINE_STRUCTURE_ALPHA = 1.0 / 137.036


@dataclass(frozen=True)
class AtomSystem:
    """An atom: nuclear charge Z, N electrons, coupling alpha, q spin states."""

    Z: float
    N: int
    alpha: float = FINE_STRUCTURE_ALPHA
    q: int = 2

    @property
    def alpha_inv(self) -> float:
        return 1.0 / self.alpha

    @property
    def z_alpha(self) -> float:
        return self.Z * self.alpha


@dataclass(frozen=True)
class ShellSpec:
    """Occupation of one (ell, spin) shell; at most 2*ell+1 electrons per spin."""

    ell: int
    spin: int
    occupation: float


@dataclass(frozen=True)
class SolverOptions:
    """Numerical knobs for the SCF run.

    level_shift is on the reported Hartree-like energy scale; None means
    0.5 at runtime (Roothaan path only). ell_max None means the largest
    ell present in the initial shells.
    """

    n: int = 1200
    r_max: float = 30.0
    max_iter: int = 200
    tol_energy: float = 1e-10
    tol_commutator: float = 1e-6
    algorithm: str = "optimal-damping"
    level_shift: float | None = None
    initial_guess: str = "h0"
    ell_max: int | None = None
    kinetic: str = "pseudorelativistic"
    include_p_shells: bool = False

    _ALGORITHMS = ("optimal-damping", "roothaan-levelshift")
    _GUESSES = ("h0", "screened", "shells")
    _KINETICS = ("pseudorelativistic", "nonrelativistic")

    def validated(self) -> "SolverOptions":
        if self.n < 16:
            raise BadCount(f"grid size n={self.n} below minimum 16")
        if self.r_max <= 0:
            raise BadCount(f"box radius r_max={self.r_max} must be positive")
        if self.tol_energy <= 0 or self.tol_commutator <= 0:
            raise BadCount("tolerances must be positive")
        if self.max_iter < 1:
            raise BadCount("max_iter must be at least 1")
        if self.algorithm not in self._ALGORITHMS:
            raise BadCount(f"unknown algorithm {self.algorithm!r}")
        if self.initial_guess not in self._GUESSES:
            raise BadCount(f"unknown initial guess {self.initial_guess!r}")
        if self.kinetic not in self._KINETICS:
            raise BadCount(f"unknown kinetic mode {self.kinetic!r}")
        return self

    def with_(self, **kw) -> "SolverOptions":
        return replace(self, **kw)


def validate_system(sys: AtomSystem) -> AtomSystem:
    """Check the admissibility gates and return the system unchanged.

    The subcritical condition Z*alpha < 2/pi is strict; the boundary case
    is refused.
    """
    if sys.N < 1:
        raise BadCount(f"electron count N={sys.N} must be >= 1")
    if sys.q < 1:
        raise BadCount(f"spin multiplicity q={sys.q} must be >= 1")
    if sys.alpha <= 0:
        raise BadCount(f"alpha={sys.alpha} must be positive")
    if sys.Z < 0:
        raise BadCount(f"nuclear charge Z={sys.Z} must be non-negative")
    if sys.z_alpha >= TWO_OVER_PI:
        raise SubcriticalityViolated(
            f"Z*alpha = {sys.z_alpha:.12g} >= 2/pi = {TWO_OVER_PI:.12g}; "
            "the solver requires the strictly subcritical regime"
        )
    return sys


def default_shells(sys: AtomSystem, include_p: bool = False) -> list[ShellSpec]:
    """Seed shell configuration: fill s-shells 1s, 2s, ... across spins.

    Each (shell, spin) slot takes at most one electron (2*ell+1 = 1 for
    ell = 0). p-shells are only used when explicitly requested; they are
    filled after the first two s-shells in that case.
    """
    shells: list[ShellSpec] = []
    remaining = float(sys.N)
    shell_index = 0
    while remaining > 0:
        shell_index += 1
        if include_p and shell_index == 3:
            # one p-shell wedged after 1s/2s, capacity 3 per spin
            for spin in range(sys.q):
                if remaining <= 0:
                    break
                occ = min(3.0, remaining)
                shells.append(ShellSpec(ell=1, spin=spin, occupation=occ))
                remaining -= occ
            continue
        for spin in range(sys.q):
            if remaining <= 0:
                break
            occ = min(1.0, remaining)
            shells.append(ShellSpec(ell=0, spin=spin, occupation=occ))
            remaining -= occ
    return shells

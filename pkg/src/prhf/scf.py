"""Fock operator and self-consistent minimization over density matrices.

The minimization walks the convex set {0 <= gamma <= Id, Tr gamma = N}.
The default algorithm is optimal damping: each iteration diagonalizes
the current Fock operator, fills the lowest levels (aufbau), and takes
the exact minimizer of the quadratic energy restriction along the
segment towards that trial. Energy descent is monotone by construction;
a violation raises LineSearchFailure because it can only come from a
bug. A Roothaan path with level shifting is available for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .coulomb import (
    ChannelBlock,
    DensityMatrix,
    exchange_matrix,
    hartree_potential,
    reduced_density,
)
from .errors import EigFailure, LineSearchFailure, NotConverged
from .functional import EnergyBreakdown, line_coefficients, total_energy
from .model import AtomSystem, SolverOptions, default_shells, validate_system
from .radial import RadialGrid, build_grid, kinetic_operator, nonrelativistic_kinetic

log = logging.getLogger(__name__)

OCC_DROP = 1e-13          # discard mixed eigenvalues below this weight
DESCENT_SLACK = 1e-12     # per-step slack on monotone descent
PURITY_TOL = 1e-6


@dataclass
class FockOperator:
    """Per-channel dense Fock matrices T - Z*alpha/r + alpha*(R - K)."""

    system: AtomSystem
    grid: RadialGrid
    matrices: dict[tuple[int, int], np.ndarray]
    gamma: DensityMatrix
    kinetic: str = "pseudorelativistic"

    def channel(self, ell: int, spin: int) -> np.ndarray:
        return self.matrices[(ell, spin)]

    @property
    def ell_max(self) -> int:
        return max(ell for (ell, _s) in self.matrices)

    def channels(self):
        return sorted(self.matrices)


@dataclass
class SCFReport:
    converged: bool
    iterations: int
    algorithm: str
    energy: EnergyBreakdown
    energy_trace: list = field(default_factory=list)
    eigenvalues: list = field(default_factory=list)
    occupations: list = field(default_factory=list)
    commutator_residual: float = float("nan")
    max_orbital_residual: float = float("nan")
    anion_regime: bool = False
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "algorithm": self.algorithm,
            "energy": self.energy.as_dict(),
            "energy_trace": [e.as_dict() for e in self.energy_trace],
            "eigenvalues": [
                {
                    "ell": ell,
                    "spin": spin,
                    "index": idx,
                    "value": val,
                    "value_hartree": val_h,
                    "occupation": occ,
                }
                for (ell, spin, idx, val, val_h, occ) in self.eigenvalues
            ],
            "occupations": self.occupations,
            "commutator_residual": self.commutator_residual,
            "max_orbital_residual": self.max_orbital_residual,
            "anion_regime": self.anion_regime,
            "message": self.message,
        }


def _kinetic_matrix(grid: RadialGrid, ell: int, sys: AtomSystem, kinetic: str) -> np.ndarray:
    if kinetic == "nonrelativistic":
        return nonrelativistic_kinetic(grid, ell, sys.alpha).matrix
    return kinetic_operator(grid, ell, sys.alpha).matrix


def _spin_groups(gamma: DensityMatrix, q: int):
    """Group spins whose channel content is identical, to share work."""
    groups: list[list[int]] = []
    for spin in range(q):
        placed = False
        for grp in groups:
            ref = grp[0]
            same = True
            ells = {ell for (ell, s) in gamma.blocks if s in (spin, ref)}
            for ell in ells:
                ba = gamma.blocks.get((ell, ref))
                bb = gamma.blocks.get((ell, spin))
                if (ba is None) != (bb is None):
                    same = False
                    break
                if ba is not None and not (
                    np.array_equal(ba.occupations, bb.occupations)
                    and np.array_equal(ba.orbitals, bb.orbitals)
                ):
                    same = False
                    break
            if same:
                grp.append(spin)
                placed = True
                break
        if not placed:
            groups.append([spin])
    return groups


def fock_build(
    gamma: DensityMatrix,
    grid: RadialGrid,
    sys: AtomSystem,
    ell_max: int | None = None,
    kinetic: str = "pseudorelativistic",
) -> FockOperator:
    """Assemble per-channel Fock matrices for all ell <= ell_max, all spins."""
    if ell_max is None:
        ell_max = gamma.max_ell()
    r = grid.nodes
    w = reduced_density(gamma, grid)
    R = hartree_potential(w, grid)
    diag = -sys.z_alpha / r + sys.alpha * R
    matrices: dict[tuple[int, int], np.ndarray] = {}
    groups = _spin_groups(gamma, sys.q)
    for ell in range(ell_max + 1):
        T = _kinetic_matrix(grid, ell, sys, kinetic)
        for grp in groups:
            ref = grp[0]
            H = T + np.diag(diag)
            K = exchange_matrix(gamma, ell, ref, grid)
            H = H - sys.alpha * K
            H = 0.5 * (H + H.T)
            for spin in grp:
                matrices[(ell, spin)] = H
    return FockOperator(system=sys, grid=grid, matrices=matrices, gamma=gamma, kinetic=kinetic)


def _channel_spectra(fock: FockOperator, count: int):
    """Lowest `count` eigenpairs per channel, sharing work across equal matrices."""
    spectra: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    seen: list[tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]] = []
    n = fock.grid.n
    k = min(count, n)
    for key in fock.channels():
        H = fock.matrices[key]
        hit = None
        for mat, res in seen:
            if mat is H:
                hit = res
                break
        if hit is None:
            try:
                vals, vecs = scipy.linalg.eigh(H, subset_by_index=(0, k - 1))
            except scipy.linalg.LinAlgError as exc:  # pragma: no cover
                raise EigFailure(str(exc)) from exc
            hit = (vals, vecs / np.sqrt(fock.grid.h))
            seen.append((H, hit))
        spectra[key] = hit
    return spectra


def _fill_lowest(spectra, N: float, q: int) -> DensityMatrix:
    """Bathtub fill of the merged spectrum, capacity 2*ell+1 per level."""
    levels = []
    for (ell, spin), (vals, _vecs) in spectra.items():
        for idx, val in enumerate(vals):
            levels.append((float(val), ell, spin, idx))
    levels.sort(key=lambda t: (t[0], t[1], t[2], t[3]))
    remaining = float(N)
    chosen: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for val, ell, spin, idx in levels:
        if remaining <= 1e-14:
            break
        f = min(float(2 * ell + 1), remaining)
        chosen.setdefault((ell, spin), []).append((idx, f))
        remaining -= f
    if remaining > 1e-12:
        raise EigFailure("not enough levels computed to place all electrons")
    blocks = {}
    for key, picks in chosen.items():
        vals, vecs = spectra[key]
        idxs = [i for (i, _f) in picks]
        occs = np.array([f for (_i, f) in picks])
        blocks[key] = ChannelBlock(orbitals=vecs[:, idxs].copy(), occupations=occs)
    return DensityMatrix(blocks)


def _levels_needed(N: float) -> int:
    # worst case all electrons in one channel with unit capacity
    return int(np.ceil(N)) + 4


def aufbau_projection(fock: FockOperator, N: float, q: int) -> DensityMatrix:
    """Occupy the N lowest Fock levels across channels (ties: lower ell, spin)."""
    spectra = _channel_spectra(fock, _levels_needed(N))
    return _fill_lowest(spectra, N, q)


def _mix_blocks(
    ga: DensityMatrix, gb: DensityMatrix, t: float, grid: RadialGrid
) -> DensityMatrix:
    """Convex combination (1-t) ga + t gb, re-diagonalized per channel.

    Works in the joint column span, so the result is an exact
    eigendecomposition of the mixed operator (symmetric orthogonalization
    comes for free) at O(n m^2) cost.
    """
    out = {}
    sqh = np.sqrt(grid.h)
    for key in sorted(set(ga.blocks) | set(gb.blocks)):
        cols, weights = [], []
        for dm, fac in ((ga, 1.0 - t), (gb, t)):
            blk = dm.blocks.get(key)
            if blk is not None and fac > 0.0:
                cols.append(blk.orbitals)
                weights.append(fac * blk.occupations)
        if not cols:
            continue
        B = np.column_stack(cols)
        fv = np.concatenate(weights)
        Q, _ = np.linalg.qr(B * sqh)
        coef = Q.T @ (B * sqh)           # columns of B in the Q basis
        M = (coef * fv) @ coef.T
        lam, V = np.linalg.eigh(0.5 * (M + M.T))
        ell = key[0]
        cap = 2 * ell + 1
        keep = lam > OCC_DROP * cap
        if not np.any(keep):
            continue
        lam = np.clip(lam[keep], 0.0, cap)
        V = V[:, keep]
        order = np.argsort(-lam, kind="stable")
        newC = (Q @ V)[:, order] / sqh
        out[key] = ChannelBlock(orbitals=newC, occupations=lam[order])
    return DensityMatrix(out)


def commutator_residual(fock: FockOperator, gamma: DensityMatrix) -> float:
    """Frobenius norm of [h, gamma] summed over channels with multiplicity."""
    grid = fock.grid
    h = grid.h
    total = 0.0
    for (ell, spin), blk in gamma.blocks.items():
        H = fock.matrices.get((ell, spin))
        if H is None:
            continue
        C = blk.orbitals
        lam = blk.occupations / (2 * ell + 1)
        W = H @ C
        A = W * lam
        AtA = A.T @ A          # = lam W^T W lam
        CtA = (C.T @ A) * h
        # |h (A C^T - C A^T)|_F^2 with C^T C = I/h
        fro2 = h * h * 2.0 * (np.trace(AtA) / h - np.trace(CtA @ CtA) / (h * h))
        total += (2 * ell + 1) * max(fro2, 0.0)
    return float(np.sqrt(total))


def orbital_residuals(fock: FockOperator, gamma: DensityMatrix) -> list[float]:
    """L2 residuals |h P_a - <P_a,h P_a> P_a| for every occupied orbital."""
    grid = fock.grid
    out = []
    for (ell, spin), blk in gamma.blocks.items():
        H = fock.matrices[(ell, spin)]
        for a in range(blk.m):
            P = blk.orbitals[:, a]
            HP = H @ P
            eps = grid.h * (P @ HP)
            res = HP - eps * P
            out.append(float(np.sqrt(grid.h * (res @ res))))
    return out


def _tr_h_gamma(fock: FockOperator, gamma: DensityMatrix) -> float:
    grid = fock.grid
    acc = 0.0
    for (ell, spin), blk in gamma.blocks.items():
        H = fock.matrices[(ell, spin)]
        HP = H @ blk.orbitals
        vals = grid.h * np.einsum("ia,ia->a", blk.orbitals, HP)
        acc += float(np.sum(blk.occupations * vals))
    return acc


@dataclass
class StepInfo:
    t: float
    a: float
    b: float
    energy: EnergyBreakdown
    trial_energy: EnergyBreakdown


def oda_step(
    gamma: DensityMatrix,
    grid: RadialGrid,
    sys: AtomSystem,
    options: SolverOptions,
    fock: FockOperator | None = None,
    e_gamma: EnergyBreakdown | None = None,
) -> tuple[DensityMatrix, StepInfo]:
    """One optimal-damping step: aufbau trial, exact line search, mix."""
    if fock is None:
        fock = fock_build(gamma, grid, sys, ell_max=options.ell_max, kinetic=options.kinetic)
    if e_gamma is None:
        e_gamma = total_energy(gamma, grid, sys, kinetic=options.kinetic)
    trial = aufbau_projection(fock, sys.N, sys.q)
    e_trial = total_energy(trial, grid, sys, kinetic=options.kinetic)
    a, b = line_coefficients(
        gamma, trial, grid, sys,
        fock=fock, e_gamma=e_gamma, e_target=e_trial, kinetic=options.kinetic,
    )
    if b > 0.0:
        t = min(1.0, max(0.0, -a / (2.0 * b)))
    else:
        t = 1.0 if a + b < 0.0 else 0.0
    if t >= 1.0:
        nxt, e_next = trial, e_trial
    elif t <= 0.0:
        nxt, e_next = gamma, e_gamma
    else:
        nxt = _mix_blocks(gamma, trial, t, grid)
        e_next = total_energy(nxt, grid, sys, kinetic=options.kinetic)
    if e_next.total > e_gamma.total + DESCENT_SLACK * (1.0 + abs(e_gamma.total)):
        raise LineSearchFailure(
            f"energy rose from {e_gamma.total!r} to {e_next.total!r} at t={t}"
        )
    return nxt, StepInfo(t=t, a=a, b=b, energy=e_next, trial_energy=e_trial)


def _initial_density(sys: AtomSystem, grid: RadialGrid, options: SolverOptions, ell_max: int) -> DensityMatrix:
    guess = options.initial_guess
    if guess in ("h0", "screened"):
        Z_eff = sys.Z if guess == "h0" else max(sys.Z - 0.5 * max(sys.N - 1, 0), 0.5)
        bare = DensityMatrix({})
        sys_eff = AtomSystem(Z=Z_eff, N=sys.N, alpha=sys.alpha, q=sys.q)
        fock = fock_build(bare, grid, sys_eff, ell_max=ell_max, kinetic=options.kinetic)
        return aufbau_projection(fock, sys.N, sys.q)
    # hydrogenic radial seeds on the shells of the aufbau ordering
    shells = default_shells(sys, include_p=options.include_p_shells)
    return density_from_shells(shells, sys, grid)


def density_from_shells(shells, sys: AtomSystem, grid: RadialGrid) -> DensityMatrix:
    """Hydrogen-like radial functions per shell, orthonormalized per channel."""
    r = grid.nodes
    per_channel: dict[tuple[int, int], list[tuple[np.ndarray, float]]] = {}
    counter: dict[tuple[int, int], int] = {}
    for shell in shells:
        key = (shell.ell, shell.spin)
        k = counter.get(key, 0)
        counter[key] = k + 1
        npr = shell.ell + 1 + k          # principal quantum number
        zeff = max(sys.Z - 0.3 * k, 0.7)
        x = 2.0 * zeff * r / npr
        P = r ** (shell.ell + 1) * np.exp(-zeff * r / npr) * np.polynomial.laguerre.lagval(
            x, [0.0] * k + [1.0]
        )
        per_channel.setdefault(key, []).append((P, shell.occupation))
    blocks = {}
    for key, entries in per_channel.items():
        B = np.column_stack([p for (p, _f) in entries])
        occ = np.array([f for (_p, f) in entries])
        # Gram-Schmidt in the grid inner product, stable enough for seeds
        Q, _ = np.linalg.qr(B * np.sqrt(grid.h))
        blocks[key] = ChannelBlock(orbitals=Q / np.sqrt(grid.h), occupations=occ)
    return DensityMatrix(blocks)


def _final_eigen_table(fock: FockOperator, gamma: DensityMatrix, count: int):
    """Merged eigenvalue table with occupations matched by subspace overlap."""
    spectra = _channel_spectra(fock, count)
    grid = fock.grid
    table = []
    for (ell, spin), (vals, vecs) in sorted(spectra.items()):
        blk = gamma.blocks.get((ell, spin))
        for idx, val in enumerate(vals):
            occ = 0.0
            if blk is not None and blk.m:
                coef = grid.h * blk.orbitals.T @ vecs[:, idx]
                occ = float(coef @ (blk.occupations * coef))
            table.append(
                (ell, spin, idx, float(val), float(val) / fock.system.alpha,
                 occ)
            )
    table.sort(key=lambda t: (t[3], t[0], t[1]))
    return table


def solve_scf(sys: AtomSystem, options: SolverOptions) -> tuple[SCFReport, DensityMatrix]:
    """Minimize the functional; returns the report and the final density.

    Raises NotConverged (with the best iterate attached) when the
    tolerances are not met within max_iter iterations.
    """
    sys = validate_system(sys)
    options = options.validated()
    grid = build_grid(options.n, options.r_max)
    shells = default_shells(sys, include_p=options.include_p_shells)
    ell_max = options.ell_max
    if ell_max is None:
        ell_max = max(s.ell for s in shells)
    opts = options.with_(ell_max=ell_max)

    gamma = _initial_density(sys, grid, opts, ell_max)
    energy = total_energy(gamma, grid, sys, kinetic=opts.kinetic)
    trace = [energy]
    algorithm = opts.algorithm
    # level shift is configured on the reported (Hartree-like) scale;
    # the Fock spectrum lives on the alpha-scaled operator scale
    shift_hartree = opts.level_shift if opts.level_shift is not None else 0.5
    shift = shift_hartree * sys.alpha

    converged = False
    residual = float("inf")
    iterations = 0
    for it in range(1, opts.max_iter + 1):
        iterations = it
        fock = fock_build(gamma, grid, sys, ell_max=ell_max, kinetic=opts.kinetic)
        residual = commutator_residual(fock, gamma)
        if algorithm == "optimal-damping":
            gamma_next, step = oda_step(gamma, grid, sys, opts, fock=fock, e_gamma=energy)
            e_next = step.energy
            log.debug(
                "iter %3d  E=%.12f  dE=%.3e  t=%.3f  resid=%.3e",
                it, e_next.total, energy.total - e_next.total, step.t, residual,
            )
        else:
            gamma_next, e_next = _roothaan_step(
                gamma, fock, grid, sys, opts, shift
            )
            if e_next.total > energy.total + DESCENT_SLACK * (1 + abs(energy.total)):
                shift *= 0.5  # oscillation guard: damp the virtual shift
            log.debug(
                "iter %3d  E=%.12f  dE=%.3e  shift=%.3e  resid=%.3e",
                it, e_next.total, energy.total - e_next.total, shift, residual,
            )
        dE = energy.total - e_next.total
        gamma, energy = gamma_next, e_next
        trace.append(energy)
        if abs(dE) < opts.tol_energy and residual < opts.tol_commutator:
            converged = True
            break

    # purity finish: adopt the aufbau projection when it does not raise
    # energy; also clears stray near-zero occupations left by the last mix
    if gamma.max_impurity() > 0.0:
        fock = fock_build(gamma, grid, sys, ell_max=ell_max, kinetic=opts.kinetic)
        pure = aufbau_projection(fock, sys.N, sys.q)
        e_pure = total_energy(pure, grid, sys, kinetic=opts.kinetic)
        if e_pure.total <= energy.total + DESCENT_SLACK * (1 + abs(energy.total)):
            gamma, energy = pure, e_pure
            trace.append(energy)

    final_fock = fock_build(gamma, grid, sys, ell_max=ell_max, kinetic=opts.kinetic)
    residual = commutator_residual(final_fock, gamma)
    orb_res = orbital_residuals(final_fock, gamma)
    table = _final_eigen_table(final_fock, gamma, _levels_needed(sys.N))
    report = SCFReport(
        converged=converged,
        iterations=iterations,
        algorithm=algorithm,
        energy=energy,
        energy_trace=trace,
        eigenvalues=table,
        occupations=[
            {"ell": ell, "spin": spin, "index": idx, "f": f, "lambda": lam}
            for (ell, spin, idx, f, lam) in gamma.occupation_list()
        ],
        commutator_residual=residual,
        max_orbital_residual=max(orb_res) if orb_res else 0.0,
        anion_regime=sys.N >= sys.Z + 1,
        message="" if converged else "iteration cap reached",
    )
    if not converged:
        raise NotConverged(
            f"no convergence within {opts.max_iter} iterations "
            f"(|dE| tol {opts.tol_energy}, commutator tol {opts.tol_commutator})",
            report=report,
            density=gamma,
        )
    return report, gamma


def _roothaan_step(gamma, fock, grid, sys, options, shift):
    """Aufbau on the level-shifted Fock operator (shift on the virtual space)."""
    shifted = {}
    for (ell, spin), H in fock.matrices.items():
        blk = gamma.blocks.get((ell, spin))
        Hs = H + shift * np.eye(grid.n)
        if blk is not None and blk.m:
            C = blk.orbitals
            lam = blk.occupations / (2 * ell + 1)
            Hs = Hs - shift * grid.h * (C * lam) @ C.T
        shifted[(ell, spin)] = 0.5 * (Hs + Hs.T)
    shifted_fock = FockOperator(
        system=fock.system, grid=grid, matrices=shifted, gamma=gamma, kinetic=fock.kinetic
    )
    nxt = aufbau_projection(shifted_fock, sys.N, sys.q)
    e_next = total_energy(nxt, grid, sys, kinetic=options.kinetic)
    return nxt, e_next

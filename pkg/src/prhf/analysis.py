"""Post-hoc certification of converged solutions.

Each check is a hard assertion with an explicit tolerance; reports
serialize measured values next to their thresholds so a failed clause
is auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coulomb import DensityMatrix
from .errors import BoundViolated, CertificateFailure, WindowTooNoisy
from .greens import nu_of_energy
from .model import AtomSystem, SolverOptions, validate_system
from .radial import RadialGrid, _cached_laplacian, kinetic_operator
from .scf import FockOperator, _channel_spectra, orbital_residuals, solve_scf

NOISE_FLOOR_REL = 1e-14
MIN_WINDOW_POINTS = 20
EFOLD_SPAN = 6.5


@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential rate of one orbital tail."""

    orbital_id: str
    window: tuple[float, float]
    beta_hat: float
    residual: float
    nu_predicted: float
    efolds: float

    def as_dict(self) -> dict:
        return {
            "orbital_id": self.orbital_id,
            "window": list(self.window),
            "beta_hat": self.beta_hat,
            "residual": self.residual,
            "nu_predicted": self.nu_predicted,
            "efolds": self.efolds,
        }


def _auto_window(P: np.ndarray, grid: RadialGrid, nu_est: float) -> tuple[float, float]:
    """Rightmost clean window: away from the Dirichlet wall, above noise."""
    absP = np.abs(P)
    floor = NOISE_FLOOR_REL * float(absP.max())
    usable = absP > 1e3 * floor
    r_hi_wall = 0.7 * grid.r_max
    idx = np.nonzero(usable & (grid.nodes <= r_hi_wall))[0]
    if idx.size == 0:
        raise WindowTooNoisy("no usable tail above the noise floor")
    r2 = grid.nodes[idx[-1]]
    r1 = r2 - EFOLD_SPAN / nu_est
    peak = grid.nodes[int(np.argmax(absP))]
    r1 = max(r1, 1.3 * peak + 2.0 * grid.h)
    return (r1, r2)


def decay_fit(
    orbital: np.ndarray,
    eps: float,
    grid: RadialGrid,
    alpha: float,
    window: tuple[float, float] | None = None,
    orbital_id: str = "",
) -> DecayFit:
    """Fit log|P(r)/r| ~ -beta r on a tail window; compare against nu(eps).

    Raises WindowTooNoisy when the tail magnitude reaches the quadrature
    noise floor inside the window (or the window collapses).
    """
    P = np.asarray(orbital, dtype=float)
    nu_pred = nu_of_energy(eps, alpha)
    if window is None:
        window = _auto_window(P, grid, nu_pred)
    r1, r2 = window
    if not (0.0 < r1 < r2 <= 0.75 * grid.r_max + 1e-12):
        raise WindowTooNoisy(
            f"window [{r1:.3g}, {r2:.3g}] must sit inside (0, 0.75*r_max]"
        )
    sel = (grid.nodes >= r1) & (grid.nodes <= r2)
    if np.count_nonzero(sel) < MIN_WINDOW_POINTS:
        raise WindowTooNoisy("fewer than 20 nodes in the fit window")
    r = grid.nodes[sel]
    vals = np.abs(P[sel])
    floor = NOISE_FLOOR_REL * float(np.abs(P).max())
    if np.any(vals <= floor):
        raise WindowTooNoisy("tail magnitude reaches the noise floor inside the window")
    y = np.log(vals / r)
    slope, intercept = np.polyfit(r, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * r + intercept)) ** 2)))
    efolds = float(y[0] - y[-1])
    return DecayFit(
        orbital_id=orbital_id,
        window=(float(r1), float(r2)),
        beta_hat=float(-slope),
        residual=resid,
        nu_predicted=nu_pred,
        efolds=efolds,
    )


@dataclass
class CertificateReport:
    clauses: dict
    passed: bool

    def as_dict(self) -> dict:
        return {"passed": self.passed, "clauses": self.clauses}


def minimizer_certificate(
    gamma: DensityMatrix,
    fock: FockOperator,
    sys: AtomSystem,
    strict: bool = False,
) -> CertificateReport:
    """Assert the structural properties of a converged minimizer.

    (a) occupations within 1e-6 of {0,1}; (b) trace equals N; (c) the
    occupied levels are the N lowest across channels (tie tolerance
    1e-8 alpha^-1); (d) occupied eigenvalues in (-alpha^-1, 0); (e)
    per-orbital eigen-residual below 1e-7 alpha^-1.
    """
    ainv = sys.alpha_inv
    grid = fock.grid
    clauses = {}

    impurity = gamma.max_impurity()
    clauses["idempotent"] = {
        "passed": impurity <= 1e-6, "measured": impurity, "tolerance": 1e-6,
    }

    tr_err = abs(gamma.trace() - sys.N)
    clauses["trace"] = {
        "passed": tr_err <= 1e-9, "measured": tr_err, "tolerance": 1e-9,
    }

    # occupied Rayleigh values and the lowest levels orthogonal to them
    occ_eps = []
    unocc_eps = []
    spectra = _channel_spectra(fock, int(np.ceil(sys.N)) + 4)
    for (ell, spin), (vals, vecs) in spectra.items():
        blk = gamma.blocks.get((ell, spin))
        cap_used = 0.0
        if blk is not None and blk.m:
            H = fock.matrices[(ell, spin)]
            for a in range(blk.m):
                Pa = blk.orbitals[:, a]
                occ_eps.append(float(grid.h * (Pa @ (H @ Pa))))
            overlaps = grid.h * blk.orbitals.T @ vecs   # (m, k)
            proj = np.sum(overlaps**2, axis=0)
        else:
            proj = np.zeros(vals.size)
        for i, val in enumerate(vals):
            if proj[i] < 0.5:
                unocc_eps.append(float(val))
    worst_gap = -np.inf
    if occ_eps and unocc_eps:
        worst_gap = max(occ_eps) - min(unocc_eps)
    clauses["aufbau"] = {
        "passed": worst_gap <= 1e-8 * ainv,
        "measured": worst_gap,
        "tolerance": 1e-8 * ainv,
        "detail": "max occupied eigenvalue minus min unoccupied",
    }

    eps_arr = np.array(occ_eps) if occ_eps else np.array([np.nan])
    neg_ok = bool(np.all(eps_arr < 0.0) and np.all(eps_arr > -ainv))
    clauses["negativity"] = {
        "passed": neg_ok,
        "measured": [float(eps_arr.max()), float(eps_arr.min())],
        "tolerance": [0.0, -ainv],
    }

    res = orbital_residuals(fock, gamma)
    worst_res = max(res) if res else 0.0
    clauses["hf_equations"] = {
        "passed": worst_res <= 1e-7 * ainv,
        "measured": worst_res,
        "tolerance": 1e-7 * ainv,
    }

    passed = all(c["passed"] for c in clauses.values())
    report = CertificateReport(clauses=clauses, passed=passed)
    if strict and not passed:
        failed = [k for k, c in clauses.items() if not c["passed"]]
        raise CertificateFailure(f"certificate clauses failed: {failed}", clauses=clauses)
    return report


def kato_probe(u: np.ndarray, grid: RadialGrid, alpha: float) -> tuple[float, float]:
    """(int u^2/r dr, (pi/2) <u, |p| u>) for an s-channel function u.

    The coupling inequality lhs <= rhs holds up to discretization slack
    (5e-3 is the acceptance tolerance).
    """
    u = np.asarray(u, dtype=float)
    lap = _cached_laplacian(grid, 0)
    vals, vecs = lap.eigensystem()
    coef = vecs.T @ u
    rhs = 0.5 * np.pi * grid.h * float(coef @ (np.sqrt(vals) * coef))
    lhs = grid.h * float(np.sum(u * u / grid.nodes))
    return lhs, rhs


def random_smooth_battery(grid: RadialGrid, count: int, seed: int, modes: int = 30):
    """Deterministic battery of normalized smooth s-channel probe functions."""
    rng = np.random.default_rng(seed)
    basis = np.sin(np.outer(grid.nodes, np.arange(1, modes + 1)) * np.pi / grid.r_max)
    out = []
    for _ in range(count):
        c = rng.standard_normal(modes) / np.arange(1, modes + 1)
        u = basis @ c
        u /= np.sqrt(grid.h * (u @ u))
        out.append(u)
    return out


def herbst_bound_check(
    sys: AtomSystem, grid: RadialGrid, ell_max: int = 0, tol: float | None = None
) -> dict:
    """Lowest discretized eigenvalue of h0 against the analytic lower bound.

    Bound: alpha^-1 (sqrt(1 - (pi Z alpha / 2)^2) - 1). Violation raises
    BoundViolated (it would signal an inconsistent discretization).
    """
    import scipy.linalg

    ainv = sys.alpha_inv
    if tol is None:
        tol = 1e-8 * ainv
    bound = ainv * (np.sqrt(max(1.0 - (np.pi * sys.z_alpha / 2.0) ** 2, 0.0)) - 1.0)
    lowest = np.inf
    for ell in range(ell_max + 1):
        T = kinetic_operator(grid, ell, sys.alpha).matrix
        H = T - np.diag(sys.z_alpha / grid.nodes)
        val = scipy.linalg.eigh(H, subset_by_index=(0, 0), eigvals_only=True)[0]
        lowest = min(lowest, float(val))
    ok = lowest >= bound - tol
    report = {
        "Z": sys.Z, "alpha": sys.alpha, "bound": bound,
        "min_eigenvalue": lowest, "margin": lowest - bound, "passed": bool(ok),
    }
    if not ok:
        raise BoundViolated(
            f"lowest eigenvalue {lowest} undercuts the bound {bound} by more than {tol}"
        )
    return report


def binding_monotonicity(
    Z: float, alpha: float, N_max: int, options: SolverOptions, q: int = 2
) -> tuple[list[dict], bool]:
    """E(N) table for N = 1..N_max with strict-decrease checks.

    Each step must gain at least half the (Hartree-scale) frontier
    eigenvalue of the larger-N run. Propagates NotConverged.
    """
    rows = []
    prev_total = None
    all_ok = True
    for N in range(1, N_max + 1):
        sys = validate_system(AtomSystem(Z=Z, N=N, alpha=alpha, q=q))
        report, gamma = solve_scf(sys, options)
        occ_eps = [e for (ell, s, i, e, eh, occ) in report.eigenvalues if occ > 0.5]
        eps_homo = max(occ_eps) if occ_eps else float("nan")
        row = {
            "N": N,
            "total": report.energy.total,
            "eps_homo_hartree": eps_homo / alpha,
            "gap_prev": None,
            "gap_required": None,
            "ok": True,
        }
        if prev_total is not None:
            gap = prev_total - report.energy.total
            required = 0.5 * abs(eps_homo / alpha)
            row["gap_prev"] = gap
            row["gap_required"] = required
            row["ok"] = bool(gap >= required)
            all_ok = all_ok and row["ok"]
        rows.append(row)
        prev_total = report.energy.total
    return rows, all_ok

"""Batch front door: solve / verify / greens / sweep pipelines.

Configuration is a flat key=value text file with # comments. Results are
written as machine-readable files only (report.json, orbitals.csv,
energy_trace.csv, verify.json, greens.csv/json, sweep.csv/json); logs go
to stderr and are never meant to be parsed.

Exit codes: 0 success, 1 configuration error, 2 not converged,
3 certificate or verification failure.

CSV numbers use 17-significant-digit scientific notation so identical
runs produce byte-identical files. BLAS thread counts are taken from
the usual environment variables (OMP_NUM_THREADS and friends); nothing
else is read from the environment.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys as _sys
from pathlib import Path

import numpy as np
from scipy.special import kv as _indep_kv

from . import analysis, greens
from .coulomb import ChannelBlock, DensityMatrix
from .errors import (
    BoundViolated,
    ConfigError,
    NotConverged,
    SolverError,
    WindowTooNoisy,
)
from .model import AtomSystem, SolverOptions, validate_system
from .radial import build_grid, kinetic_operator
from .scf import fock_build, solve_scf

log = logging.getLogger("prhf")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_CERTIFICATE = 3

_DECAY_RATE_TOL = 0.05
_KATO_TOL = 5e-3

# key -> (parser, default); required keys carry the REQUIRED sentinel
_REQUIRED = object()


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_auto_float(text: str):
    return None if text.strip().lower() == "auto" else float(text)


def _parse_auto_int(text: str):
    return None if text.strip().lower() == "auto" else int(text)


_SCHEMA = {
    "Z": (float, _REQUIRED),
    "N": (int, _REQUIRED),
    "alpha": (float, 1.0 / 137.036),
    "q": (int, 2),
    "n": (int, 1200),
    "r_max": (float, 30.0),
    "max_iter": (int, 200),
    "tol_energy": (float, 1e-10),
    "tol_commutator": (float, 1e-6),
    "algorithm": (str, "optimal-damping"),
    "level_shift": (_parse_auto_float, None),
    "initial_guess": (str, "h0"),
    "ell_max": (_parse_auto_int, None),
    "kinetic": (str, "pseudorelativistic"),
    "include_p_shells": (_parse_bool, False),
    "output_dir": (str, _REQUIRED),
    "verify_minimizer": (_parse_bool, True),
    "verify_decay": (_parse_bool, True),
    "verify_kato": (_parse_bool, True),
    "verify_herbst": (_parse_bool, True),
    "verify_greens": (_parse_bool, True),
    "verify_binding": (_parse_bool, True),
    "kato_samples": (int, 100),
    "kato_seed": (int, 20240817),
    "greens_energy": (_parse_auto_float, None),
    "binding_n_max": (_parse_auto_int, None),
    "sweep_n_max": (_parse_auto_int, None),
    "decay_window_lo": (_parse_auto_float, None),
    "decay_window_hi": (_parse_auto_float, None),
}


def parse_config(path: str | Path) -> dict:
    """Read a flat key=value config; unknown keys are rejected by name."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    unknown: list[str] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            unknown.append(key)
            continue
        parser, _default = _SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    for key, (_parser, default) in _SCHEMA.items():
        if key in values:
            continue
        if default is _REQUIRED:
            raise ConfigError(f"missing required configuration key: {key}")
        values[key] = default
    return values


def _system_from_config(cfg: dict) -> AtomSystem:
    return validate_system(
        AtomSystem(Z=cfg["Z"], N=cfg["N"], alpha=cfg["alpha"], q=cfg["q"])
    )


def _options_from_config(cfg: dict) -> SolverOptions:
    return SolverOptions(
        n=cfg["n"],
        r_max=cfg["r_max"],
        max_iter=cfg["max_iter"],
        tol_energy=cfg["tol_energy"],
        tol_commutator=cfg["tol_commutator"],
        algorithm=cfg["algorithm"],
        level_shift=cfg["level_shift"],
        initial_guess=cfg["initial_guess"],
        ell_max=cfg["ell_max"],
        kinetic=cfg["kinetic"],
        include_p_shells=cfg["include_p_shells"],
    ).validated()


def _fmt(x: float) -> str:
    return f"{x:.16e}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _orbital_label(ell: int, spin: int, idx: int) -> str:
    return f"P_l{ell}_s{spin}_{idx}"


def _write_solution(outdir: Path, cfg: dict, report, gamma, grid, certificates) -> None:
    payload = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": {k: cfg[k] for k in sorted(cfg)},
        "grid": {"n": grid.n, "r_max": grid.r_max, "h": grid.h},
        "report": report.as_dict(),
        "certificates": certificates,
    }
    with open(outdir / "report.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    labels = ["r"]
    columns = [grid.nodes]
    for (ell, spin), blk in gamma.blocks.items():
        for a in range(blk.m):
            labels.append(_orbital_label(ell, spin, a))
            columns.append(blk.orbitals[:, a])
    rows = ([_fmt(col[i]) for col in columns] for i in range(grid.n))
    _write_csv(outdir / "orbitals.csv", labels, rows)

    header = ["iteration", "total", "kinetic", "nuclear", "direct", "exchange"]
    rows = (
        [str(i), _fmt(e.total), _fmt(e.kinetic), _fmt(e.nuclear), _fmt(e.direct), _fmt(e.exchange)]
        for i, e in enumerate(report.energy_trace)
    )
    _write_csv(outdir / "energy_trace.csv", header, rows)


def _load_solution(outdir: Path, cfg: dict):
    """Rebuild (report_dict, gamma, grid) from a completed solve directory."""
    report_path = outdir / "report.json"
    orbitals_path = outdir / "orbitals.csv"
    if not (report_path.is_file() and orbitals_path.is_file()):
        return None
    payload = json.loads(report_path.read_text())
    grid = build_grid(payload["grid"]["n"], payload["grid"]["r_max"])
    with open(orbitals_path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(orbitals_path, delimiter=",", skiprows=1)
    cols = {name: data[:, i] for i, name in enumerate(header)}
    blocks: dict = {}
    for occ in payload["report"]["occupations"]:
        key = (occ["ell"], occ["spin"])
        label = _orbital_label(occ["ell"], occ["spin"], occ["index"])
        blocks.setdefault(key, []).append((occ["index"], cols[label], occ["f"]))
    dm_blocks = {}
    for key, entries in blocks.items():
        entries.sort()
        dm_blocks[key] = ChannelBlock(
            orbitals=np.column_stack([v for (_i, v, _f) in entries]),
            occupations=np.array([f for (_i, _v, f) in entries]),
        )
    return payload, DensityMatrix(dm_blocks), grid


def _solve_pipeline(cfg: dict):
    """Shared by solve and verify: returns (exit_code, report, gamma, grid)."""
    sys_ = _system_from_config(cfg)
    options = _options_from_config(cfg)
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    grid = build_grid(options.n, options.r_max)
    try:
        report, gamma = solve_scf(sys_, options)
    except NotConverged as exc:
        log.error("SCF did not converge: %s", exc)
        if exc.report is not None and exc.density is not None:
            _write_solution(outdir, cfg, exc.report, exc.density, grid,
                            {"passed": False, "clauses": {}, "skipped": "not converged"})
        return EXIT_NOT_CONVERGED, None, None, grid
    fock = fock_build(gamma, grid, sys_, ell_max=max(gamma.max_ell(), 0), kinetic=options.kinetic)
    cert = analysis.minimizer_certificate(gamma, fock, sys_)
    _write_solution(outdir, cfg, report, gamma, grid, cert.as_dict())
    log.info(
        "converged=%s iterations=%d total=%.12f certificate=%s",
        report.converged, report.iterations, report.energy.total, cert.passed,
    )
    code = EXIT_OK if cert.passed else EXIT_CERTIFICATE
    return code, report, gamma, grid


def run_solve(config_path: str | Path) -> int:
    try:
        cfg = parse_config(config_path)
        code, _report, _gamma, _grid = _solve_pipeline(cfg)
        return code
    except NotConverged:
        return EXIT_NOT_CONVERGED
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


# --- verification suites ----------------------------------------------------


def _suite_minimizer(gamma, grid, sys_, cfg) -> dict:
    fock = fock_build(gamma, grid, sys_, ell_max=gamma.max_ell())
    cert = analysis.minimizer_certificate(gamma, fock, sys_)
    out = cert.as_dict()
    out["status"] = "passed" if cert.passed else "failed"
    return out


def _suite_decay(gamma, grid, sys_, report_dict, cfg) -> dict:
    ainv = sys_.alpha_inv
    occupied = []
    for occ in report_dict["report"]["occupations"]:
        key = (occ["ell"], occ["spin"])
        occupied.append((key, occ["index"], occ["f"]))
    fock = fock_build(gamma, grid, sys_, ell_max=gamma.max_ell())
    fits = []
    eps_list = []
    window = None
    if cfg.get("decay_window_lo") is not None and cfg.get("decay_window_hi") is not None:
        window = (cfg["decay_window_lo"], cfg["decay_window_hi"])
    try:
        for (ell, spin), idx, f in occupied:
            blk = gamma.blocks[(ell, spin)]
            P = blk.orbitals[:, idx]
            H = fock.matrices[(ell, spin)]
            eps = grid.h * float(P @ (H @ P))
            fit = analysis.decay_fit(
                P, eps, grid, sys_.alpha, window=window,
                orbital_id=_orbital_label(ell, spin, idx),
            )
            fits.append(fit)
            eps_list.append(eps)
    except WindowTooNoisy as exc:
        return {"status": "inconclusive", "reason": str(exc), "fits": [f.as_dict() for f in fits]}
    eps_arr = np.array(eps_list)
    homo_pos = int(np.argmax(eps_arr))
    nu_homo = analysis.nu_of_energy(float(eps_arr[homo_pos]), sys_.alpha)
    homo_ok = abs(fits[homo_pos].beta_hat - nu_homo) <= _DECAY_RATE_TOL * nu_homo
    lower_ok = all(f.beta_hat >= 0.95 * nu_homo for f in fits)
    # fitted rates must order like the predicted ones, for pairs whose
    # predictions are separated beyond the fit resolution
    ordering_ok = True
    for i in range(len(fits)):
        for j in range(len(fits)):
            if fits[i].nu_predicted < fits[j].nu_predicted * (1.0 - 0.02):
                ordering_ok = ordering_ok and fits[i].beta_hat < fits[j].beta_hat
    passed = homo_ok and lower_ok and ordering_ok
    return {
        "status": "passed" if passed else "failed",
        "homo_rate_ok": bool(homo_ok),
        "all_above_095_nu_homo": bool(lower_ok),
        "ordering_ok": ordering_ok,
        "nu_homo": nu_homo,
        "tolerance": _DECAY_RATE_TOL,
        "fits": [f.as_dict() for f in fits],
    }


def _suite_kato(grid, sys_, cfg) -> dict:
    battery = analysis.random_smooth_battery(grid, cfg["kato_samples"], cfg["kato_seed"])
    worst = -np.inf
    for u in battery:
        lhs, rhs = analysis.kato_probe(u, grid, sys_.alpha)
        worst = max(worst, lhs / rhs - 1.0)
    passed = worst <= _KATO_TOL
    return {
        "status": "passed" if passed else "failed",
        "samples": cfg["kato_samples"],
        "worst_excess": float(worst),
        "tolerance": _KATO_TOL,
    }


def _suite_herbst(grid, sys_, cfg) -> dict:
    try:
        rep = analysis.herbst_bound_check(sys_, grid)
    except BoundViolated as exc:
        return {"status": "failed", "reason": str(exc)}
    rep["status"] = "passed"
    return rep


def _greens_battery(grid):
    widths = [(10.0, 1.5), (14.0, 2.0), (8.0, 1.5), (12.0, 2.5), (16.0, 1.8)]
    return [np.exp(-(((grid.nodes - c) / s) ** 2)) for (c, s) in widths]


def _suite_greens(cfg, sys_, eps_homo: float | None) -> dict:
    """Standalone kernel suite on a fixed n=400 grid; no SCF solution needed."""
    alpha = sys_.alpha
    ainv = sys_.alpha_inv
    E = cfg.get("greens_energy")
    if E is None:
        E = eps_homo if eps_homo is not None else greens.energy_of_nu(1.0, alpha)
    nu = greens.nu_of_energy(E, alpha)
    kernel = greens.greens_kernel(E, alpha)
    checks = {}

    positive = bool(np.all(kernel.values > 0.0))
    checks["positivity"] = {"passed": positive, "min_value": float(kernel.values.min())}

    env = kernel.envelope()
    margin = float(np.min(env - kernel.values))
    checks["est1_envelope"] = {
        "passed": bool(np.all(kernel.values <= env)),
        "min_margin": margin,
        "constant": kernel.c_bound,
    }

    ts = np.geomspace(1e-3, 1e3, 61)
    k1_vals = greens.bessel_k(1, ts)
    checks["k1_bound"] = {
        "passed": bool(np.all(k1_vals <= 1.0 / ts)),
        "worst_ratio": float(np.max(k1_vals * ts)),
    }

    ts2 = np.geomspace(1e-3, 600.0, 40)
    rec = greens.bessel_k(2, ts2)
    indep = _indep_kv(2, ts2)
    rec_resid = float(np.max(np.abs(rec - indep) / np.abs(indep)))
    checks["k2_recurrence"] = {"passed": rec_resid <= 1e-10, "residual": rec_resid}

    slope = greens.tail_slope(kernel)
    checks["tail_slope"] = {
        "passed": bool(slope >= -nu - 1e-3),
        "slope": slope,
        "nu": nu,
    }

    moment, tail_frac = greens.exp_moment(kernel, 0.9 * nu)
    checks["exp_moment"] = {
        "passed": bool(np.isfinite(moment) and tail_frac < 0.05),
        "value": moment,
        "tail_fraction": tail_frac,
    }

    # resolvent round trip against the dense discrete operator at n=400
    rgrid = build_grid(400, 40.0)
    T = kinetic_operator(rgrid, 0, alpha).matrix
    A = T - E * np.eye(rgrid.n)
    worst_rt, worst_dense = 0.0, 0.0
    for f in _greens_battery(rgrid):
        v = greens.resolvent_apply(f, E, alpha, rgrid)
        rt = float(np.linalg.norm(A @ v - f) / np.linalg.norm(f))
        dense = np.linalg.solve(A, f)
        dv = float(np.linalg.norm(v - dense) / np.linalg.norm(dense))
        worst_rt, worst_dense = max(worst_rt, rt), max(worst_dense, dv)
    checks["resolvent_roundtrip"] = {"passed": worst_rt <= 1e-3, "worst": worst_rt}
    checks["resolvent_vs_dense"] = {"passed": worst_dense <= 1e-3, "worst": worst_dense}

    passed = all(c["passed"] for c in checks.values())
    return {
        "status": "passed" if passed else "failed",
        "E": E, "nu": nu,
        "checks": checks,
        "kernel_mesh_size": int(kernel.mesh.size),
    }


def _suite_binding(cfg, sys_) -> dict:
    n_max = cfg.get("binding_n_max")
    if n_max is None:
        n_max = sys_.N
    n_max = min(n_max, int(np.floor(sys_.Z)))   # stay inside N < Z + 1
    if n_max < 1:
        return {"status": "passed", "rows": [], "note": "no bound runs in range"}
    options = _options_from_config(cfg)
    rows, ok = analysis.binding_monotonicity(sys_.Z, sys_.alpha, n_max, options, q=sys_.q)
    return {"status": "passed" if ok else "failed", "rows": rows}


def run_verify(config_path: str | Path) -> int:
    try:
        cfg = parse_config(config_path)
        sys_ = _system_from_config(cfg)
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)

    needs_solution = cfg["verify_minimizer"] or cfg["verify_decay"]
    loaded = _load_solution(outdir, cfg) if needs_solution else None
    if needs_solution and loaded is None:
        log.info("no completed solve in %s; solving first", outdir)
        code, _report, _gamma, _grid = _solve_pipeline(cfg)
        if code == EXIT_NOT_CONVERGED:
            return code
        loaded = _load_solution(outdir, cfg)
        if loaded is None:
            log.error("solve completed but outputs are unreadable")
            return EXIT_CONFIG

    suites: dict = {}
    eps_homo = None
    if loaded is not None:
        payload, gamma, grid = loaded
        occ_eps = [
            e["value"] for e in payload["report"]["eigenvalues"] if e["occupation"] > 0.5
        ]
        eps_homo = max(occ_eps) if occ_eps else None
        if cfg["verify_minimizer"]:
            suites["minimizer"] = _suite_minimizer(gamma, grid, sys_, cfg)
        if cfg["verify_decay"]:
            suites["decay"] = _suite_decay(gamma, grid, sys_, payload, cfg)
    else:
        grid = build_grid(cfg["n"], cfg["r_max"])

    if cfg["verify_kato"]:
        suites["kato"] = _suite_kato(grid, sys_, cfg)
    if cfg["verify_herbst"]:
        suites["herbst"] = _suite_herbst(grid, sys_, cfg)
    if cfg["verify_greens"]:
        suites["greens"] = _suite_greens(cfg, sys_, eps_homo)
    if cfg["verify_binding"]:
        try:
            suites["binding"] = _suite_binding(cfg, sys_)
        except NotConverged as exc:
            log.error("binding sweep did not converge: %s", exc)
            return EXIT_NOT_CONVERGED

    all_passed = all(s.get("status") == "passed" for s in suites.values())
    payload = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "system": {"Z": sys_.Z, "N": sys_.N, "alpha": sys_.alpha, "q": sys_.q},
        "suites": suites,
        "all_passed": all_passed,
    }
    with open(outdir / "verify.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, suite in suites.items():
        log.info("suite %-10s %s", name, suite.get("status"))
    return EXIT_OK if all_passed else EXIT_CERTIFICATE


def run_greens(config_path: str | Path) -> int:
    try:
        cfg = parse_config(config_path)
        sys_ = _system_from_config(cfg)
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    suite = _suite_greens(cfg, sys_, None)

    E = suite["E"]
    kernel = greens.greens_kernel(E, sys_.alpha)
    header = ["u", "G", "term1", "term2", "term3"]
    rows = (
        [_fmt(kernel.mesh[i]), _fmt(kernel.values[i]), _fmt(kernel.term1[i]),
         _fmt(kernel.term2[i]), _fmt(kernel.term3[i])]
        for i in range(kernel.mesh.size)
    )
    _write_csv(outdir / "greens.csv", header, rows)
    payload = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "suite": suite,
    }
    with open(outdir / "greens.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("greens suite %s", suite["status"])
    return EXIT_OK if suite["status"] == "passed" else EXIT_CERTIFICATE


def run_sweep(config_path: str | Path) -> int:
    try:
        cfg = parse_config(config_path)
        sys_ = _system_from_config(cfg)
        options = _options_from_config(cfg)
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    n_max = cfg.get("sweep_n_max") or sys_.N
    try:
        rows, ok = analysis.binding_monotonicity(sys_.Z, sys_.alpha, n_max, options, q=sys_.q)
    except NotConverged as exc:
        log.error("sweep did not converge: %s", exc)
        return EXIT_NOT_CONVERGED
    header = ["N", "total", "eps_homo_hartree", "gap_prev", "gap_required"]
    csv_rows = []
    for row in rows:
        csv_rows.append([
            str(row["N"]), _fmt(row["total"]), _fmt(row["eps_homo_hartree"]),
            _fmt(row["gap_prev"]) if row["gap_prev"] is not None else "nan",
            _fmt(row["gap_required"]) if row["gap_required"] is not None else "nan",
        ])
    _write_csv(outdir / "sweep.csv", header, csv_rows)
    payload = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "rows": rows,
        "monotone": ok,
    }
    with open(outdir / "sweep.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("sweep monotone=%s over N=1..%d", ok, n_max)
    return EXIT_OK if ok else EXIT_CERTIFICATE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prhf",
        description="Pseudorelativistic Hartree-Fock solver and verification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "run the SCF minimization and write report/orbitals/trace"),
        ("verify", "run the enabled verification suites against a solve"),
        ("greens", "tabulate the resolvent kernel and run its checks"),
        ("sweep", "solve for N = 1..sweep_n_max and check binding monotonicity"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="path to a key=value configuration file")
        p.add_argument(
            "--log-level", default="info", choices=["debug", "info", "warning"]
        )
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # keep the documented exit contract: usage errors are config errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        stream=_sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    runner = {
        "solve": run_solve,
        "verify": run_verify,
        "greens": run_greens,
        "sweep": run_sweep,
    }[args.command]
    try:
        return runner(args.config)
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())

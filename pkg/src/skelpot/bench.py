"""Verification suites, frequency sweeps, transmission solves and truncation studies.

Each command takes a :class:`~skelpot.config.RunConfig`, writes CSV files
into an output directory and returns the list of check rows. A check row is
``check,value,threshold,pass,note,config_hash,version``; ``pass`` is
``true``, ``false`` or ``skipped``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .calderon import (
    CONSTANTS,
    CalderonSystem,
    MultiTrace,
    apply_V,
    calderon_projection_residual,
    estimate_constants,
    jump_and_mean,
    x_pairing,
)
from .coefficients import as_frequency
from .config import RunConfig
from .femspace import freq_norm, write_vtk
from .geometry import PartitionedMesh, extract_skeleton
from .potentials import PotentialSolver
from .skeleton import (
    ExcitationData,
    beta_from_incident_wave,
    build_single_trace_basis,
    direct_solve,
    incident_wave,
    l2_distance,
    l2_error_to_function,
    read_beta_csv,
    reconstruct_volume,
    recover_multitrace,
    skeleton_solve,
    trace_spaces,
    write_beta_csv,
)

CHECK_HEADER = ("check", "value", "threshold", "pass", "note", "config_hash", "version")


@dataclass(frozen=True)
class CheckRow:
    check: str
    value: float
    threshold: float
    passed: bool | None  # None marks a skipped check
    note: str = ""

    def cells(self, config_hash: str) -> list[str]:
        status = "skipped" if self.passed is None else ("true" if self.passed else "false")
        value = "" if self.passed is None else f"{self.value:.6e}"
        return [self.check, value, f"{self.threshold:.3e}", status, self.note, config_hash, __version__]


def at_most(check: str, value: float, threshold: float, note: str = "") -> CheckRow:
    return CheckRow(check, float(value), threshold, bool(value <= threshold), note)


def at_least(check: str, value: float, threshold: float, note: str = "") -> CheckRow:
    return CheckRow(check, float(value), threshold, bool(value > threshold), note)


def skipped(check: str, note: str) -> CheckRow:
    return CheckRow(check, math.nan, math.nan, None, note)


def all_passed(rows: list[CheckRow]) -> bool:
    return all(r.passed is not False for r in rows)


def write_checks(rows: list[CheckRow], path: Path, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CHECK_HEADER)
        for r in rows:
            w.writerow(r.cells(config_hash))


def fmt_s(s: complex) -> str:
    return f"{s.real:.6g}{s.imag:+.6g}j"


def _rng(cfg: RunConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)


def _crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def relative(a: np.ndarray, b: np.ndarray) -> float:
    den = float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a))


# ----------------------------------------------------------------------
# Verification suite


def jump_checks(solver: PotentialSolver, rng: np.random.Generator, samples: int, tag: str) -> list[CheckRow]:
    n = solver.trace.n
    phi = _crandn(rng, n, samples)
    psi = _crandn(rng, n, samples)
    u = solver.single_layer(phi)
    jm_s = jump_and_mean(solver, u)
    w = solver.double_layer(psi)
    jm_d = jump_and_mean(solver, w)
    w_screened = solver.double_layer(psi, lifting="screened")
    return [
        at_most(f"slp_dirichlet_jump{tag}", np.abs(jm_s.jump_D).max(), 0.0),
        at_most(f"slp_neumann_jump{tag}", relative(jm_s.jump_N, -phi), 1e-10),
        at_most(f"dlp_dirichlet_jump{tag}", np.abs(jm_d.jump_D - psi).max(), 0.0),
        at_most(f"dlp_neumann_jump{tag}", np.linalg.norm(jm_d.jump_N) / np.linalg.norm(psi), 1e-10),
        at_most(f"dlp_lifting_independence{tag}", relative(w_screened.values(), w.values()), 1e-10),
        at_most(f"slp_homogeneous_residual{tag}", solver.homogeneous_residual(u), 1e-10),
        at_most(f"dlp_homogeneous_residual{tag}", solver.homogeneous_residual(w), 1e-10),
    ]


def green_checks(system: CalderonSystem, j: int, s, rng: np.random.Generator, samples: int, tag: str
                 ) -> list[CheckRow]:
    """Green reconstruction and projection residual for random homogeneous solutions."""
    solver = system.solvers(j, s)
    values = _crandn(rng, solver.trace.n, samples)
    u = solver.homogeneous_solution(values, "-")
    d = solver.dirichlet(u, "-")
    nrm = solver.conormal(u, "-")
    rec = solver.green(d, nrm)
    space = solver.space
    inside, outside = space.side_dofs("-"), space.side_dofs("+")
    interior_err, leak, proj = 0.0, 0.0, 0.0
    for c in range(samples):
        uc, rc = u.column(c).values(), rec.column(c).values()
        diff = np.zeros_like(uc)
        diff[inside] = (rc - uc)[inside]
        ext = np.zeros_like(uc)
        ext[outside] = rc[outside]
        ref = freq_norm(uc, s, space)
        interior_err = max(interior_err, freq_norm(diff, s, space) / ref)
        leak = max(leak, freq_norm(ext, s, space) / ref)
        proj = max(proj, calderon_projection_residual(system, j, s, u.column(c)))
    return [
        at_most(f"green_interior{tag}", interior_err, 1e-8),
        at_most(f"green_exterior_leak{tag}", leak, 1e-8),
        at_most(f"calderon_projection{tag}", proj, 1e-6),
    ]


def operator_checks(system: CalderonSystem, j: int, s, tag: str) -> list[CheckRow]:
    b = system.operators(j, s).blocks()
    scale = max(np.abs(b["V"]).max(), 1e-300)
    consts = estimate_constants(system, s, ("V-coer", "W-coer", "C-coer"), subdomains=[j])
    return [
        at_most(f"V_symmetry{tag}", np.abs(b["V"] - b["V"].T).max() / scale, 1e-10),
        at_most(f"K_duality{tag}", np.abs(b["K"] - b["Kp"].T).max() / max(np.abs(b["K"]).max(), scale), 1e-8),
        at_least(f"V_coercivity{tag}", consts["V-coer"], 0.0),
        at_least(f"W_coercivity{tag}", consts["W-coer"], 0.0),
        at_least(f"C_coercivity{tag}", consts["C-coer"], 0.0),
    ]


def self_polarity_check(mesh: PartitionedMesh, skeleton, rng: np.random.Generator, samples: int = 50
                        ) -> CheckRow:
    basis = build_single_trace_basis(mesh, skeleton, with_bc=True)
    worst = 0.0
    for _ in range(samples):
        alpha = basis.embed(_crandn(rng, basis.dim))
        a = alpha.flat()
        worst = max(worst, abs(x_pairing(alpha, alpha)) / max(np.vdot(a, a).real, 1e-300))
    return at_most("self_polarity", worst, 1e-12)


def cmd_verify(cfg: RunConfig) -> list[CheckRow]:
    """Jump relations, Green reconstruction, projection and coercivity on the configured mesh."""
    mesh = cfg.build_mesh()
    skeleton = extract_skeleton(mesh)
    rng = _rng(cfg)
    interface_checks = ("slp_dirichlet_jump", "slp_neumann_jump", "dlp_dirichlet_jump", "dlp_neumann_jump",
                        "dlp_lifting_independence", "green_interior", "green_exterior_leak",
                        "calderon_projection", "V_symmetry", "K_duality", "C_coercivity", "self_polarity")
    if skeleton.n_facets == 0:
        return [skipped(name, "empty skeleton") for name in interface_checks]
    coeffs = cfg.coefficients(mesh)
    system = CalderonSystem(coeffs, skeleton)
    rows: list[CheckRow] = []
    for s in cfg.frequencies:
        for j in system.subdomains:
            tag = f"[j={j},s={fmt_s(s)}]"
            rows += jump_checks(system.solvers(j, s), rng, cfg.samples, tag)
            rows += green_checks(system, j, s, rng, max(cfg.samples // 2, 1), tag)
            rows += operator_checks(system, j, s, tag)
    rows.append(self_polarity_check(mesh, skeleton, rng))
    return rows


# ----------------------------------------------------------------------
# Frequency sweep


@dataclass(frozen=True)
class EstimatedConstant:
    name: str
    s: complex
    value: float


@dataclass(frozen=True)
class ExponentFit:
    name: str
    arg: float
    exponent: float
    residual: float


def fit_exponent(moduli, values) -> tuple[float, float]:
    """Least-squares slope of ``log value`` against ``log |s|`` and its RMS residual."""
    if len(moduli) < 4:
        raise ValueError("an exponent fit needs at least four points")
    x, y = np.log(np.asarray(moduli)), np.log(np.asarray(values))
    coef = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((np.polyval(coef, x) - y) ** 2)))
    return float(coef[0]), res


def skeleton_norm_ratio(system: CalderonSystem, s, beta: ExcitationData, basis) -> float:
    u_single, _ = skeleton_solve(system, s, beta, basis)
    return system.x_norm(u_single) / system.x_norm(beta.beta)


def sweep_point(system: CalderonSystem, s: complex, beta: ExcitationData | None, basis) -> dict[str, float]:
    out = estimate_constants(system, s, CONSTANTS)
    if beta is not None:
        out["skeleton-ratio"] = skeleton_norm_ratio(system, s, beta, basis)
    return out


def run_sweep(cfg: RunConfig, system: CalderonSystem, points: list[complex], beta, basis) -> list[dict[str, float]]:
    for j in system.subdomains:
        system.grams(j)  # build the shared reference Grams before fanning out
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(lambda s: sweep_point(system, s, beta, basis), points))


def sweep_checks(points: list[complex], results: list[dict[str, float]], calibration: float | None
                 ) -> tuple[list[CheckRow], list[ExponentFit]]:
    rows: list[CheckRow] = []
    fits: list[ExponentFit] = []
    for s, res in zip(points, results):
        for name in ("V-coer", "W-coer", "C-coer"):
            rows.append(at_least(f"{name}_positive[s={fmt_s(s)}]", res[name], 0.0))
    args = sorted({round(math.atan2(s.imag, s.real), 12) for s in points})
    for arg in args:
        idx = [i for i, s in enumerate(points) if abs(math.atan2(s.imag, s.real) - arg) < 1e-9]
        if len(idx) < 4:
            continue
        mod = np.array([abs(points[i]) for i in idx])
        tag = f"[arg={math.degrees(arg):.4g}deg]"
        for name in ("V-cont", "C-cont"):
            e, r = fit_exponent(mod, [results[i][name] for i in idx])
            fits.append(ExponentFit(name, arg, e, r))
            rows.append(at_most(f"{name}_exponent{tag}", e, 1.3, f"fit residual {r:.3e}"))
        for name in ("C-coer", "W-coer"):
            scaled = np.array([results[i][name] for i in idx]) * mod
            band = scaled.max() / scaled.min() if scaled.min() > 0 else math.inf
            rows.append(at_most(f"{name}_times_abs_s_band{tag}", band, 10.0))
        if calibration is not None:
            worst = max(results[i]["skeleton-ratio"] / (calibration * abs(points[i]) ** 4.5 / points[i].real ** 2)
                        for i in idx)
            rows.append(at_most(f"skeleton_stability{tag}", worst, 10.0, "calibrated at s=1"))
    moduli = sorted({round(abs(s), 12) for s in points})
    for r in moduli:
        idx = [i for i, s in enumerate(points) if abs(abs(s) - r) < 1e-9]
        if len(idx) < 2:
            continue
        ratio = np.array([results[i]["C-coer"] / (points[i].real / abs(points[i])) for i in idx])
        rows.append(at_most(f"C-coer_cos_theta_band[abs_s={r:.4g}]", ratio.max() / ratio.min(), 3.0))
    return rows, fits


def random_excitation(system: CalderonSystem, rng: np.random.Generator) -> ExcitationData:
    sizes = system.sizes
    return ExcitationData(MultiTrace.from_flat(sizes, _crandn(rng, 2 * sum(sizes))))


def cmd_sweep(cfg: RunConfig, out: Path) -> list[CheckRow]:
    mesh = cfg.build_mesh()
    skeleton = extract_skeleton(mesh)
    if skeleton.n_facets == 0:
        return [skipped("sweep", "empty skeleton")]
    system = CalderonSystem(cfg.coefficients(mesh), skeleton)
    basis = build_single_trace_basis(mesh, skeleton, with_bc=True)
    beta = random_excitation(system, _rng(cfg)) if basis.dim else None
    points = cfg.sweep
    results = run_sweep(cfg, system, points, beta, basis)
    calibration = skeleton_norm_ratio(system, 1.0, beta, basis) if beta is not None else None
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["constant", "s_re", "s_im", "abs_s", "arg_deg", "value", "config_hash", "version"])
        for s, res in zip(points, results):
            for name in sorted(res):
                w.writerow([name, f"{s.real:.12g}", f"{s.imag:.12g}", f"{abs(s):.12g}",
                            f"{math.degrees(math.atan2(s.imag, s.real)):.6g}", f"{res[name]:.6e}",
                            cfg.hash, __version__])
    rows, fits = sweep_checks(points, results, calibration)
    with open(out / "exponents.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["constant", "arg_deg", "exponent", "fit_residual", "config_hash", "version"])
        for f in fits:
            w.writerow([f.name, f"{math.degrees(f.arg):.6g}", f"{f.exponent:.6f}", f"{f.residual:.3e}",
                        cfg.hash, __version__])
    return rows


# ----------------------------------------------------------------------
# Transmission solve


def excitation_for(cfg: RunConfig, mesh, skeleton, system: CalderonSystem, s) -> tuple[ExcitationData, object]:
    """Excitation named by ``beta`` and, for the incident wave, the analytic field."""
    kind = cfg.raw["beta"].strip()
    if kind == "incident":
        beta = beta_from_incident_wave(mesh, skeleton, cfg.direction, s, system.coeffs)
        return beta, incident_wave(s, cfg.direction)[0]
    if kind == "random":
        return random_excitation(system, _rng(cfg)), None
    if kind.startswith("file:"):
        path = Path(kind[5:].strip())
        if not path.is_absolute() and cfg.path is not None:
            path = cfg.path.parent / path
        return read_beta_csv(path, mesh, skeleton), None
    raise ValueError(f"beta must be incident, random or file:<path>; got {kind!r}")


def solve_once(cfg: RunConfig, resolution: int, s) -> dict:
    mesh = cfg.build_mesh(resolution=resolution)
    skeleton = extract_skeleton(mesh)
    coeffs = cfg.coefficients(mesh)
    system = CalderonSystem(coeffs, skeleton)
    beta, exact = excitation_for(cfg, mesh, skeleton, system, s)
    basis = build_single_trace_basis(mesh, skeleton, with_bc=True)
    u_single, report = skeleton_solve(system, s, beta, basis)
    u_mult = recover_multitrace(u_single, beta)
    fields = reconstruct_volume(system, s, u_mult)
    reference = direct_solve(coeffs, skeleton, s, beta)
    diff, ref = l2_distance(mesh, fields, reference)
    out = {"mesh": mesh, "skeleton": skeleton, "beta": beta, "fields": fields, "reference": reference,
           "discrepancy": diff / ref if ref > 0 else diff, "report": report, "system": system}
    if exact is not None:
        err, nrm = l2_error_to_function(mesh, fields, exact)
        out["analytic_error"] = err / nrm
    out["jump_residual"] = dirichlet_jump_residual(system, skeleton, fields, beta, s)
    return out


def dirichlet_jump_residual(system: CalderonSystem, skeleton, fields, beta: ExcitationData, s) -> dict:
    """Per interface: relative mismatch of reconstructed Dirichlet jumps against the jumps of beta."""
    freq = as_frequency(s)
    traces = trace_spaces(system.mesh, skeleton)
    subs = sorted(traces)
    out = {}
    for a, j in enumerate(subs):
        for k in subs[a + 1:]:
            nodes = skeleton.interface_nodes(j, k, system.mesh.truncation_vertices)
            if nodes.size == 0:
                continue
            got = freq.sqrt * (fields[j][nodes] - fields[k][nodes])
            want = (beta.beta.parts[a][0][traces[j].local_indices(nodes)]
                    - beta.beta.parts[subs.index(k)][0][traces[k].local_indices(nodes)])
            scale = max(np.linalg.norm(beta.beta.flat()), 1e-300)
            out[(j, k)] = float(np.linalg.norm(got - want) / scale)
    return out


def cmd_solve(cfg: RunConfig, out: Path) -> list[CheckRow]:
    rows: list[CheckRow] = []
    for idx, s in enumerate(cfg.frequencies):
        tag = f"[s={fmt_s(s)}]"
        coarse = solve_once(cfg, cfg.resolution, s)
        mesh = coarse["mesh"]
        if coarse["skeleton"].n_facets == 0:
            rows.append(skipped(f"skeleton_vs_direct{tag}", "empty skeleton"))
            continue
        d0 = coarse["discrepancy"]
        rows.append(at_most(f"skeleton_vs_direct{tag}", d0, 0.05, f"resolution {cfg.resolution}"))
        if cfg.raw["beta"].strip().startswith("file:"):
            rows.append(skipped(f"skeleton_vs_direct_refinement{tag}", "file excitation is tied to one mesh"))
            fine = None
        else:
            fine = solve_once(cfg, cfg.refine, s)
            rows.append(discrepancy_decrease_row(f"skeleton_vs_direct_refinement{tag}", d0, fine["discrepancy"]))
        if "analytic_error" in coarse:
            e0, e1 = coarse["analytic_error"], fine["analytic_error"]
            rows.append(at_most(f"analytic_error{tag}", e0, 0.05, f"resolution {cfg.resolution}"))
            rows.append(at_least(f"analytic_error_refinement{tag}", e0 / e1, 1.5,
                                 f"errors {e0:.3e} -> {e1:.3e}"))
        for (j, k), r in coarse["jump_residual"].items():
            rows.append(at_most(f"dirichlet_jump_residual[{j},{k}]{tag}", r, 1e-8))
        rows.append(at_most(f"skeleton_residual{tag}", coarse["report"].residual, 1e-10))
        for j, vals in coarse["fields"].items():
            write_vtk(mesh, vals, out / f"solution_s{idx}_j{j}.vtk", f"subdomain {j} s={fmt_s(s)}")
        write_beta_csv(coarse["beta"], mesh, coarse["skeleton"], out / f"beta_s{idx}.csv")
    return rows


#: Below this level the skeleton and direct solutions agree to rounding, so a
#: further decrease under refinement cannot be observed.
ROUNDOFF_FLOOR = 1e-8


def discrepancy_decrease_row(name: str, coarse: float, fine: float) -> CheckRow:
    if coarse <= ROUNDOFF_FLOOR and fine <= ROUNDOFF_FLOOR:
        return CheckRow(name, fine, ROUNDOFF_FLOOR, True, f"both at rounding level ({coarse:.1e}, {fine:.1e})")
    ratio = coarse / fine if fine > 0 else math.inf
    return at_least(name, ratio, 1.5, f"{coarse:.3e} -> {fine:.3e}")


# ----------------------------------------------------------------------
# Truncation study


def truncation_change(cfg: RunConfig, s, rng: np.random.Generator, phi: np.ndarray | None = None
                      ) -> tuple[float | None, float, str]:
    """Relative change of ``V_1(s) phi`` when the box half-width doubles at fixed mesh size.

    ``phi`` defaults to a random density drawn from ``rng``. Returns
    ``(change, decay_margin, note)``; ``change`` is ``None`` when the
    skeleton touches the box so that doubling the box would change Σ too.
    """
    R = cfg.truncation_R
    n = max(int(round(cfg.resolution * R / cfg.box_half_width)), 2)
    runs = []
    for scale in (1, 2):
        mesh = cfg.build_mesh(resolution=scale * n, box_half_width=scale * R)
        skeleton = extract_skeleton(mesh)
        if skeleton.n_facets == 0:
            return None, math.nan, "empty skeleton"
        if np.any(mesh.truncation_vertices[skeleton.facets]):
            return None, math.nan, "skeleton reaches the truncation box"
        solver = PotentialSolver(cfg.coefficients(mesh), skeleton, 1, s)
        runs.append(solver)
    small, big = runs
    coords = small.trace.coordinates
    diam = float(np.max(np.linalg.norm(coords[:, None] - coords[None], axis=-1)))
    margin = as_frequency(s).s.real * (R - diam / 2)
    lookup = {tuple(np.round(x, 9)): i for i, x in enumerate(big.trace.coordinates)}
    try:
        index = np.array([lookup[tuple(np.round(x, 9))] for x in coords])
    except KeyError:
        return None, margin, "trace nodes do not nest"
    phi = rng.standard_normal(small.trace.n) if phi is None else np.asarray(phi)
    if not np.any(phi):
        return 0.0, margin, ""
    big_phi = np.zeros(big.trace.n)
    big_phi[index] = phi
    v_small = apply_V(small, phi)
    v_big = apply_V(big, big_phi)[index]
    note = "insufficient decay" if margin < 4 else ""
    return relative(v_small, v_big), margin, note


def cmd_truncation(cfg: RunConfig, out: Path) -> list[CheckRow]:
    rng = _rng(cfg)
    rows = []
    for s in [cfg.truncation_s]:
        change, margin, note = truncation_change(cfg, s, rng)
        name = f"truncation_change[s={fmt_s(as_frequency(s).s)},R={cfg.truncation_R:g}]"
        if change is None:
            rows.append(skipped(name, note))
        else:
            rows.append(at_most(name, change, 0.01, note or f"decay margin {margin:.3g}"))
    return rows


COMMANDS = {
    "verify": lambda cfg, out: cmd_verify(cfg),
    "sweep": cmd_sweep,
    "solve": cmd_solve,
    "truncation": cmd_truncation,
}


def run_command(name: str, cfg: RunConfig, out: Path) -> tuple[list[CheckRow], int]:
    """Run one command, write ``<name>_checks.csv`` and return rows and exit code."""
    out.mkdir(parents=True, exist_ok=True)
    rows = COMMANDS[name](cfg, out)
    write_checks(rows, out / f"{name}_checks.csv", cfg.hash)
    return rows, 0 if all_passed(rows) else 1

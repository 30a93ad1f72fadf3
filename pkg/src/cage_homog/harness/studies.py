"""Reproduction studies: delta sweeps, theta sweeps, shielding curves, cell and constants reports."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import fem, unfolding
from ..cell import corrector_field, solve_cell_problem, weighted_energy
from ..constants import constant_report
from ..geometry import StructuredMesh, build_mesh
from ..problems import (eigen_gap_check, interpolate_field, limit_dirichlet_mask, solve_delta_problem,
                        solve_limit, solve_regularized, ResonanceError)
from .config import StudyConfig
from .reports import ConvergenceTable, fit_loglog, is_monotone, svg_loglog, write_csv, write_json, write_table_outputs

log = logging.getLogger(__name__)


def _map(cfg: StudyConfig, fn: Callable, items: list) -> list:
    """Run cases concurrently; results come back in list order."""
    if cfg.workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, items))


def case_mesh(cfg: StudyConfig, delta: float, refine: int = 1) -> StructuredMesh:
    return build_mesh(cfg.domain, cfg.n_periods(delta), cfg.cells_per_period, cfg.pattern, cfg.grading(refine))


def constant_A0(cfg: StudyConfig) -> Optional[np.ndarray]:
    A = cfg.params().A
    d = cfg.domain.mode.in_plane_dims + 1
    if A is None or (isinstance(A, str) and A.lower() == "identity"):
        return np.eye(d)
    if callable(A):
        return None
    return np.asarray(A, dtype=float)


def check_resonance(cfg: StudyConfig, mesh: StructuredMesh) -> dict:
    p = cfg.params()
    rep = eigen_gap_check(mesh, p.A, p.omega, p.eps3, threshold_fraction=float(cfg.raw["gap_threshold"]))
    if rep.conclusive and not rep.passed:
        raise ResonanceError(rep)
    return {"passed": rep.passed, "conclusive": rep.conclusive, "gap": rep.gap,
            "nearest_eigenvalue": rep.nearest_eigenvalue, "target": rep.target}


def _outdir(cfg: StudyConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


# -- single solves -----------------------------------------------------------------------

def run_solve(cfg: StudyConfig) -> dict:
    delta = float(cfg.raw["delta"])
    mesh = case_mesh(cfg, delta)
    rep = solve_delta_problem(mesh, cfg.params(), gap_threshold=float(cfg.raw["gap_threshold"]))
    summary = {"study": "solve", "delta": delta, "nodes": mesh.node_count, "regions": mesh.region_counts(),
               "report": rep.to_dict(), "records": fem.norm_records(rep.field)}
    out = _outdir(cfg)
    write_json(summary, out / "summary.json")
    table = ConvergenceTable("delta")
    for k, v in sorted(rep.norms.items()):
        table.add(delta, k, v)
    write_csv(table, out / "results.csv")
    if cfg.raw["output"].get("vtk"):
        fem.write_vtk_field(rep.field, out / "u_delta.vtk")
    return summary


def run_limit(cfg: StudyConfig) -> dict:
    delta = float(cfg.raw["delta"])
    mesh = case_mesh(cfg, delta, cfg.limit_refine)
    rep = solve_limit(mesh, cfg.params(), gap_threshold=float(cfg.raw["gap_threshold"]))
    lower = limit_dirichlet_mask(mesh)
    summary = {"study": "limit", "nodes": mesh.node_count, "report": rep.to_dict(),
               "max_abs_lower": float(np.max(np.abs(rep.field.values[lower]))),
               "records": fem.norm_records(rep.field)}
    out = _outdir(cfg)
    write_json(summary, out / "summary.json")
    table = ConvergenceTable("delta")
    for k, v in sorted(rep.norms.items()):
        table.add(delta, k, v)
    write_csv(table, out / "results.csv")
    if cfg.raw["output"].get("vtk"):
        fem.write_vtk_field(rep.field, out / "u_limit.vtk")
    return summary


# -- delta convergence ------------------------------------------------------------------

def converge_delta(cfg: StudyConfig) -> tuple:
    """Compute the delta table without writing files; returns ``(table, summary, state)``."""
    params = cfg.params()
    deltas = cfg.deltas
    limit_mesh = case_mesh(cfg, deltas[-1], cfg.limit_refine)
    resonance = check_resonance(cfg, limit_mesh)
    limit = solve_limit(limit_mesh, params, check_resonance=False)
    u = limit.field
    f_norm = limit.extra["f_norm"]
    A0 = constant_A0(cfg)
    cell_cfg = cfg.raw["cell"]
    V = None
    if A0 is not None:
        V = solve_cell_problem(cfg.pattern, A0, params.omega, params.eps2, float(cell_cfg["zeta"]),
                               cfg.cells_per_period, interface_flux=bool(cell_cfg.get("interface_flux", True)))

    def case(delta):
        mesh = case_mesh(cfg, delta)
        rep = solve_delta_problem(mesh, params, check_resonance=False)
        ui = interpolate_field(u, mesh)
        err = fem.NodalField(rep.field.values - ui.values, mesh)
        out = {
            "err_h1": fem.norms(err, mesh)["h1"],
            "err_l2_layer": fem.norms(err, mesh, "LAYER")["l2"],
            "scaled_grid_over_f": rep.norms["scaled_grid"] / f_norm if f_norm > 0 else 0.0,
            "l2_gamma": rep.norms["l2_gamma"],
            "l2_minus": rep.norms["l2_minus"],
            "l2_bulk_minus": rep.norms["l2_bulk_minus"],
        }
        T = unfolding.unfold(err, mesh, 0.5) * (1.0 / mesh.delta)
        out["unfolded_over_f"] = T.l2_norm() / f_norm if f_norm > 0 else 0.0
        if V is not None:
            C = corrector_field(V, u, mesh, template=T)
            out["corrector_error"] = (T - C).l2_norm()
        out["energy_rel_defect"] = abs(rep.extra["absorbed"] - rep.extra["source_work"]) / max(
            abs(rep.extra["absorbed"]), 1e-300)
        out["nodes"] = mesh.node_count
        return out

    results = _map(cfg, case, deltas)
    table = ConvergenceTable("delta")
    keys = ["err_h1", "err_l2_layer", "scaled_grid_over_f", "l2_gamma", "l2_minus", "l2_bulk_minus",
            "unfolded_over_f"] + (["corrector_error"] if V is not None else [])
    for d, r in zip(deltas, results):
        for k in keys:
            table.add(d, k, r[k])
    fits = table.fit()
    lower = limit_dirichlet_mask(limit_mesh)
    limit_zero = bool(np.all(u.values[lower] == 0))
    minus = [r["l2_minus"] for r in results]
    checks = {
        "h1_slope_in_band": _in(fits["err_h1"]["slope"], 0.4, 0.9),
        "l2_layer_slope_ge_1.3": _in(fits["err_l2_layer"]["slope"], 1.3, np.inf),
        "scaled_grid_slope_in_band": _in(fits["scaled_grid_over_f"]["slope"], -0.2, 0.2),
        "l2_minus_strictly_decreasing": is_monotone(minus, decreasing=True, strict=True),
        "limit_zero_on_lower_half": limit_zero,
    }
    if V is not None:
        ce = [r["corrector_error"] for r, d in zip(results, deltas) if d <= 0.125 + 1e-12]
        checks["corrector_error_decreasing"] = len(ce) >= 2 and is_monotone(ce, True, True)
    summary = {
        "study": "converge",
        "deltas": deltas,
        "f_norm": f_norm,
        "resonance": resonance,
        "limit": {"nodes": limit_mesh.node_count, "max_abs_lower": float(np.max(np.abs(u.values[lower])))},
        "cell": None if V is None else {"V_plus_inf": V.V_plus_inf, "V_minus_inf": V.V_minus_inf,
                                        "interface_flux": V.interface_flux},
        "cases": [{"delta": d, **r} for d, r in zip(deltas, results)],
        "fits": fits,
        "checks": checks,
    }
    return table, summary, {"limit": limit, "cell": V, "limit_mesh": limit_mesh}


def _in(x, lo, hi) -> bool:
    return x is not None and lo <= x <= hi


def run_converge_delta(cfg: StudyConfig) -> ConvergenceTable:
    table, summary, _ = converge_delta(cfg)
    table.notes = {"checks": summary["checks"]}
    write_table_outputs(table, _outdir(cfg), summary, "converge", "delta convergence")
    return table


# -- theta regularization ---------------------------------------------------------------

def regularize_theta(cfg: StudyConfig) -> tuple:
    params = cfg.params()
    delta = float(cfg.raw["delta"])
    mesh = case_mesh(cfg, delta)
    ref = solve_delta_problem(mesh, params, gap_threshold=float(cfg.raw["gap_threshold"]))
    ref_h1 = ref.norms["h1"]
    diam = cfg.domain.diameter
    alpha = fem.MaterialField(fem.conductivity(mesh, params.A), np.ones(mesh.element_count)).alpha

    def case(theta):
        rep = solve_regularized(mesh, params, theta)
        diff = fem.NodalField(rep.field.values - ref.field.values, mesh)
        grad = rep.norms["h1_semi"]
        gb = rep.extra["grad_bound"]
        return {"diff_h1": fem.norms(diff, mesh)["h1"], "grad": grad, "grad_bound": gb,
                "h1": rep.norms["h1"], "h1_bound": gb * diam,
                "energy_rel_defect": abs(rep.extra["absorbed"] - rep.extra["source_work"]) /
                max(abs(rep.extra["absorbed"]), 1e-300)}

    thetas = cfg.thetas
    results = _map(cfg, case, thetas)
    table = ConvergenceTable("theta")
    for t, r in zip(thetas, results):
        for k in ("diff_h1", "grad", "grad_bound", "h1", "h1_bound"):
            table.add(t, k, r[k])
    fits = table.fit(["diff_h1"]) if len(thetas) >= 3 else {}
    diffs = [r["diff_h1"] for r in results]
    checks = {
        "diff_decreasing": is_monotone(diffs, True, True) if len(diffs) > 1 else True,
        "bounds_hold": all(r["grad"] <= r["grad_bound"] * (1 + 1e-12) and r["h1"] <= r["h1_bound"] * (1 + 1e-12)
                           for r in results),
        "smallest_theta_rel": diffs[-1] / ref_h1 if ref_h1 > 0 else 0.0,
    }
    summary = {"study": "regularize", "delta": delta, "reference_h1": ref_h1, "alpha": alpha, "diam": diam,
               "cases": [{"theta": t, **r} for t, r in zip(thetas, results)], "fits": fits, "checks": checks}
    return table, summary


def run_regularize_theta(cfg: StudyConfig) -> ConvergenceTable:
    table, summary = regularize_theta(cfg)
    write_table_outputs(table, _outdir(cfg), summary, "regularize", "theta regularization", "theta")
    return table


# -- shielding --------------------------------------------------------------------------

def shielding(cfg: StudyConfig) -> tuple:
    params = cfg.params()
    deltas = cfg.deltas

    def case(delta):
        rep = solve_delta_problem(case_mesh(cfg, delta), params, gap_threshold=float(cfg.raw["gap_threshold"]))
        return {k: rep.norms[k] for k in ("l2_minus", "l2_bulk_minus", "l2_gamma", "l2_grid")}

    results = _map(cfg, case, deltas)
    table = ConvergenceTable("delta")
    for d, r in zip(deltas, results):
        for k, v in r.items():
            table.add(d, k, v)
    fits = table.fit() if len(deltas) >= 3 else {}
    sweep_delta = float(cfg.raw["delta"])
    sweep_mesh = case_mesh(cfg, sweep_delta)

    def sweep_case(eps2):
        rep = solve_delta_problem(sweep_mesh, cfg.params(eps2=eps2), check_resonance=False)
        return {"eps2": eps2, "l2_minus": rep.norms["l2_minus"], "l2_gamma": rep.norms["l2_gamma"]}

    sweep = _map(cfg, sweep_case, [float(e) for e in cfg.raw["eps2_sweep"]])
    minus = [r["l2_minus"] for r in results]
    summary = {"study": "shielding", "deltas": deltas, "cases": [{"delta": d, **r} for d, r in zip(deltas, results)],
               "fits": fits, "eps2_sweep": {"delta": sweep_delta, "points": sweep},
               "checks": {"l2_minus_strictly_decreasing": is_monotone(minus, True, True)}}
    return table, summary


def run_shielding(cfg: StudyConfig) -> ConvergenceTable:
    table, summary = shielding(cfg)
    out = _outdir(cfg)
    write_table_outputs(table, out, summary, "shielding", "transmitted and interface energy")
    sweep = ConvergenceTable("eps2")
    for p in summary["eps2_sweep"]["points"]:
        sweep.add(p["eps2"], "l2_minus", p["l2_minus"])
        sweep.add(p["eps2"], "l2_gamma", p["l2_gamma"])
    write_csv(sweep, out / "sweep_eps2.csv")
    return table


# -- cell and constants -----------------------------------------------------------------

def run_cell(cfg: StudyConfig) -> dict:
    p = cfg.params()
    A0 = constant_A0(cfg)
    if A0 is None:
        raise ValueError("the cell study needs a constant A")
    c = cfg.raw["cell"]
    zeta, res, flux = float(c["zeta"]), int(c["resolution"]), bool(c.get("interface_flux", True))
    sol = solve_cell_problem(cfg.pattern, A0, p.omega, p.eps2, zeta, res, interface_flux=flux)
    half = solve_cell_problem(cfg.pattern, A0, p.omega, p.eps2, zeta / 2, res, interface_flux=flux)
    we, we_half = weighted_energy(sol), weighted_energy(half)
    vp = sol.V_plus_inf
    summary = sol.summary()
    summary.update({
        "study": "cell",
        "interface_flux": flux,
        "energy_identity": {k: v for k, v in sol.energy_identity().items() if k.startswith("rel")},
        "periodicity_defect": sol.periodicity_defect(),
        "V_plus_inf_change_half_zeta": abs(vp - half.V_plus_inf) / abs(vp) if abs(vp) > 0 else 0.0,
        "weighted_energy": we,
        "weighted_energy_change_half_zeta": abs(we - we_half) / abs(we) if we != 0 else 0.0,
        "residual": sol.residual,
        "decay_windows": sol.decay_fit.windows,
        "tail_energies": sol.decay_fit.energies,
    })
    out = _outdir(cfg)
    write_json(summary, out / "summary.json")
    table = ConvergenceTable("window")
    for w, e in zip(sol.decay_fit.windows, sol.decay_fit.energies):
        table.add(w, "tail_energy", e)
    write_csv(table, out / "results.csv")
    svg_loglog({"tail_energy": table.series("tail_energy")}, out / "plot_cell.svg",
               "gradient energy above z3", "z3", logx=False)
    if cfg.raw["output"].get("vtk"):
        sol.write_vtk(out / "cell.vtk")
    return summary


def run_constants(cfg: StudyConfig, overrides: Optional[dict] = None) -> dict:
    c = dict(cfg.raw["constants"])
    c.update({k: v for k, v in (overrides or {}).items() if v is not None})
    diam = c.get("diam") or cfg.domain.diameter
    rep = constant_report(float(c["alpha"]), float(c["tau"]), float(c["omega"]), float(c["theta"]),
                          float(diam), float(c.get("fnorm", 1.0)))
    out = _outdir(cfg)
    (out / "summary.json").write_text(rep.to_json() + "\n")
    table = ConvergenceTable("theta")
    for k in ("beta1", "C_prime", "C_prime_printed", "apriori_gradient_bound", "apriori_h1_bound"):
        table.add(rep.theta, k, getattr(rep, k))
    write_csv(table, out / "results.csv")
    return rep.__dict__.copy()

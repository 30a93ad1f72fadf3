"""Acceptance criteria 1-11 on the reference configuration, plus FULL_3D variants at delta = 1/4.

Every test records one summary line (printed at the end of the session) and
then asserts the criterion at its stated tolerance.
"""
import time

import numpy as np
import pytest

from cage_homog import box_mesh, fem
from cage_homog.cell import solve_cell_problem
from cage_homog.constants import verify_coercivity
from cage_homog.geometry import DimensionMode, DomainSpec
from cage_homog.harness import from_dict
from cage_homog.harness.checks import (cell_suite, coercivity_suite, discrete_ellipticity, manufactured_rates,
                                       random_coercive_form, resonance_suite, unfolding_suite)
from cage_homog.harness.studies import (case_mesh, converge_delta, regularize_theta, run_limit, shielding)
from cage_homog.lattice import mass_matrix, stiffness_matrix
from cage_homog.problems import solve_delta_problem, solve_regularized

pytestmark = pytest.mark.acceptance

CFG_3D = {
    "domain": {"mode": "FULL_3D", "extent": [1.0, 1.0], "half_height": 1.0},
    "pattern": {"kind": "CROSS", "bar_width": 0.5, "raster_res": 4},
    "resolution": {"cells_per_period": 4, "grading_ratio": 1.3, "max_size": 0.0625, "core_periods": 2.0,
                   "limit_refine": 2},
    "deltas": [0.5, 0.25],
    "delta": 0.25,
    "cell": {"resolution": 8},
    "check": {"deltas": [0.25], "samples": 100},
}
MODES = ["REDUCED_2D", pytest.param("FULL_3D", marks=pytest.mark.full3d)]


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def make_cfg(mode, kind, out_dir, **over):
    data = dict(CFG_3D) if mode == "FULL_3D" else {"study": kind}
    data.update(over)
    data["output"] = {"dir": str(out_dir / f"{mode}_{kind}")}
    return from_dict(data, kind, env={})


@pytest.fixture(scope="module")
def c0_converge(out_dir):
    t0 = time.perf_counter()
    table, summary, state = converge_delta(make_cfg("REDUCED_2D", "CONVERGE_DELTA", out_dir))
    return table, summary, state, time.perf_counter() - t0


def _failures(results):
    return [f"{r.name}={r.value}" for r in results if not r.passed]


# -- 1 ------------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_criterion_01_unfolding_identities(mode, out_dir, acceptance_record):
    cfg = make_cfg(mode, "CHECK_OPS", out_dir)
    t0 = time.perf_counter()
    results = unfolding_suite(cfg)
    dt = time.perf_counter() - t0
    worst = {k: max(r.value for r in results if r.name.startswith(k))
             for k in ("integral_identity", "gradient_scaling")}
    nb = max(r.value for r in results if r.name.startswith("norm_bound"))
    ok = not _failures(results) and dt < 10
    acceptance_record(1, mode, ok, f"integral rel err {worst['integral_identity']:.1e}, norm ratio {nb:.16f}, "
                                   f"gradient defect {worst['gradient_scaling']:.1e} ({dt:.1f} s)")
    assert not _failures(results), _failures(results)
    assert dt < 10


# -- 2 ------------------------------------------------------------------------------------

def _fem_forms_3d(n_forms=1000, n_vectors=100, seed=20):
    """Coercivity check with H and L taken from a 3D Q1 stiffness and mass pair."""
    spec = DomainSpec((1.0, 1.0), 1.0, DimensionMode.FULL_3D)
    mesh = box_mesh(spec, [4, 4, 8])
    g = mesh.grid
    free = np.flatnonzero(~g.boundary_mask())
    H = stiffness_matrix(g, fem.conductivity(mesh, None))[free][:, free].toarray()
    Lm = mass_matrix(g, np.ones(g.n_elements))[free][:, free].toarray()
    n = free.size
    rng = np.random.default_rng(seed)
    viol, worst = 0, np.inf
    for _ in range(n_forms):
        k = tuple(float(x) for x in 10 ** rng.uniform(-1, 1, 3))
        extra = random_coercive_form(k, n, rng)
        vecs = rng.standard_normal((n_vectors, n)) + 1j * rng.standard_normal((n_vectors, n))
        r = verify_coercivity(*k, H, Lm, extra["P"], extra["Q"], vecs, extra["sign_re"], extra["sign_im"])
        viol += r["violations"]
        worst = min(worst, r["min_ratio"])
    return viol, worst


@pytest.mark.parametrize("mode", MODES)
def test_criterion_02_coercivity_bound(mode, out_dir, acceptance_record):
    t0 = time.perf_counter()
    if mode == "REDUCED_2D":
        r = coercivity_suite(make_cfg(mode, "CHECK_OPS", out_dir))[0]
        viol, worst = r.value["violations"], r.value["min_ratio"]
        what = "random model forms"
    else:
        viol, worst = _fem_forms_3d()
        what = "forms on 3D Q1 stiffness/mass pairs"
    dt = time.perf_counter() - t0
    acceptance_record(2, mode, viol == 0 and dt < 10,
                      f"{viol} violations over 1000 {what} x 100 vectors, min |a|/(beta1 |v|_H^2) = {worst:.4f} "
                      f"({dt:.1f} s)")
    assert viol == 0
    assert dt < 10


# -- 3 ------------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_criterion_03_discrete_ellipticity(mode, out_dir, acceptance_record):
    cfg = make_cfg(mode, "CHECK_OPS", out_dir)
    t0 = time.perf_counter()
    results = [discrete_ellipticity(cfg, 0.25, theta) for theta in (0.5, 0.01)]
    dt = time.perf_counter() - t0
    ok = all(r.passed for r in results) and dt < 30
    acceptance_record(3, mode, ok, "; ".join(
        f"theta={r.inputs['theta']}: C'={r.value['C_prime']:.4g}, {r.value['violations']} violations, "
        f"min ratio {r.value['min_ratio']:.3f}" for r in results) + f" ({dt:.1f} s)")
    assert all(r.passed for r in results)
    assert dt < 30


# -- 4 ------------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_criterion_04_manufactured_solution(mode, acceptance_record):
    t0 = time.perf_counter()
    r = manufactured_rates(DimensionMode(mode))
    dt = time.perf_counter() - t0
    ok = r["order_l2"] >= 1.8 and r["order_h1"] >= 0.9 and dt < 60
    acceptance_record(4, mode, ok, f"L2 order {r['order_l2']:.3f} (>= 1.8), H1 order {r['order_h1']:.3f} (>= 0.9) "
                                   f"({dt:.1f} s)")
    assert r["order_l2"] >= 1.8 and r["order_h1"] >= 0.9
    assert dt < 60


# -- 5 ------------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_criterion_05_energy_identities(mode, out_dir, acceptance_record):
    t0 = time.perf_counter()
    cfg = make_cfg(mode, "REGULARIZE_THETA", out_dir, delta=0.125 if mode == "REDUCED_2D" else 0.25)
    params = cfg.params()
    deltas = [0.25, 0.125, 0.0625, 0.03125] if mode == "REDUCED_2D" else [0.25]
    delta_err = 0.0
    for d in deltas:
        rep = solve_delta_problem(case_mesh(cfg, d), params, check_resonance=False)
        delta_err = max(delta_err, abs(rep.extra["absorbed"] - rep.extra["source_work"]) / rep.extra["absorbed"])
    _, summary = regularize_theta(cfg)
    theta_err = max(c["energy_rel_defect"] for c in summary["cases"])
    slack = min(min(c["grad_bound"] / c["grad"], c["h1_bound"] / c["h1"]) for c in summary["cases"])
    dt = time.perf_counter() - t0
    ok = delta_err <= 1e-8 and theta_err <= 1e-8 and summary["checks"]["bounds_hold"] and dt < 60
    acceptance_record(5, mode, ok, f"delta-problem rel defect {delta_err:.1e}, theta-problem {theta_err:.1e}, "
                                   f"a-priori bounds hold with min slack x{slack:.1f} ({dt:.1f} s)")
    assert delta_err <= 1e-8 and theta_err <= 1e-8
    assert summary["checks"]["bounds_hold"]
    assert dt < 60


# -- 6, 7, 8, 10 (one converge run) ------------------------------------------------------

def test_criterion_06_convergence_rates(c0_converge, acceptance_record):
    table, summary, _, dt = c0_converge
    h1, l2 = summary["fits"]["err_h1"], summary["fits"]["err_l2_layer"]
    ok_h1 = 0.4 <= h1["slope"] <= 0.9
    ok_l2 = l2["slope"] >= 1.3
    acceptance_record(6, "REDUCED_2D", ok_h1 and ok_l2 and dt < 600,
                      f"H1(Omega) slope {h1['slope']:.3f} in [0.4, 0.9] (residual {h1['residual']:.3f}); "
                      f"L2(layer) slope {l2['slope']:.3f} >= 1.3 (residual {l2['residual']:.3f}) ({dt:.1f} s)")
    assert ok_h1, h1
    assert ok_l2, l2
    assert dt < 600


def test_criterion_07_scaled_grid_norm(c0_converge, acceptance_record):
    _, summary, _, _ = c0_converge
    f = summary["fits"]["scaled_grid_over_f"]
    ok = -0.2 <= f["slope"] <= 0.2
    acceptance_record(7, "REDUCED_2D", ok, f"slope of delta^-1 ||u||_grid / ||f|| = {f['slope']:+.3f} "
                                           f"(residual {f['residual']:.3f})")
    assert ok


def test_criterion_08_shielding_2d(c0_converge, acceptance_record):
    _, summary, _, _ = c0_converge
    minus = [c["l2_minus"] for c in summary["cases"]]
    dec = all(a > b for a, b in zip(minus, minus[1:]))
    zero = summary["checks"]["limit_zero_on_lower_half"]
    acceptance_record(8, "REDUCED_2D", dec and zero,
                      "||u_delta||_L2(Omega-) = " + ", ".join(f"{m:.4e}" for m in minus)
                      + f"; limit max |u| on closed lower half = {summary['limit']['max_abs_lower']}")
    assert dec and zero


@pytest.mark.full3d
def test_criterion_08_shielding_3d(out_dir, acceptance_record):
    cfg = make_cfg("FULL_3D", "SHIELDING", out_dir)
    _, summary = shielding(cfg)
    minus = [c["l2_minus"] for c in summary["cases"]]
    dec = all(a > b for a, b in zip(minus, minus[1:]))
    lim = run_limit(make_cfg("FULL_3D", "LIMIT", out_dir))
    zero = lim["max_abs_lower"] == 0.0
    acceptance_record(8, "FULL_3D", dec and zero,
                      "delta in {1/2, 1/4}: ||u_delta||_L2(Omega-) = " + ", ".join(f"{m:.4e}" for m in minus)
                      + f"; limit max |u| on closed lower half = {lim['max_abs_lower']}")
    assert dec and zero


def test_criterion_10_corrector(c0_converge, acceptance_record):
    _, summary, _, dt = c0_converge
    errs = [(c["delta"], c["corrector_error"]) for c in summary["cases"] if c["delta"] <= 0.125]
    vals = [e for _, e in errs]
    ok = len(vals) == 3 and all(a > b for a, b in zip(vals, vals[1:]))
    acceptance_record(10, "REDUCED_2D", ok, "corrector error at delta=1/8,1/16,1/32: "
                      + ", ".join(f"{e:.4f}" for e in vals) + " (V with interface flux term)")
    assert ok


# -- 9 ------------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_criterion_09_cell_problem(mode, out_dir, acceptance_record):
    cfg = make_cfg(mode, "CELL", out_dir)
    t0 = time.perf_counter()
    results = cell_suite(cfg)
    dt = time.perf_counter() - t0
    by = {r.name: r.value for r in results}
    ok = not _failures(results) and dt < 120
    fit = by["decay_fit[display]"]
    acceptance_record(9, mode, ok, f"periodicity defect {by['periodicity[display]']}, energy identity "
                                   f"{by['energy_identity[display]']:.1e}, c={fit['c']:.2f} r2={fit['r_squared']:.4f}, "
                                   f"zeta 4->8 change {by['zeta_doubling[display]']:.1e} "
                                   f"(both cell variants checked, {dt:.1f} s)")
    assert not _failures(results), _failures(results)
    assert dt < 120


# -- 11 -----------------------------------------------------------------------------------

def test_criterion_11_resonance_probe(out_dir, acceptance_record):
    cfg = make_cfg("REDUCED_2D", "CHECK_OPS", out_dir)
    t0 = time.perf_counter()
    results = resonance_suite(cfg)
    dt = time.perf_counter() - t0
    lam = results[0].value
    ok = not _failures(results) and dt < 60
    acceptance_record(11, "REDUCED_2D", ok, f"lambda1 = {lam['lambda1']:.4f} vs 2 pi^2 = {lam['exact']:.4f} "
                                            f"(rel {lam['rel']:.1e}); rejects at lambda1, accepts at 1 ({dt:.1f} s)")
    assert not _failures(results), _failures(results)
    assert dt < 60

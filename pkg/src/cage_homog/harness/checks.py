"""Invariant suites with fixed seeds, reported as JSON and JUnit-style XML."""
from __future__ import annotations

import math
import time
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import fem, unfolding
from ..cell import decay_rate, solve_cell_problem
from ..constants import (coercivity_constant, form_matrix, form_matrix_eigenvalues, h1_seminorm_sq,
                         regularized_ellipticity_constant, regularized_form_value, verify_coercivity)
from ..geometry import DimensionMode, DomainSpec, Region, box_mesh
from ..problems import (PhysicalParams, _eps_field, eigen_gap_check, solve_delta_problem,
                        solve_regularized)
from .config import StudyConfig
from .reports import fit_loglog, write_json
from .studies import case_mesh, constant_A0

REL_TOL = 1e-12
ENERGY_TOL = 1e-8


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: object = None
    tolerance: object = None
    inputs: dict = field(default_factory=dict)
    seconds: float = 0.0


def _rng(cfg: StudyConfig, salt: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.raw["check"].get("seed", cfg.seed)), salt])


# -- unfolding --------------------------------------------------------------------------

def unfolding_suite(cfg: StudyConfig) -> list:
    """Integral identity, norm bound and gradient scaling on random nodal fields."""
    chk = cfg.raw["check"]
    deltas = [float(d) for d in chk.get("deltas", [0.25, 0.125, 0.0625])]
    samples = int(chk.get("samples", 100))
    fault = bool(chk.get("fault_injection", False))
    rng = _rng(cfg, 1)
    per = [samples // len(deltas) + (i < samples % len(deltas)) for i in range(len(deltas))]
    out = []
    for delta, count in zip(deltas, per):
        mesh = case_mesh(cfg, delta)
        worst = {"integral": (0.0, None), "norm": (0.0, None), "grad": (0.0, None), "refold": (0.0, None)}
        for k, v in enumerate(fem.random_smooth_fields(mesh, count, rng)):
            if k % 2 == 1:
                # half the samples live inside the unfolded strip, where the norm bound is an equality
                v = fem.NodalField(unfolding.refold(unfolding.unfold(v, mesh), mesh), mesh)
            e = unfolding.check_integral_identity(v, mesh, fault_injection=fault)["rel_err"]
            r = unfolding.check_norm_bound(v, mesh) - 1.0
            g = unfolding.check_gradient_scaling(v, mesh)
            T = unfolding.unfold(v, mesh)
            back = unfolding.refold(T, mesh, base=v.values)
            f = float(np.max(np.abs(back - v.values)))
            for key, val in (("integral", e), ("norm", r), ("grad", g), ("refold", f)):
                if val > worst[key][0] or worst[key][1] is None:
                    worst[key] = (max(val, worst[key][0]), k)
        inputs = {"delta": delta, "count": count, "seed": int(chk.get("seed", cfg.seed)),
                  "fault_injection": fault}
        out += [
            CheckResult("unfolding", f"integral_identity[delta={delta:g}]", worst["integral"][0] <= REL_TOL,
                        worst["integral"][0], REL_TOL, {**inputs, "worst_sample": worst["integral"][1]}),
            CheckResult("unfolding", f"norm_bound[delta={delta:g}]", worst["norm"][0] <= REL_TOL,
                        worst["norm"][0] + 1.0, 1.0 + REL_TOL, {**inputs, "worst_sample": worst["norm"][1]}),
            CheckResult("unfolding", f"gradient_scaling[delta={delta:g}]", worst["grad"][0] <= REL_TOL,
                        worst["grad"][0], REL_TOL, {**inputs, "worst_sample": worst["grad"][1]}),
            CheckResult("unfolding", f"refold_inverse[delta={delta:g}]", worst["refold"][0] == 0.0,
                        worst["refold"][0], 0.0, inputs),
        ]
    return out


# -- constants ---------------------------------------------------------------------------

def random_coercive_form(k: tuple, n: int, rng: np.random.Generator) -> dict:
    """A Hermitian-pair model form meeting both coercivity hypotheses by construction.

    ``Re a = v*(k2 H - k3 L + P)v`` and ``Im a = v*(k1 L + Q)v`` with ``H``
    positive definite, ``L`` and the extra parts ``P``, ``Q`` positive
    semidefinite; signs of both parts are random.
    """
    def psd(scale):
        B = rng.standard_normal((n, n // 4)) + 1j * rng.standard_normal((n, n // 4))
        return scale * (B @ B.conj().T) / n

    H = np.diag(rng.uniform(0.2, 2.0, n)) + psd(0.5)
    Lm = np.diag(rng.uniform(0.0, 2.0, n)) + psd(0.2)
    return {"H": H, "Lm": Lm, "P": psd(rng.uniform(0, 1)), "Q": psd(rng.uniform(0, 1)),
            "sign_re": float(rng.choice([-1.0, 1.0])), "sign_im": float(rng.choice([-1.0, 1.0]))}


def coercivity_suite(cfg: StudyConfig, n_forms: int = 1000, n_vectors: int = 100, dim: int = 12) -> list:
    rng = _rng(cfg, 2)
    violations, worst, worst_input = 0, np.inf, None
    for i in range(n_forms):
        k = tuple(float(x) for x in 10 ** rng.uniform(-1, 1, 3))
        form = random_coercive_form(k, dim, rng)
        vecs = rng.standard_normal((n_vectors, dim)) + 1j * rng.standard_normal((n_vectors, dim))
        # a share of vectors concentrated where the real part is weakest
        w, U = np.linalg.eigh(k[1] * form["H"] - k[2] * form["Lm"])
        vecs[: n_vectors // 4] = U[:, :1].T + 0.1 * vecs[: n_vectors // 4]
        rep = verify_coercivity(*k, form["H"], form["Lm"], form["P"], form["Q"], vecs,
                                form["sign_re"], form["sign_im"])
        violations += rep["violations"]
        if rep["min_ratio"] < worst:
            worst, worst_input = rep["min_ratio"], {"form_index": i, "k": k}
    return [CheckResult("constants", "coercivity_random_forms", violations == 0,
                        {"violations": violations, "min_ratio": worst}, ">= 1",
                        {"n_forms": n_forms, "n_vectors": n_vectors, "dim": dim, "worst": worst_input})]


def eigen_identity_suite(cfg: StudyConfig, n: int = 10_000) -> list:
    rng = _rng(cfg, 3)
    ks = 10 ** rng.uniform(-2, 2, (n, 3))
    e_sum = e_prod = 0.0
    ray_viol = q_viol = mono_viol = 0
    for k1, k2, k3 in ks:
        mu = form_matrix_eigenvalues(k1, k2, k3)
        T = k1 * k1 + k2 * k2 + k3 * k3
        e_sum = max(e_sum, abs(mu["mu_minus"] + mu["mu_plus"] - T) / T)
        e_prod = max(e_prod, abs(mu["mu_minus"] * mu["mu_plus"] - (k1 * k2) ** 2) / (k1 * k2) ** 2)
        A = np.array(form_matrix(k1, k2, k3))
        X = rng.standard_normal(2)
        q = X @ A @ X / (X @ X)
        ray_viol += not (mu["mu_minus"] * (1 - 1e-12) <= q <= mu["mu_plus"] * (1 + 1e-12))
        x = np.abs(rng.standard_normal(2))
        Q = (k2 * x[0] - k3 * x[1]) ** 2 + (k1 * x[1]) ** 2
        q_viol += Q < mu["mu_minus"] * (x @ x) * (1 - 1e-12)
        mono_viol += coercivity_constant(k1 * 1.5, k2, k3) < coercivity_constant(k1, k2, k3) * (1 - 1e-14)
    inputs = {"n": n}
    return [
        CheckResult("constants", "eigen_trace_identity", e_sum <= REL_TOL, e_sum, REL_TOL, inputs),
        CheckResult("constants", "eigen_determinant_identity", e_prod <= REL_TOL, e_prod, REL_TOL, inputs),
        CheckResult("constants", "rayleigh_bounds", ray_viol == 0, ray_viol, 0, inputs),
        CheckResult("constants", "q_lower_bound", q_viol == 0, q_viol, 0, inputs),
        CheckResult("constants", "beta1_monotone_in_k1", mono_viol == 0, mono_viol, 0, inputs),
    ]


def discrete_ellipticity(cfg: StudyConfig, delta: float = 0.25, theta: Optional[float] = None,
                         samples: int = 200) -> CheckResult:
    """``|B(u,u)| >= C' |u|_{H1}^2`` for random discrete ``u`` on a coarse mesh."""
    params = cfg.params()
    theta = float(cfg.raw["constants"]["theta"]) if theta is None else theta
    mesh = case_mesh(cfg, delta)
    A = fem.conductivity(mesh, params.A)
    alpha = fem.MaterialField(A, np.ones(mesh.element_count)).alpha
    C = regularized_ellipticity_constant(alpha, params.tau, params.omega, theta)["C_prime"]
    eps = _eps_field(mesh, params, outside_imag=theta)
    rng = _rng(cfg, 4)
    fields = fem.random_smooth_fields(mesh, samples // 2, rng, dirichlet=True)
    bnd = mesh.grid.boundary_mask()
    for _ in range(samples - len(fields)):
        v = rng.standard_normal(mesh.node_count) + 1j * rng.standard_normal(mesh.node_count)
        v[bnd] = 0.0
        fields.append(fem.NodalField(v, mesh))
    ratios = np.array([abs(regularized_form_value(v.values, mesh, A, eps, params.omega)) /
                       (C * h1_seminorm_sq(v.values, mesh)) for v in fields])
    viol = int(np.sum(ratios < 1 - 1e-12))
    return CheckResult("constants", "discrete_ellipticity", viol == 0,
                       {"violations": viol, "min_ratio": float(ratios.min()), "C_prime": C}, ">= 1",
                       {"delta": delta, "theta": theta, "samples": samples})


# -- fem ---------------------------------------------------------------------------------

def manufactured_solution(mode: DimensionMode, half_height: float = 1.0, omega: float = 1.0,
                          eps: complex = 1.0 + 0.5j, amplitude: complex = 1.0 + 0.5j) -> dict:
    """Closed form ``u = c prod sin(pi x_i) sin(pi (x3 + L) / (2L))`` with its source.

    ``-div grad u - omega^2 eps u = i omega f`` holds with the returned ``f``;
    ``u`` vanishes on the whole box boundary.
    """
    dp = mode.in_plane_dims
    L = half_height
    k3 = math.pi / (2 * L)
    lam = dp * math.pi**2 + k3**2

    def factors(x):
        s = [np.sin(math.pi * x[:, i]) for i in range(dp)] + [np.sin(k3 * (x[:, -1] + L))]
        c = [math.pi * np.cos(math.pi * x[:, i]) for i in range(dp)] + [k3 * np.cos(k3 * (x[:, -1] + L))]
        return s, c

    def u(x):
        s, _ = factors(x)
        return amplitude * np.prod(s, axis=0)

    def grad(x):
        s, c = factors(x)
        g = []
        for i in range(dp + 1):
            g.append(amplitude * c[i] * np.prod([s[j] for j in range(dp + 1) if j != i], axis=0))
        return np.stack(g, axis=-1)

    def f(x):
        return (lam - omega**2 * eps) * u(x) / (1j * omega)

    return {"u": u, "grad": grad, "f": f, "lambda": lam, "omega": omega, "eps": eps}


def manufactured_rates(mode: DimensionMode = DimensionMode.REDUCED_2D, levels=None) -> dict:
    """Solve on three uniform refinements; return errors and fitted orders in ``1/h``."""
    levels = levels or ([8, 16, 32] if mode is DimensionMode.REDUCED_2D else [4, 8, 16])
    dp = mode.in_plane_dims
    spec = DomainSpec((1.0,) * dp, 1.0, mode)
    ms = manufactured_solution(mode)
    hs, e_l2, e_h1 = [], [], []
    for n in levels:
        mesh = box_mesh(spec, [n] * dp + [2 * n])
        mat = fem.MaterialField(fem.conductivity(mesh, None), np.full(mesh.element_count, ms["eps"]))
        system = fem.assemble(mesh, mat, ms["omega"], ms["f"])
        u = fem.solve(system).field
        err = fem.error_norms(u, ms["u"], ms["grad"])
        hs.append(1.0 / n)
        e_l2.append(err["l2"])
        e_h1.append(err["h1"])
    return {"h": hs, "l2": e_l2, "h1": e_h1, "order_l2": fit_loglog(hs, e_l2)["slope"],
            "order_h1": fit_loglog(hs, e_h1)["slope"]}


def fem_suite(cfg: StudyConfig, delta: float = 0.25, theta: float = 0.01) -> list:
    out = []
    mode = cfg.domain.mode
    r = manufactured_rates(mode)
    out.append(CheckResult("fem", "manufactured_order_l2", r["order_l2"] >= 1.8, r["order_l2"], ">= 1.8",
                           {"h": r["h"], "errors": r["l2"]}))
    out.append(CheckResult("fem", "manufactured_order_h1", r["order_h1"] >= 0.9, r["order_h1"], ">= 0.9",
                           {"h": r["h"], "errors": r["h1"]}))

    params = cfg.params()
    mesh = case_mesh(cfg, delta)
    # coefficient invariants on sampled elements
    rng = _rng(cfg, 5)
    A = fem.conductivity(mesh, params.A)
    mat = fem.MaterialField(A, _eps_field(mesh, params))
    idx = rng.choice(mesh.element_count, size=min(500, mesh.element_count), replace=False)
    xi = rng.standard_normal((idx.size, A.shape[1]))
    quad = np.einsum("ei,eij,ej->e", xi, A[idx], xi)
    ok_alpha = bool(np.all(quad >= mat.alpha * np.sum(xi**2, 1) * (1 - 1e-12)))
    grid_el = mesh.regions == Region.GRID
    ok_eps = bool(np.all(mat.eps.imag >= 0) and np.all((mat.eps.imag > 0) == grid_el))
    out.append(CheckResult("fem", "coefficient_invariants", ok_alpha and ok_eps,
                           {"alpha_bound": ok_alpha, "eps_support": ok_eps}, True, {"delta": delta}))

    rep = solve_delta_problem(mesh, params, check_resonance=False)
    e = abs(rep.extra["absorbed"] - rep.extra["source_work"]) / max(abs(rep.extra["absorbed"]), 1e-300)
    out.append(CheckResult("fem", "energy_identity_delta", e <= ENERGY_TOL, e, ENERGY_TOL,
                           {"delta": delta, "absorbed": rep.extra["absorbed"]}))
    reg = solve_regularized(mesh, params, theta)
    e = abs(reg.extra["absorbed"] - reg.extra["source_work"]) / max(abs(reg.extra["absorbed"]), 1e-300)
    out.append(CheckResult("fem", "energy_identity_theta", e <= ENERGY_TOL, e, ENERGY_TOL,
                           {"delta": delta, "theta": theta}))
    grad, bound = reg.norms["h1_semi"], reg.extra["grad_bound"]
    h1, h1_bound = reg.norms["h1"], bound * cfg.domain.diameter
    out.append(CheckResult("fem", "apriori_bounds_theta", grad <= bound and h1 <= h1_bound,
                           {"grad": grad, "grad_bound": bound, "h1": h1, "h1_bound": h1_bound,
                            "slack": bound / grad if grad > 0 else None}, "measured <= bound",
                           {"delta": delta, "theta": theta}))

    lay = fem.check_layer_inequalities(fem.random_smooth_fields(mesh, 20, rng), mesh)
    out.append(CheckResult("fem", "layer_strip_inequality", lay["strip_violations"] == 0,
                           {"violations": lay["strip_violations"], "max_ratio1": lay["max_ratio1"],
                            "max_ratio2": lay["max_ratio2"]}, 0, {"delta": delta, "fields": 20}))
    return out


# -- cell --------------------------------------------------------------------------------

def cell_suite(cfg: StudyConfig) -> list:
    p = cfg.params()
    A0 = constant_A0(cfg)
    if A0 is None:
        return [CheckResult("cell", "constant_A", False, "variable A", "constant A", {})]
    c = cfg.raw["cell"]
    res, zeta, flux = int(c["resolution"]), float(c["zeta"]), bool(c.get("interface_flux", True))
    out = []
    for use_flux in sorted({False, flux}):
        tag = "flux" if use_flux else "display"
        sol = solve_cell_problem(cfg.pattern, A0, p.omega, p.eps2, zeta, res, interface_flux=use_flux)
        half = solve_cell_problem(cfg.pattern, A0, p.omega, p.eps2, zeta / 2, res, interface_flux=use_flux)
        ei = sol.energy_identity()
        e = max(abs(ei["rel_re"]), abs(ei["rel_im"]))
        fit = sol.decay_fit
        change = abs(sol.V_plus_inf - half.V_plus_inf) / abs(sol.V_plus_inf)
        inputs = {"zeta": zeta, "resolution": res, "interface_flux": use_flux}
        out += [
            CheckResult("cell", f"periodicity[{tag}]", sol.periodicity_defect() == 0.0,
                        sol.periodicity_defect(), 0.0, inputs),
            CheckResult("cell", f"energy_identity[{tag}]", e <= ENERGY_TOL, e, ENERGY_TOL, inputs),
            CheckResult("cell", f"decay_fit[{tag}]", fit.c > 0 and fit.r_squared >= 0.95,
                        {"c": fit.c, "r_squared": fit.r_squared}, "c > 0, r2 >= 0.95", inputs),
            CheckResult("cell", f"zeta_doubling[{tag}]", change < 1e-3, change, 1e-3, inputs),
        ]
    return out


# -- resonance ---------------------------------------------------------------------------

def resonance_suite(cfg: StudyConfig, h: float = 1.0 / 64) -> list:
    """Unit-square Dirichlet eigenvalue and the accept/reject behaviour of the gap check."""
    mode = cfg.domain.mode
    dp = mode.in_plane_dims
    n = int(round(1 / h))
    # Omega+ is the unit square (cube) when L = 1
    spec = DomainSpec((1.0,) * dp, 1.0, mode)
    if mode is DimensionMode.FULL_3D:
        n = min(n, 16)
    mesh = box_mesh(spec, [n] * dp + [2 * n])
    exact = (dp + 1) * math.pi**2
    probe = eigen_gap_check(mesh, None, 1.0, 1.0)
    lam1 = probe.eigenvalues[0]
    rel = abs(lam1 - exact) / exact
    tol = 0.01
    reject = eigen_gap_check(mesh, None, 1.0, lam1)
    return [
        CheckResult("resonance", "lambda1_unit_square", rel <= tol, {"lambda1": lam1, "exact": exact, "rel": rel},
                    tol, {"h": 1.0 / n}),
        CheckResult("resonance", "reject_at_lambda1", reject.conclusive and not reject.passed, reject.gap,
                    "gap < 0.05 lambda1", {"target": lam1}),
        CheckResult("resonance", "accept_at_one", probe.conclusive and probe.passed, probe.gap,
                    ">= 0.05 lambda1", {"target": 1.0}),
    ]


# -- driver ------------------------------------------------------------------------------

SUITES: dict = {
    "unfolding": unfolding_suite,
    "coercivity": coercivity_suite,
    "eigen_identities": eigen_identity_suite,
    "ellipticity": lambda cfg: [discrete_ellipticity(cfg)],
    "fem": fem_suite,
    "cell": cell_suite,
    "resonance": resonance_suite,
}


def junit_xml(results: list) -> str:
    suites = ET.Element("testsuites")
    by_suite: dict = {}
    for r in results:
        by_suite.setdefault(r.suite, []).append(r)
    for name, rs in by_suite.items():
        s = ET.SubElement(suites, "testsuite", name=name, tests=str(len(rs)),
                          failures=str(sum(not r.passed for r in rs)))
        for r in rs:
            tc = ET.SubElement(s, "testcase", classname=f"cage_homog.check.{name}", name=r.name)
            if not r.passed:
                fail = ET.SubElement(tc, "failure", message=f"value={r.value!r} tolerance={r.tolerance!r}")
                fail.text = repr(r.inputs)
    return ET.tostring(suites, encoding="unicode")


def run_check_ops(cfg: StudyConfig, suites: Optional[list] = None) -> dict:
    """Run the invariant suites; writes ``check.json`` and ``check.xml``.

    Returns ``{"passed": bool, "results": [...]}``.  A suite that raises
    is recorded as one failed check carrying the exception text.
    """
    names = suites or list(cfg.raw["check"].get("suites", SUITES))
    results = []
    for name in names:
        t0 = time.perf_counter()
        try:
            rs = SUITES[name](cfg)
        except Exception as exc:  # noqa: BLE001 - reported as a failed check
            rs = [CheckResult(name, "suite_error", False, f"{type(exc).__name__}: {exc}", None, {})]
        dt = time.perf_counter() - t0
        for r in rs:
            r.seconds = dt / len(rs)
        results += rs
    report = {"passed": all(r.passed for r in results), "n_checks": len(results),
              "n_failed": sum(not r.passed for r in results),
              "results": [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in results]}
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_json(report, out / "check.json")
    (out / "check.xml").write_text(junit_xml(results) + "\n")
    report["objects"] = results
    return report

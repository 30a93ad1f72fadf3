"""The delta-problem, its theta-regularization, the limit problem and the resonance probe."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from . import fem
from .geometry import Region, StructuredMesh
from .lattice import mass_matrix, stiffness_matrix


class ResonanceError(RuntimeError):
    def __init__(self, report: "GapReport"):
        self.report = report
        super().__init__(
            f"omega^2*eps3 too close to the Dirichlet spectrum on the upper bulk "
            f"(gap {report.gap:.4g}, nearest eigenvalue {report.nearest_eigenvalue:.6g})"
        )


@dataclass(frozen=True)
class BandSource:
    """``f = amplitude`` on ``O x [lo, hi]``, zero elsewhere."""

    lo: float
    hi: float
    amplitude: complex = 1.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x3 = np.asarray(x)[..., -1]
        return np.where((x3 >= self.lo) & (x3 <= self.hi), self.amplitude, 0.0)

    @property
    def breakpoints(self) -> tuple:
        return (self.lo, self.hi)

    def scaled(self, s: complex) -> "BandSource":
        return BandSource(self.lo, self.hi, self.amplitude * s)


@dataclass
class PhysicalParams:
    omega: float
    eps1: float
    eps2: float
    eps3: float
    A: object = None
    source: Optional[Callable] = None

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if min(self.eps1, self.eps3) <= 0 or self.eps2 < 0:
            raise ValueError("eps1, eps3 must be positive and eps2 non-negative")

    @property
    def tau(self) -> float:
        return max(self.eps1, self.eps3)


@dataclass
class GapReport:
    passed: bool
    gap: float
    nearest_eigenvalue: float
    eigenvalues: list = field(default_factory=list)
    conclusive: bool = True
    target: float = 0.0


@dataclass
class SolveReport:
    field: fem.NodalField
    norms: dict
    residual: float
    wall_time: float
    near_singular: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = False) -> dict:
        out = {"norms": dict(sorted(self.norms.items())), "residual": self.residual,
               "near_singular": self.near_singular, "delta": self.field.mesh.delta}
        out.update(self.extra)
        if timing:
            out["wall_time"] = self.wall_time
        return out


def source_norm(mesh: StructuredMesh, source) -> float:
    """``||f||_{L2(Omega)}`` by the assembly quadrature."""
    if source is None:
        return 0.0
    pts, w = mesh.grid.quadrature_points()
    fq = np.asarray(source(pts.reshape(-1, mesh.ndim))).reshape(w.shape)
    return float(np.sqrt(np.sum(w * np.abs(fq) ** 2)))


def solution_norms(u: fem.NodalField) -> dict:
    mesh = u.mesh
    whole = fem.norms(u, mesh, "ALL")
    grid = fem.norms(u, mesh, "GRID")["l2"]
    out = {
        "h1": whole["h1"],
        "l2": whole["l2"],
        "h1_semi": whole["h1_semi"],
        "l2_grid": grid,
        "l2_layer": fem.norms(u, mesh, "LAYER")["l2"],
        # transmitted energy on the fixed lower half O x (-L, 0); the layer-dependent
        # lower bulk O x (-L, -delta/2) is reported separately
        "l2_minus": float(np.sqrt(fem.slab_norms(u, -mesh.spec.half_height, 0.0, mesh)["l2_sq"])),
        "l2_bulk_minus": fem.norms(u, mesh, "BULK_MINUS")["l2"],
        "l2_gamma": fem.trace_l2(u, 0.0, mesh),
    }
    if mesh.delta > 0:
        out["scaled_grid"] = grid / mesh.delta
    return out


def _eps_field(mesh: StructuredMesh, params: PhysicalParams, outside_imag: float = 0.0,
               contrast: bool = True) -> np.ndarray:
    eps = np.full(mesh.element_count, params.eps3 + 1j * outside_imag, dtype=complex)
    if contrast:
        g = mesh.regions == Region.GRID
        eps[g] = params.eps1 + 1j * params.eps2 / mesh.delta**2
    return eps


def _run(mesh, params, eps, dirichlet=None, check_support=False) -> tuple:
    material = fem.MaterialField(fem.conductivity(mesh, params.A), eps)
    t0 = time.perf_counter()
    system = fem.assemble(mesh, material, params.omega, params.source, dirichlet=dirichlet,
                          check_support=check_support)
    result = fem.solve(system)
    return system, result, time.perf_counter() - t0


def energy_terms(u: fem.NodalField, system: fem.SparseHermitianSystem, omega: float) -> dict:
    """``int f conj(u)`` consistent with the assembled right-hand side."""
    return {"f_ubar": complex(np.vdot(u.values, system.load))}


def solve_delta_problem(mesh: StructuredMesh, params: PhysicalParams, *, check_resonance: bool = True,
                        gap_threshold: float = 0.05, check_support: bool = False) -> SolveReport:
    """Solve the shielded Helmholtz problem with ``eps = eps1 + i eps2/delta^2`` on the grid."""
    if check_resonance:
        rep = eigen_gap_check(mesh, params.A, params.omega, params.eps3, threshold_fraction=gap_threshold)
        if rep.conclusive and not rep.passed:
            raise ResonanceError(rep)
    system, result, wall = _run(mesh, params, _eps_field(mesh, params), check_support=check_support)
    u = result.field
    nrm = solution_norms(u)
    f_ubar = np.vdot(u.values, system.load)
    extra = {
        "f_norm": source_norm(mesh, params.source),
        # omega^2 eps2/delta^2 ||u||^2_grid + omega Re int f conj(u) == 0
        "absorbed": params.omega**2 * params.eps2 / mesh.delta**2 * nrm["l2_grid"] ** 2,
        "source_work": -params.omega * float(np.real(f_ubar)),
    }
    return SolveReport(u, nrm, result.residual, wall, result.near_singular, extra)


def solve_regularized(mesh: StructuredMesh, params: PhysicalParams, theta: float) -> SolveReport:
    """Add ``i theta`` to the zero-order coefficient off the grid (``0 < theta < eps2/delta^2``)."""
    upper = params.eps2 / mesh.delta**2
    if not 0.0 < theta < upper:
        raise ValueError(f"theta must lie in (0, eps2/delta^2 = {upper:.6g})")
    system, result, wall = _run(mesh, params, _eps_field(mesh, params, outside_imag=theta))
    u = result.field
    nrm = solution_norms(u)
    off_grid = np.flatnonzero(mesh.regions != Region.GRID)
    l2_off = mesh.grid.squared_norms(u.values, off_grid)["l2"]
    f_ubar = np.vdot(u.values, system.load)
    f_norm = source_norm(mesh, params.source)
    mat = fem.MaterialField(fem.conductivity(mesh, params.A), np.ones(mesh.element_count))
    extra = {
        "theta": theta,
        "f_norm": f_norm,
        "absorbed": params.omega**2 * (theta * l2_off + upper * nrm["l2_grid"] ** 2),
        "source_work": -params.omega * float(np.real(f_ubar)),
        "grad_bound": params.tau * params.omega / (mat.alpha * theta) * f_norm,
    }
    return SolveReport(u, nrm, result.residual, wall, result.near_singular, extra)


def limit_dirichlet_mask(mesh: StructuredMesh) -> np.ndarray:
    return mesh.node_x3() <= 0.0


def solve_limit(mesh: StructuredMesh, params: PhysicalParams, *, check_resonance: bool = True,
                gap_threshold: float = 0.05) -> SolveReport:
    """Helmholtz on ``O x (0, L)`` with zero Dirichlet data on Gamma, extended by zero below."""
    if check_resonance:
        rep = eigen_gap_check(mesh, params.A, params.omega, params.eps3, threshold_fraction=gap_threshold)
        if rep.conclusive and not rep.passed:
            raise ResonanceError(rep)
    eps = _eps_field(mesh, params, contrast=False)
    system, result, wall = _run(mesh, params, eps, dirichlet=limit_dirichlet_mask(mesh))
    u = result.field
    u.values[limit_dirichlet_mask(mesh)] = 0.0
    nrm = solution_norms(u)
    nrm.pop("scaled_grid", None)
    return SolveReport(u, nrm, result.residual, wall, result.near_singular,
                       {"f_norm": source_norm(mesh, params.source)})


def eigen_gap_check(mesh: StructuredMesh, A_spec, omega: float, eps3: float, k: int = 6,
                    threshold_fraction: float = 0.05) -> GapReport:
    """Distance of ``omega^2 eps3`` to the Dirichlet spectrum of ``-div(A grad)`` on the upper bulk.

    Uses shift-invert Lanczos on the real stiffness/mass pair of ``mesh``
    restricted to ``x3 > 0``; passes iff the gap is at least
    ``threshold_fraction * lambda_1``.
    """
    grid = mesh.grid
    mask = grid.boundary_mask() | limit_dirichlet_mask(mesh)
    free = np.flatnonzero(~mask)
    S = stiffness_matrix(grid, fem.conductivity(mesh, A_spec))[free][:, free].tocsc()
    M = mass_matrix(grid, np.ones(grid.n_elements))[free][:, free].tocsc()
    target = omega**2 * eps3
    k = min(k, free.size - 2)
    # fixed start vector: ARPACK otherwise draws a random one and the last digits vary run to run
    v0 = np.random.default_rng(12345).standard_normal(free.size)
    try:
        lam = np.sort(spla.eigsh(S, k=k, M=M, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False))
        if target > lam[-1]:
            near = spla.eigsh(S, k=k, M=M, sigma=target, which="LM", v0=v0, return_eigenvectors=False)
            lam = np.unique(np.concatenate([lam, near]))
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        if isinstance(exc, RuntimeError) and "singular" in str(exc).lower():
            return GapReport(False, 0.0, target, [], True, target)
        return GapReport(False, float("nan"), float("nan"), [], False, target)
    j = int(np.argmin(np.abs(lam - target)))
    gap = float(abs(lam[j] - target))
    return GapReport(gap >= threshold_fraction * lam[0], gap, float(lam[j]), lam.tolist(), True, target)


def interpolate_field(u: fem.NodalField, target: StructuredMesh) -> fem.NodalField:
    """Multilinear nodal interpolation of ``u`` onto the nodes of ``target``."""
    src = u.mesh.grid
    interp = RegularGridInterpolator(src.axes, u.values.reshape(src.shape), method="linear",
                                     bounds_error=False, fill_value=None)
    pts = target.grid.nodes.copy()
    for k, a in enumerate(src.axes):
        pts[:, k] = np.clip(pts[:, k], a[0], a[-1])
    return fem.NodalField(interp(pts), target)

"""Periodic strip cell problem for the interface corrector ``V``.

The strip is the in-plane unit cell times ``(-zeta, zeta)``, periodic in the
in-plane directions with natural conditions at ``z3 = +-zeta``.  ``V`` solves

    int A0 grad V . grad conj(psi) - i w^2 e2 int_{Y0} V conj(psi)
        = i w^2 e2 int_{Y0+} z3 conj(psi)

for all periodic test functions ``psi``; ``Y0+`` is the upper half of the grid
cell.  The corrector of the layer is ``V(z) du/dx3(x', 0)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .geometry import LayerPattern, write_vtk
from .lattice import TensorGrid, load_vector, mass_matrix, stiffness_matrix


@dataclass
class StripMesh:
    grid: TensorGrid
    zeta: float
    pattern: LayerPattern
    dof_map: np.ndarray  # node -> periodic unknown
    grid_elements: np.ndarray  # bool per element, True in Y0

    @property
    def n_dofs(self) -> int:
        return int(self.dof_map.max()) + 1

    @property
    def in_plane_dims(self) -> int:
        return self.grid.ndim - 1

    @property
    def z3(self) -> np.ndarray:
        return self.grid.axes[-1]

    def plane_index(self, z: float) -> int:
        j = int(np.argmin(np.abs(self.z3 - z)))
        if abs(self.z3[j] - z) > 1e-9 * max(1.0, abs(z)):
            raise ValueError(f"z3 = {z} is not a node plane of the strip")
        return j

    def partners(self) -> tuple:
        """Pairs ``(node, partner)`` identified by periodicity."""
        idx = np.indices(self.grid.shape).reshape(self.grid.ndim, -1)
        res = self.grid.shape[0] - 1
        on_edge = np.zeros(self.grid.n_nodes, dtype=bool)
        for k in range(self.in_plane_dims):
            on_edge |= idx[k] == res
        nodes = np.flatnonzero(on_edge)
        img = idx[:, nodes].copy()
        img[: self.in_plane_dims][img[: self.in_plane_dims] == res] = 0
        return nodes, np.ravel_multi_index(tuple(img), self.grid.shape)


def strip_z_axis(zeta: float, resolution: int, grading_ratio: float = 1.0, core: float = 1.0) -> np.ndarray:
    """``z3`` nodes: spacing ``1/resolution`` on ``|z3| <= core``, optionally growing beyond."""
    h = 1.0 / resolution
    if grading_ratio == 1.0:
        n = int(round(zeta * resolution))
        if abs(n * h - zeta) > 1e-9:
            raise ValueError("zeta must be a multiple of 1/resolution for a uniform strip")
        half = h * np.arange(n + 1)
    else:
        half = list(h * np.arange(int(round(core * resolution)) + 1))
        step = h
        while half[-1] < zeta - 1e-12:
            step *= grading_ratio
            half.append(min(half[-1] + step, zeta))
        half = np.array(half)
        if zeta - half[-2] < 0.25 * step:
            half = np.delete(half, -2)
    return np.concatenate([-half[::-1], half[1:]])


def build_strip(pattern: LayerPattern, zeta: float = 8.0, resolution: int = 8,
                grading_ratio: float = 1.0) -> StripMesh:
    if resolution % pattern.resolution:
        raise ValueError("strip resolution must be a multiple of the pattern raster resolution")
    if resolution % 2:
        raise ValueError("strip resolution must be even so that z3 = 0, +-1/2 are node planes")
    dp = pattern.in_plane_dims
    axes = [np.linspace(0.0, 1.0, resolution + 1)] * dp + [strip_z_axis(zeta, resolution, grading_ratio)]
    grid = TensorGrid(axes)
    idx = np.indices(grid.shape).reshape(grid.ndim, -1)
    red = idx.copy()
    red[:dp] %= resolution
    red_shape = (resolution,) * dp + (grid.shape[-1],)
    dof_map = np.ravel_multi_index(tuple(red), red_shape)
    c = grid.centroids
    in_y0 = (np.abs(c[:, -1]) < 0.5) & pattern.contains(c[:, :-1])
    return StripMesh(grid, float(zeta), pattern, dof_map, in_y0)


@dataclass
class DecayFit:
    C: float
    c: float
    r_squared: float
    windows: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    skipped: bool = False
    flag: str = ""


@dataclass
class CellSolution:
    V: np.ndarray  # nodal values on strip.grid (periodic pairs equal)
    strip: StripMesh
    omega: float
    eps2: float
    A0: np.ndarray
    rhs_scale: float = 1.0
    residual: float = 0.0
    rcond: float = 1.0
    ill_conditioned: bool = False
    pinned: bool = False
    decay_fit: Optional[DecayFit] = None
    interface_flux: bool = False

    @classmethod
    def from_values(cls, V, strip: StripMesh, omega=1.0, eps2=0.0, A0=None) -> "CellSolution":
        """Wrap arbitrary nodal values (synthetic fields for the post-processing tools)."""
        d = strip.grid.ndim
        A0 = np.eye(d) if A0 is None else np.asarray(A0, dtype=float)
        return cls(np.asarray(V, dtype=complex), strip, omega, eps2, A0)

    def slice_mean(self, z: float) -> complex:
        """Average of ``V`` over the node plane ``z3 = z``."""
        j = self.strip.plane_index(z)
        plane = self.V.reshape(self.strip.grid.shape)[..., j]
        pg = TensorGrid(self.strip.grid.axes[:-1])
        return complex(pg.integrate(plane.ravel()))

    @property
    def V_plus_inf(self) -> complex:
        return self.slice_mean(self.strip.z3[-1])

    @property
    def V_minus_inf(self) -> complex:
        return self.slice_mean(self.strip.z3[0])

    def gradient_energy(self, lo: float = -np.inf, hi: float = np.inf) -> float:
        """``int |A0^(1/2) grad V|^2`` over elements with ``lo <= z3`` range ``<= hi`` (node planes)."""
        g = self.strip.grid
        z0 = g.origins[:, -1]
        z1 = z0 + g.sizes[:, -1]
        elems = np.flatnonzero((z0 >= lo - 1e-12) & (z1 <= hi + 1e-12))
        if elems.size == 0:
            return 0.0
        _, grads = g.evaluate(self.V, elements=elems)
        _, w = g.quadrature_points(elements=elems)
        dens = np.real(np.sum((grads @ self.A0) * np.conj(grads), axis=-1))
        return float(np.sum(w * dens))

    def energy_identity(self) -> dict:
        """Real and imaginary parts of the weak form tested with ``psi = V``.

        With ``E = int A0 grad V . grad conj(V)``, ``M = w^2 e2 int_{Y0} |V|^2``
        and ``W = int_{Y0+} z3 conj(V)`` the identity reads
        ``E - i M - i s w^2 e2 W = 0`` (``s`` the RHS scale), i.e.
        ``E + s w^2 e2 Im W = 0`` and ``M + s w^2 e2 Re W = 0``.
        """
        g = self.strip.grid
        k = self.omega**2 * self.eps2
        E = self.gradient_energy()
        y0 = np.flatnonzero(self.strip.grid_elements)
        vals, _ = g.evaluate(self.V, elements=y0)
        pts, w = g.quadrature_points(elements=y0)
        M = k * float(np.sum(w * np.abs(vals) ** 2))
        up = pts[..., -1] > 0
        W = complex(np.sum(w * up * pts[..., -1] * np.conj(vals)))
        s = self.rhs_scale
        F = 0j
        if self.interface_flux:
            # extra right-hand side a33 int_{z3=0} conj(V)
            F = self.A0[-1, -1] * np.conj(self.slice_mean(0.0))
        re = E + s * k * W.imag - s * F.real
        im = M + s * k * W.real + s * F.imag
        scale = max(E, M, abs(s * k * W), abs(s * F), 1e-300)
        return {"E": E, "M": M, "W": W, "F": F, "re": re, "im": im,
                "rel_re": abs(re) / scale, "rel_im": abs(im) / scale}

    def periodicity_defect(self) -> float:
        nodes, partner = self.strip.partners()
        if nodes.size == 0:
            return 0.0
        return float(np.max(np.abs(self.V[nodes] - self.V[partner])))

    def summary(self) -> dict:
        fit = self.decay_fit or decay_rate(self)
        return {
            "V_plus_inf": [self.V_plus_inf.real, self.V_plus_inf.imag],
            "V_minus_inf": [self.V_minus_inf.real, self.V_minus_inf.imag],
            "C": fit.C, "c": fit.c, "r_squared": fit.r_squared,
            "zeta": self.strip.zeta, "omega": self.omega, "eps2": self.eps2,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)

    def write_vtk(self, path) -> None:
        from .geometry import Region, StructuredMesh, DomainSpec, DimensionMode

        g = self.strip.grid
        mode = DimensionMode.REDUCED_2D if g.ndim == 2 else DimensionMode.FULL_3D
        spec = DomainSpec((1.0,) * (g.ndim - 1), self.strip.zeta, mode)
        regions = np.where(self.strip.grid_elements, Region.GRID, Region.HOLE).astype(np.int8)
        mesh = StructuredMesh(spec, 1.0, (1,) * (g.ndim - 1), g.shape[0] - 1, self.strip.pattern, g, regions)
        write_vtk(mesh, path, {"V_real": self.V.real, "V_imag": self.V.imag})


def solve_cell_problem(pattern: LayerPattern, A0=None, omega: float = 1.0, eps2: float = 1.0,
                       zeta: float = 8.0, resolution: int = 8, *, rhs_scale: float = 1.0,
                       grading_ratio: float = 1.0, element_order: Optional[np.ndarray] = None,
                       interface_flux: bool = False, rcond_threshold: float = 1e-12) -> CellSolution:
    """Solve for ``V`` on the truncated periodic strip.

    ``rhs_scale`` multiplies the right-hand side only (linearity probe).
    ``interface_flux`` adds ``a33 int_{z3=0} conj(psi)`` to the right-hand side:
    the flux of the limit solution through ``Gamma``, which a test function
    that does not vanish on ``Gamma`` picks up.  With it ``z3^+ + V`` has no
    flux jump at ``z3 = 0`` and ``V du/dx3`` matches the unfolded
    ``(u_delta - u)/delta``; without it ``V`` solves the bare cell problem.
    ``element_order`` permutes the assembly loop (determinism probe).
    With ``eps2 == 0`` one node is pinned to remove the constant null space.
    """
    if zeta < 2:
        raise ValueError("zeta must be at least 2")
    if not pattern.raster.any():
        raise ValueError("pattern has an empty grid")
    strip = build_strip(pattern, zeta, resolution, grading_ratio)
    g = strip.grid
    d = g.ndim
    A0 = np.eye(d) if A0 is None else np.asarray(A0, dtype=float)
    if A0.shape != (d, d) or not np.allclose(A0, A0.T) or np.linalg.eigvalsh(A0).min() <= 0:
        raise ValueError("A0 must be a symmetric positive definite matrix")
    order = np.arange(g.n_elements) if element_order is None else np.asarray(element_order)
    k = omega**2 * eps2
    dm, n = strip.dof_map, strip.n_dofs
    S = stiffness_matrix(g, np.broadcast_to(A0, (g.n_elements, d, d)), dm, n, elements=order)
    y0 = order[strip.grid_elements[order]]
    M = mass_matrix(g, np.ones(g.n_elements), dm, n, elements=y0)
    K = (S - 1j * k * M).tocsc()
    upper = y0[g.centroids[y0, -1] > 0]
    b = 1j * k * rhs_scale * load_vector(g, lambda x: x[:, -1], dm, n, elements=upper).astype(complex)
    if interface_flux:
        b += rhs_scale * A0[-1, -1] * _plane_load(strip, 0.0)
    pinned = eps2 == 0
    if pinned:
        keep = np.arange(1, n)
        K = K[keep][:, keep].tocsc()
        b = b[keep]
    lu = spla.splu(K, permc_spec="COLAMD")
    x = lu.solve(b)
    residual = float(np.linalg.norm(K @ x - b) / np.linalg.norm(b)) if np.linalg.norm(b) > 0 else 0.0
    from .fem import _inverse_growth

    growth = _inverse_growth(lu.solve, K.shape[0])
    rcond = 1.0 / (spla.norm(K, 1) * growth) if growth > 0 else 0.0
    if pinned:
        x = np.concatenate([[0.0], x])
    sol = CellSolution(x[dm], strip, omega, eps2, A0, rhs_scale, residual, rcond,
                       rcond < rcond_threshold, pinned, interface_flux=interface_flux)
    sol.decay_fit = decay_rate(sol)
    return sol


def _plane_load(strip: StripMesh, z: float) -> np.ndarray:
    """``int_{z3=z} phi_a dz'`` for every periodic unknown."""
    j = strip.plane_index(z)
    plane = TensorGrid(strip.grid.axes[:-1])
    w = load_vector(plane, lambda x: np.ones(len(x)))
    nodes = np.ravel_multi_index(tuple(np.indices(plane.shape).reshape(plane.ndim, -1)) + (np.full(plane.n_nodes, j),),
                                 strip.grid.shape)
    out = np.zeros(strip.n_dofs, dtype=complex)
    np.add.at(out, strip.dof_map[nodes], w)
    return out


def default_windows(strip: StripMesh, step: float = 0.25) -> list:
    """Node planes from ``z3 = 1`` to ``zeta - 1`` at ``step`` spacing."""
    out = []
    for w in np.arange(1.0, strip.zeta - 1.0 + 1e-9, step):
        j = int(np.argmin(np.abs(strip.z3 - w)))
        if abs(strip.z3[j] - w) < 1e-9 and w not in out:
            out.append(float(w))
    return out


def decay_rate(solution: CellSolution, windows: Optional[Sequence[float]] = None,
               floor: float = 1e-14) -> DecayFit:
    """Fit ``log E(z') = log C - c z'`` with ``E(z')`` the gradient energy above ``z'``.

    Tail energies below ``floor`` times the total energy are excluded (roundoff
    level).  Needs at least four retained windows; otherwise the fit is skipped
    and flagged.
    """
    windows = default_windows(solution.strip) if windows is None else list(windows)
    total = solution.gradient_energy()
    if total == 0:
        return DecayFit(0.0, 0.0, 0.0, windows, [], True, "zero field")
    top = solution.strip.z3[-1]
    energies = [solution.gradient_energy(w, top) for w in windows]
    keep = [(w, e) for w, e in zip(windows, energies) if e > floor * total]
    if len(keep) < 4:
        return DecayFit(0.0, 0.0, 0.0, windows, energies, True, "fewer than 4 windows above the floor")
    z, e = np.array(keep).T
    slope, intercept = np.polyfit(z, np.log(e), 1)
    pred = intercept + slope * z
    ss_res = float(np.sum((np.log(e) - pred) ** 2))
    ss_tot = float(np.sum((np.log(e) - np.log(e).mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    flag = "" if -slope > 0 else "non-positive decay rate: strip under-resolved"
    return DecayFit(float(np.exp(intercept)), float(-slope), r2, windows, energies, False, flag)


def weighted_energy(solution: CellSolution) -> float:
    """``int z3 |grad V|^2`` over the truncated strip (signed weight)."""
    g = solution.strip.grid
    _, grads = g.evaluate(solution.V)
    pts, w = g.quadrature_points()
    return float(np.sum(w * pts[..., -1] * np.sum(np.abs(grads) ** 2, axis=-1)))


def sample_profile(solution: CellSolution, z3: np.ndarray) -> np.ndarray:
    """``V`` on the in-plane nodes of one period times the given ``z3`` values.

    Linear interpolation in ``z3`` (exact when the lattices coincide); the
    result has shape ``(in-plane nodes..., len(z3))``.
    """
    s = solution.strip
    V = solution.V.reshape(s.grid.shape)
    z3 = np.asarray(z3, dtype=float)
    if np.any(z3 < s.z3[0] - 1e-12) or np.any(z3 > s.z3[-1] + 1e-12):
        raise ValueError("requested z3 outside the strip")
    j = np.clip(np.searchsorted(s.z3, z3, side="right") - 1, 0, s.z3.size - 2)
    t = (z3 - s.z3[j]) / (s.z3[j + 1] - s.z3[j])
    return V[..., j] * (1 - t) + V[..., j + 1] * t


def corrector_field(solution: CellSolution, u, mesh=None, template=None, g=None):
    """``V(z) du/dx3(x', 0)`` as an :class:`~cage_homog.unfolding.UnfoldedField` on ``mesh``.

    ``u`` is the limit solution; its trace derivative is resampled onto the
    in-plane nodes of ``mesh``.  ``template`` fixes the micro lattice (default:
    the cell ``|z3| <= 1/2`` of ``mesh``).  Pass ``g`` to reuse a trace
    derivative already on the in-plane nodes of ``mesh``.
    """
    from . import unfolding

    mesh = u.mesh if mesh is None else mesh
    if mesh.pattern is None or mesh.cells_per_period != solution.strip.grid.shape[0] - 1:
        raise ValueError("strip resolution must equal the mesh cells_per_period")
    if not np.array_equal(np.asarray(mesh.pattern.raster), np.asarray(solution.strip.pattern.raster)):
        raise ValueError("cell solution and mesh use different patterns")
    if template is None:
        template = unfolding.unfold(np.zeros(mesh.node_count), mesh, 0.5)
    if g is None:
        g_src = unfolding.normal_derivative_at_gamma(u)
        g = unfolding.resample_in_plane(g_src, u.mesh.grid.axes[:-1], mesh.grid.axes[:-1])
    gu = unfolding.unfold_in_plane(g, mesh)
    prof = sample_profile(solution, template.micro.axes[-1])  # (j..., nz)
    dp = len(mesh.n_periods)
    vals = gu.reshape(gu.shape + (1,)) * prof.reshape((1,) * dp + prof.shape)
    return template.like(vals.reshape(template.values.shape))

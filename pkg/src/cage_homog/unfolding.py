"""Discrete periodic unfolding across the thin layer.

On a structured mesh whose in-plane lattice has ``cells_per_period`` elements
per period, the unfolding

    T(phi)(x', z) = phi(delta [x'/delta] + delta z', delta z3)

maps node values to node values: micro node ``(j, m)`` of macro cell ``xi``
reads the mesh node with in-plane index ``xi * cpp + j`` and vertical index
``i0 + m``.  Since no interpolation is involved, the integral identity, the
norm bound and the gradient scaling hold to rounding error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import fem
from .geometry import StructuredMesh
from .lattice import TensorGrid, gauss_rule, q1_basis


@dataclass
class UnfoldedField:
    """Samples indexed by ``(macro cell..., micro node)``.

    ``values`` has shape ``n_cells + (n_micro,)`` where ``n_micro`` is the node
    count of ``micro`` (in-plane unit cell times ``z3 in [-zeta, zeta]``).
    ``source_index`` holds the flat mesh node read by every sample.
    """

    values: np.ndarray
    delta: float
    zeta: float
    micro: TensorGrid
    n_cells: tuple
    source_index: Optional[np.ndarray] = None
    plane_range: tuple = (0, 0)

    @property
    def n_in_plane(self) -> int:
        return len(self.n_cells)

    def flat(self) -> np.ndarray:
        """Values as ``(n_cells_total, n_micro)``."""
        return self.values.reshape(-1, self.micro.n_nodes)

    def like(self, values: np.ndarray) -> "UnfoldedField":
        return UnfoldedField(np.asarray(values, dtype=complex).reshape(self.values.shape), self.delta,
                             self.zeta, self.micro, self.n_cells, self.source_index, self.plane_range)

    def __sub__(self, other: "UnfoldedField") -> "UnfoldedField":
        return self.like(self.values - other.values)

    def __add__(self, other: "UnfoldedField") -> "UnfoldedField":
        return self.like(self.values + other.values)

    def __mul__(self, s) -> "UnfoldedField":
        return self.like(self.values * s)

    __rmul__ = __mul__

    def _micro_elements(self, z_range) -> Optional[np.ndarray]:
        if z_range is None:
            return None
        c = self.micro.centroids[:, -1]
        return np.flatnonzero((c > z_range[0]) & (c < z_range[1]))

    def evaluate(self, z_range=None):
        """Values ``(C, E, nq)`` and micro gradients ``(C, E, nq, d)`` on every macro cell."""
        elems = self._micro_elements(z_range)
        grid = self.micro
        ref, _ = gauss_rule(grid.ndim)
        b, g = q1_basis(ref, grid.ndim)
        conn, h = grid.connectivity, grid.sizes
        if elems is not None:
            conn, h = conn[elems], h[elems]
        ue = self.flat()[:, conn]
        vals = ue @ b.T
        nq, nb, d = g.shape
        grads = (ue @ g.transpose(1, 0, 2).reshape(nb, nq * d)).reshape(ue.shape[:2] + (nq, d))
        grads = grads / h[None, :, None, :]
        return vals, grads

    def integral(self, z_range=None) -> complex:
        """``int_{O x Y_zeta} T(phi) dx' dz`` (exact for Q1 samples)."""
        elems = self._micro_elements(z_range)
        conn, vol = self.micro.connectivity, self.micro.volumes
        if elems is not None:
            conn, vol = conn[elems], vol[elems]
        per_cell = np.sum(self.flat()[:, conn].mean(axis=2) * vol, axis=1)
        return complex(self.delta ** self.n_in_plane * per_cell.sum())

    def l2_norm(self, z_range=None) -> float:
        """``L2(O x Y)`` norm; ``z_range=(-0.5, 0.5)`` gives the cell, ``None`` the whole strip."""
        vals, _ = self.evaluate(z_range)
        _, w = self.micro.quadrature_points(elements=self._micro_elements(z_range))
        return float(np.sqrt(self.delta ** self.n_in_plane * np.sum(w[None] * np.abs(vals) ** 2)))


def _source_indices(mesh: StructuredMesh, i0: int, nz: int) -> np.ndarray:
    """Flat mesh node index for every (macro cell, micro node) pair."""
    cpp = mesh.cells_per_period
    dp = len(mesh.n_periods)
    grids = []
    for k, n in enumerate(mesh.n_periods):
        grids.append((np.arange(n)[:, None] * cpp + np.arange(cpp + 1)[None, :]))
    # broadcast to (n1, [n2,] cpp+1, [cpp+1,] nz)
    shape = tuple(mesh.n_periods) + (cpp + 1,) * dp + (nz,)
    idx = []
    for k in range(dp):
        g = grids[k]
        sh = [1] * len(shape)
        sh[k] = g.shape[0]
        sh[dp + k] = g.shape[1]
        idx.append(np.broadcast_to(g.reshape(sh), shape))
    vert = (i0 + np.arange(nz)).reshape((1,) * (2 * dp) + (nz,))
    idx.append(np.broadcast_to(vert, shape))
    flat = np.ravel_multi_index(tuple(idx), mesh.grid.shape)
    return flat.reshape(tuple(mesh.n_periods) + ((cpp + 1) ** dp * nz,))


def default_zeta(mesh: StructuredMesh, zeta: float = 8.0) -> float:
    """Largest ``z <= min(zeta, L/delta)`` with both ``x3 = +-delta z`` node planes."""
    x3, delta = mesh.x3, mesh.delta
    tol = 1e-9 * mesh.spec.half_height
    cap = min(zeta, mesh.spec.half_height / delta) * delta + tol
    ups = x3[(x3 > tol) & (x3 <= cap)]
    ok = [c for c in ups if np.min(np.abs(x3 + c)) <= tol]
    if not ok:
        raise ValueError("no symmetric node-aligned strip for unfolding")
    return float(max(ok) / delta)


def unfold(field, mesh: Optional[StructuredMesh] = None, zeta: Optional[float] = None,
           fault_injection: bool = False) -> UnfoldedField:
    """Re-index a nodal field into (macro cell, micro node) samples over ``|z3| <= zeta``.

    ``field`` is a :class:`~cage_homog.fem.NodalField` or a nodal array.
    ``zeta`` defaults to ``min(8, L/delta)``.  ``fault_injection`` shifts the
    index map of the first macro cell by one node; it exists only so the
    check suite can prove it detects a broken map.
    """
    if isinstance(field, fem.NodalField):
        mesh = field.mesh if mesh is None else mesh
        values = field.values
    else:
        values = np.asarray(field, dtype=complex)
    if mesh is None:
        raise ValueError("a mesh is required for raw nodal arrays")
    if mesh.pattern is None or mesh.delta <= 0:
        raise ValueError("unfolding needs a layered mesh")
    delta = mesh.delta
    zeta = default_zeta(mesh) if zeta is None else float(zeta)
    if zeta <= 0 or delta * zeta > mesh.spec.half_height * (1 + 1e-12):
        raise ValueError(f"need 0 < delta*zeta <= L (delta*zeta = {delta * zeta:.6g})")
    i0 = mesh.plane_index(-delta * zeta)
    i1 = mesh.plane_index(delta * zeta)
    nz = i1 - i0 + 1
    cpp = mesh.cells_per_period
    dp = len(mesh.n_periods)
    micro_axes = [np.linspace(0.0, 1.0, cpp + 1)] * dp + [mesh.x3[i0:i1 + 1] / delta]
    micro = TensorGrid(micro_axes)
    index = _source_indices(mesh, i0, nz)
    if fault_injection:
        index = index.copy()
        first = index.reshape(-1, index.shape[-1])[0]
        first[:] = np.roll(first, 1)
    return UnfoldedField(values[index], delta, zeta, micro, tuple(mesh.n_periods), index, (i0, i1))


def refold(unfolded: UnfoldedField, mesh: StructuredMesh, base=None) -> np.ndarray:
    """Inverse re-indexing: write samples back to mesh nodes (``base`` elsewhere, zero by default)."""
    out = np.zeros(mesh.node_count, dtype=complex) if base is None else np.array(base, dtype=complex)
    out[unfolded.source_index.ravel()] = unfolded.values.ravel()
    return out


def _strip_elements(mesh: StructuredMesh, unfolded: UnfoldedField) -> np.ndarray:
    i0, i1 = unfolded.plane_range
    ei = mesh.grid.element_index
    return np.flatnonzero((ei[:, -1] >= i0) & (ei[:, -1] < i1))


def check_integral_identity(field: fem.NodalField, mesh: Optional[StructuredMesh] = None,
                            zeta: Optional[float] = None, fault_injection: bool = False) -> dict:
    """Compare ``int T(phi)`` with ``(1/delta) int phi`` over the retained strip."""
    mesh = field.mesh if mesh is None else mesh
    T = unfold(field, mesh, zeta, fault_injection=fault_injection)
    lhs = T.integral()
    rhs = mesh.grid.integrate(field.values, _strip_elements(mesh, T)) / mesh.delta
    scale = max(abs(lhs), abs(rhs))
    return {"lhs": lhs, "rhs": complex(rhs), "rel_err": float(abs(lhs - rhs) / scale) if scale > 0 else 0.0}


def check_norm_bound(field: fem.NodalField, mesh: Optional[StructuredMesh] = None,
                     zeta: Optional[float] = None) -> float:
    """``sqrt(delta) ||T(phi)||_{L2(O x Y_zeta)} / ||phi||_{L2(Omega)}``; 0 for the zero field."""
    mesh = field.mesh if mesh is None else mesh
    den = fem.norms(field, mesh)["l2"]
    if den == 0:
        return 0.0
    return float(np.sqrt(mesh.delta) * unfold(field, mesh, zeta).l2_norm() / den)


def check_gradient_scaling(field: fem.NodalField, mesh: Optional[StructuredMesh] = None,
                           zeta: Optional[float] = None) -> float:
    """Max of ``|delta^-1 grad_z T(phi) - T(grad phi)|`` over all Gauss points, relative to ``max |grad phi|``."""
    mesh = field.mesh if mesh is None else mesh
    T = unfold(field, mesh, zeta)
    _, gz = T.evaluate()
    # mesh elements matching micro element e of macro cell xi
    cpp, dp = mesh.cells_per_period, len(mesh.n_periods)
    mei = T.micro.element_index
    cells = np.indices(T.n_cells).reshape(dp, -1).T
    i0 = T.plane_range[0]
    multi = [cells[:, k][:, None] * cpp + mei[None, :, k] for k in range(dp)]
    multi.append(np.broadcast_to(i0 + mei[None, :, -1], multi[0].shape))
    elems = np.ravel_multi_index(tuple(multi), mesh.grid.cell_shape)
    _, gx = mesh.grid.evaluate(field.values, elements=elems.ravel())
    gx = gx.reshape(gz.shape)
    scale = np.max(np.abs(gx))
    if scale == 0:
        return float(np.max(np.abs(gz)))
    return float(np.max(np.abs(gz / T.delta - gx)) / scale)


# -- the first-order corrector ---------------------------------------------------------

def normal_derivative_at_gamma(field: fem.NodalField, mesh: Optional[StructuredMesh] = None) -> np.ndarray:
    """One-sided second-order ``d/dx3`` at ``x3 = 0`` from above, on the in-plane node grid."""
    mesh = field.mesh if mesh is None else mesh
    j = mesh.plane_index(0.0)
    x = mesh.x3
    h1, h2 = x[j + 1] - x[j], x[j + 2] - x[j + 1]
    c0 = -(2 * h1 + h2) / (h1 * (h1 + h2))
    c1 = (h1 + h2) / (h1 * h2)
    c2 = -h1 / (h2 * (h1 + h2))
    u = field.values.reshape(mesh.grid.shape)
    return c0 * u[..., j] + c1 * u[..., j + 1] + c2 * u[..., j + 2]


def resample_in_plane(values: np.ndarray, src_axes: Sequence[np.ndarray],
                      dst_axes: Sequence[np.ndarray]) -> np.ndarray:
    """Multilinear resampling of an in-plane nodal array between tensor grids."""
    if all(a.shape == b.shape and np.allclose(a, b, rtol=0, atol=1e-14) for a, b in zip(src_axes, dst_axes)):
        return np.asarray(values)
    interp = RegularGridInterpolator(tuple(src_axes), np.asarray(values), bounds_error=False, fill_value=None)
    pts = np.stack(np.meshgrid(*dst_axes, indexing="ij"), axis=-1)
    return interp(pts)


def unfold_in_plane(values: np.ndarray, mesh: StructuredMesh) -> np.ndarray:
    """Re-index an in-plane nodal array to ``(macro cell..., micro in-plane node...)``."""
    cpp, dp = mesh.cells_per_period, len(mesh.n_periods)
    out = np.asarray(values)
    for k, n in enumerate(mesh.n_periods):
        idx = np.arange(n)[:, None] * cpp + np.arange(cpp + 1)[None, :]
        out = np.take(out, idx, axis=2 * k)
    # axes are now (n1, j1[, n2, j2]); order as (n1[, n2], j1[, j2])
    if dp == 2:
        out = out.transpose(0, 2, 1, 3)
    return out


def first_order_profile(g: np.ndarray, mesh: StructuredMesh, template: UnfoldedField) -> UnfoldedField:
    """``u1(x', z) = z3^+ g(delta xi + delta z')`` on the micro lattice of ``template``."""
    gu = unfold_in_plane(g, mesh)
    z3 = template.micro.axes[-1]
    prof = np.maximum(z3, 0.0)
    vals = gu[..., None] * prof
    return template.like(vals.reshape(template.values.shape))


def corrector_limit_check(u, meshes: Sequence[StructuredMesh], zeta: float = 0.5) -> list:
    """``||T(u/delta) - z3^+ du/dx3|_Gamma||_{L2(O x Y)}`` for each mesh.

    ``u`` is the limit solution (its own mesh) and is interpolated onto each
    mesh; the trace derivative is taken on the limit mesh and resampled.
    """
    from .problems import interpolate_field

    g_src = normal_derivative_at_gamma(u)
    src_axes = u.mesh.grid.axes[:-1]
    rows = []
    for mesh in meshes:
        ui = u if mesh is u.mesh else interpolate_field(u, mesh)
        T = unfold(ui, mesh, zeta) * (1.0 / mesh.delta)
        g = resample_in_plane(g_src, src_axes, mesh.grid.axes[:-1])
        u1 = first_order_profile(g, mesh, T)
        err = (T - u1).l2_norm((-0.5, 0.5))
        rows.append({"delta": mesh.delta, "error": err, "reference": u1.l2_norm((-0.5, 0.5))})
    return rows

"""Complex first-order finite elements on structured meshes.

The discrete form is ``K = S(A) - omega^2 M(eps)`` with real symmetric
stiffness ``S`` and complex mass ``M(eps)``.  ``K`` is therefore complex
symmetric (``K == K.T``), not Hermitian.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Region, StructuredMesh
from .lattice import TensorGrid, load_vector, mass_matrix, stiffness_matrix

log = logging.getLogger(__name__)

REGIONS = ("ALL", "GRID", "HOLE", "LAYER", "BULK_PLUS", "BULK_MINUS")


class SolverError(RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass
class MaterialField:
    """Per-element conductivity ``A`` (``(E, d, d)``) and complex ``eps`` (``(E,)``)."""

    A: np.ndarray
    eps: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.eps = np.asarray(self.eps, dtype=complex)
        lam = np.linalg.eigvalsh(0.5 * (self.A + self.A.transpose(0, 2, 1)))
        if not self.alpha:
            self.alpha = float(lam.min())
        if not self.beta:
            self.beta = float(np.abs(lam).max())

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.eps))):
            raise ValueError("non-finite material coefficient")
        if not np.allclose(self.A, self.A.transpose(0, 2, 1), rtol=0, atol=1e-14 * max(self.beta, 1.0)):
            raise ValueError("A must be symmetric")
        lam = np.linalg.eigvalsh(self.A)
        if lam.min() < self.alpha * (1 - 1e-12) or lam.max() > self.beta * (1 + 1e-12):
            raise ValueError("A violates the alpha/beta bounds")
        if self.alpha <= 0:
            raise ValueError("A must be uniformly positive definite")
        if np.any(self.eps.imag < 0):
            raise ValueError("Im(eps) must be non-negative")


def conductivity(mesh_or_grid, A_spec=None) -> np.ndarray:
    """Expand an ``A`` description to per-element matrices.

    ``A_spec`` is ``None``/``"identity"``, a constant ``(d, d)`` array, or a
    callable mapping element centroids ``(E, d)`` to ``(E, d, d)``.
    """
    grid = mesh_or_grid.grid if isinstance(mesh_or_grid, StructuredMesh) else mesh_or_grid
    d, E = grid.ndim, grid.n_elements
    if A_spec is None or (isinstance(A_spec, str) and A_spec.lower() == "identity"):
        return np.broadcast_to(np.eye(d), (E, d, d)).copy()
    if callable(A_spec):
        A = np.asarray(A_spec(grid.centroids), dtype=float)
        return A.reshape(E, d, d)
    A = np.asarray(A_spec, dtype=float)
    if A.shape != (d, d):
        raise ValueError(f"constant A must be {d}x{d}")
    return np.broadcast_to(A, (E, d, d)).copy()


@dataclass
class NodalField:
    values: np.ndarray
    mesh: StructuredMesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.mesh.node_count,):
            raise ValueError("field size does not match the mesh")


@dataclass
class SparseHermitianSystem:
    """Discrete system restricted to free nodes.

    Despite the name the matrix is complex symmetric (``K == K.T``).
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_mask: np.ndarray
    mesh: Optional[StructuredMesh] = None
    symmetry_kind: str = "COMPLEX_SYMMETRIC"
    load: Optional[np.ndarray] = None  # full-length int f phi, without the i*omega factor

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dirichlet_mask.size, dtype=complex)
        out[~self.dirichlet_mask] = reduced
        return out


@dataclass
class SolveResult:
    field: NodalField
    residual: float
    rcond: float
    near_singular: bool
    method: str = "lu"
    history: list = field(default_factory=list)


def _source_array(mesh: StructuredMesh, f) -> np.ndarray:
    grid = mesh.grid
    if f is None:
        return np.zeros(grid.n_nodes)
    if isinstance(f, NodalField):
        return grid_mass(grid) @ f.values
    if callable(f):
        return load_vector(grid, f)
    arr = np.asarray(f)
    if arr.shape == (grid.n_nodes,):
        return grid_mass(grid) @ arr
    raise TypeError("source must be None, a NodalField, nodal values or a callable f(x)")


def grid_mass(grid: TensorGrid) -> sp.csr_matrix:
    return mass_matrix(grid, np.ones(grid.n_elements))


def assemble(mesh: StructuredMesh, material: MaterialField, omega: float, f=None, *,
             dirichlet: Optional[np.ndarray] = None, check_support: bool = False) -> SparseHermitianSystem:
    """Assemble ``S(A) - omega^2 M(eps)`` and ``rhs = i omega int f phi``.

    ``dirichlet`` adds nodes to the homogeneous Dirichlet set (the box
    boundary is always included).  With ``check_support`` a callable source
    must vanish below the layer top ``x3 = delta/2``.
    """
    grid = mesh.grid
    if np.any(grid.volumes <= 0):
        raise ValueError("degenerate element")
    material.validate()
    if check_support and callable(f):
        pts, _ = grid.quadrature_points()
        below = pts[..., -1] < 0.5 * mesh.delta
        vals = np.asarray(f(pts.reshape(-1, grid.ndim))).reshape(below.shape)
        if np.any(vals[below] != 0):
            raise ValueError("source is not supported in the closure of the upper bulk")
    S = stiffness_matrix(grid, material.A)
    M = mass_matrix(grid, material.eps)
    K = (S - omega**2 * M).tocsr()
    load = _source_array(mesh, f)
    mask = grid.boundary_mask()
    if dirichlet is not None:
        mask = mask | np.asarray(dirichlet, dtype=bool)
    free = np.flatnonzero(~mask)
    Kf = K[free][:, free].tocsr()
    rhs = 1j * omega * load[free]
    return SparseHermitianSystem(Kf, rhs, mask, mesh, load=load)


def _inverse_growth(solve_fn, n: int, steps: int = 6) -> float:
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    growth = 0.0
    for _ in range(steps):
        y = solve_fn(x)
        ny = np.linalg.norm(y)
        if not np.isfinite(ny):
            return np.inf
        growth = max(growth, ny)
        if ny == 0:
            break
        x = y / ny
    return growth


def solve(system: SparseHermitianSystem, *, direct_limit: int = 500_000, tol: float = 1e-10,
          rcond_threshold: float = 1e-10) -> SolveResult:
    """Direct complex LU (SuperLU, partial pivoting); GMRES+ILU above ``direct_limit`` unknowns.

    ``rcond`` is ``1 / (||K||_1 * g)`` with ``g`` a deterministic inverse
    iteration estimate of ``||K^-1||``; values below ``rcond_threshold`` mark
    the system as near singular (probable resonance).
    """
    K, b = system.matrix.tocsc(), system.rhs
    n = K.shape[0]
    knorm = spla.norm(K, 1) if n else 0.0
    history: list = []
    if n == 0:
        x = np.zeros(0, dtype=complex)
        rcond, method = 1.0, "empty"
    elif n <= direct_limit:
        try:
            # K is structurally symmetric: minimum degree on K + K^T with preference for diagonal pivots
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:  # exactly singular factor
            raise SolverError(f"LU factorization failed: {exc}") from exc
        x = lu.solve(b.astype(complex))
        growth = _inverse_growth(lambda v: lu.solve(v), n)
        rcond = 0.0 if not np.isfinite(growth) or growth == 0 else 1.0 / (knorm * growth)
        method = "lu"
    else:
        ilu = spla.spilu(K, drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(K.shape, ilu.solve, dtype=complex)
        x, info = spla.gmres(K, b, M=M, rtol=tol, restart=200, maxiter=50,
                             callback=lambda r: history.append(float(r)), callback_type="pr_norm")
        if info != 0:
            raise SolverError(f"GMRES did not reach rtol={tol} (info={info})", history)
        growth = _inverse_growth(lambda v: spla.gmres(K, v, M=M, rtol=1e-8)[0], n, steps=3)
        rcond = 1.0 / (knorm * growth) if growth > 0 else 0.0
        method = "gmres"
    bnorm = np.linalg.norm(b)
    residual = float(np.linalg.norm(K @ x - b) / bnorm) if bnorm > 0 else float(np.linalg.norm(K @ x))
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution", history)
    if residual > tol and method == "lu":
        log.warning("direct solve residual %.3e above %.1e", residual, tol)
    near = rcond < rcond_threshold
    if near:
        log.warning("near-singular system (rcond=%.3e): probable resonance", rcond)
    return SolveResult(NodalField(system.expand(x), system.mesh), residual, rcond, near, method, history)


# -- functionals -------------------------------------------------------------------

def norms(field: NodalField, mesh: Optional[StructuredMesh] = None, region: str = "ALL") -> dict:
    """L2, H1-seminorm and H1 norms over a region of the mesh."""
    mesh = field.mesh if mesh is None else mesh
    region = region.upper()
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    elems = np.flatnonzero(mesh.region_mask(region))
    if elems.size == 0:
        return {"l2": 0.0, "h1_semi": 0.0, "h1": 0.0}
    sq = mesh.grid.squared_norms(field.values, elems)
    l2, semi = sq["l2"], float(sq["grad"].sum())
    return {"l2": float(np.sqrt(l2)), "h1_semi": float(np.sqrt(semi)), "h1": float(np.sqrt(l2 + semi))}


def error_norms(field: NodalField, exact: Callable, exact_grad: Callable, order: int = 3) -> dict:
    """L2, H1-seminorm and H1 norms of ``field - exact`` by Gauss quadrature.

    ``exact(x)`` maps ``(N, d)`` points to ``(N,)`` values and ``exact_grad(x)``
    to ``(N, d)`` gradients.
    """
    grid = field.mesh.grid
    pts, w = grid.quadrature_points(order)
    vals, grads = grid.evaluate(field.values, order)
    flat = pts.reshape(-1, grid.ndim)
    ev = np.asarray(exact(flat)).reshape(vals.shape)
    eg = np.asarray(exact_grad(flat)).reshape(grads.shape)
    l2 = float(np.sum(w * np.abs(vals - ev) ** 2))
    semi = float(np.sum(w[..., None] * np.abs(grads - eg) ** 2))
    return {"l2": np.sqrt(l2), "h1_semi": np.sqrt(semi), "h1": np.sqrt(l2 + semi)}


def slab_norms(field: NodalField, lo: float, hi: float, mesh: Optional[StructuredMesh] = None,
               order: int = 2) -> dict:
    """Squared norms over ``O x (lo, hi)`` with elements clipped to the slab (exact for Q1)."""
    from .lattice import gauss_rule, q1_basis

    mesh = field.mesh if mesh is None else mesh
    grid = mesh.grid
    z0 = grid.origins[:, -1]
    z1 = z0 + grid.sizes[:, -1]
    elems = np.flatnonzero((z1 > lo) & (z0 < hi))
    d = grid.ndim
    if elems.size == 0:
        return {"l2_sq": 0.0, "grad_sq": np.zeros(d)}
    a = np.maximum(z0[elems], lo)
    b = np.minimum(z1[elems], hi)
    h = grid.sizes[elems]
    ref, w = gauss_rule(d, order)
    # reference coordinates of the clipped Gauss points
    refpts = np.broadcast_to(ref, (elems.size,) + ref.shape).copy()
    refpts[..., -1] = ((a - z0[elems])[:, None] + ref[None, :, -1] * (b - a)[:, None]) / h[:, -1][:, None]
    vals_b, grads_b = q1_basis(refpts, d)
    ue = field.values[grid.connectivity[elems]]
    vals = np.matmul(vals_b, ue[:, :, None])[..., 0]
    grads = np.sum(grads_b * ue[:, None, :, None], axis=2) / h[:, None, :]
    jac = np.prod(h[:, :-1], axis=1) * (b - a)
    wq = w[None, :] * jac[:, None]
    return {"l2_sq": float(np.sum(wq * np.abs(vals) ** 2)),
            "grad_sq": np.sum(wq[..., None] * np.abs(grads) ** 2, axis=(0, 1))}


def inner_product(u: np.ndarray, v: np.ndarray, grid: TensorGrid, elements=None) -> complex:
    """``int u conj(v)`` for nodal fields on ``grid``."""
    uq, _ = grid.evaluate(u, elements=elements)
    vq, _ = grid.evaluate(v, elements=elements)
    _, w = grid.quadrature_points(elements=elements)
    return complex(np.sum(w * uq * np.conj(vq)))


def plane_values(field: NodalField, c: float, mesh: Optional[StructuredMesh] = None) -> np.ndarray:
    mesh = field.mesh if mesh is None else mesh
    j = mesh.plane_index(c)
    return field.values.reshape(mesh.grid.shape)[..., j]


def trace_l2(field: NodalField, c: float = 0.0, mesh: Optional[StructuredMesh] = None) -> float:
    """L2 norm of the restriction of ``field`` to the node plane ``x3 = c``."""
    mesh = field.mesh if mesh is None else mesh
    vals = plane_values(field, c, mesh).ravel()
    plane = TensorGrid(mesh.grid.axes[:-1])
    return float(np.sqrt(plane.squared_norms(vals)["l2"]))


def random_smooth_fields(mesh: StructuredMesh, count: int, rng: np.random.Generator,
                         dirichlet: bool = False) -> list:
    """Random complex nodal fields smoothed once by a ``[1, 2, 1]/4`` pass per axis."""
    out = []
    shape = mesh.grid.shape
    for _ in range(count):
        v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        for ax in range(len(shape)):
            pad = np.concatenate([v.take([0], axis=ax), v, v.take([-1], axis=ax)], axis=ax)
            n = shape[ax]
            v = 0.25 * pad.take(range(0, n), axis=ax) + 0.5 * v + 0.25 * pad.take(range(2, n + 2), axis=ax)
        v = v.ravel()
        if dirichlet:
            v[mesh.grid.boundary_mask()] = 0.0
        out.append(NodalField(v, mesh))
    return out


def check_layer_inequalities(fields, mesh: Optional[StructuredMesh] = None) -> dict:
    """Empirical constants of the layer Poincare and trace inequalities.

    For every field computes
    ``ratio1 = ||v||_layer / (||v||_grid + delta ||grad v||_layer)`` and
    ``ratio2 = delta ||v||_Gamma^2 / (||v||_layer^2 + delta^2 ||grad v||_layer^2)``;
    and, on the field with values at ``x3 <= 0`` set to zero,
    ``||v||^2_{O x (0, delta/2)} <= delta ||v||^2_{O x (0, L)} + delta^2 ||d3 v||^2_{O x (0, L)}``.
    Zero fields give ratios 0.
    """
    fields = list(fields)
    mesh = fields[0].mesh if mesh is None else mesh
    delta, L = mesh.delta, mesh.spec.half_height
    x3 = mesh.node_x3()
    r1, r2, margins = [], [], []
    for v in fields:
        layer = norms(v, mesh, "LAYER")
        grid_l2 = norms(v, mesh, "GRID")["l2"]
        gamma = trace_l2(v, 0.0, mesh)
        den1 = grid_l2 + delta * layer["h1_semi"]
        den2 = layer["l2"] ** 2 + delta**2 * layer["h1_semi"] ** 2
        r1.append(layer["l2"] / den1 if den1 > 0 else 0.0)
        r2.append(delta * gamma**2 / den2 if den2 > 0 else 0.0)
        phi = v.values.copy()
        phi[x3 <= 0] = 0.0
        phi = NodalField(phi, mesh)
        lhs = slab_norms(phi, 0.0, 0.5 * delta, mesh)["l2_sq"]
        upper = slab_norms(phi, 0.0, L, mesh)
        rhs = delta * upper["l2_sq"] + delta**2 * upper["grad_sq"][-1]
        margins.append(rhs - lhs)
    margins = np.array(margins)
    return {
        "delta": delta,
        "ratio1": r1,
        "ratio2": r2,
        "max_ratio1": float(max(r1)) if r1 else 0.0,
        "max_ratio2": float(max(r2)) if r2 else 0.0,
        "strip_violations": int(np.sum(margins < -1e-14 * np.maximum(1.0, np.abs(margins)))),
        "strip_margins": margins.tolist(),
    }


def norm_records(field: NodalField, mesh: Optional[StructuredMesh] = None) -> list:
    """JSON-ready ``{norm_name, region, value}`` records over every region."""
    mesh = field.mesh if mesh is None else mesh
    recs = []
    for region in REGIONS:
        for name, value in norms(field, mesh, region).items():
            recs.append({"norm_name": name, "region": region, "value": value})
    return recs


def write_norm_report(field: NodalField, path) -> None:
    with open(path, "w") as fh:
        json.dump(norm_records(field), fh, indent=2, sort_keys=True)


def write_vtk_field(field: NodalField, path, name: str = "u") -> None:
    """Legacy ASCII VTK with point scalars ``<name>_real`` and ``<name>_imag``."""
    from .geometry import write_vtk

    write_vtk(field.mesh, path, {f"{name}_real": field.values.real, f"{name}_imag": field.values.imag})


def region_elements(mesh: StructuredMesh, *regions: Region) -> np.ndarray:
    return np.flatnonzero(np.isin(mesh.regions, [int(r) for r in regions]))

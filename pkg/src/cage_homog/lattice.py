"""Tensor-product grids and first-order (multilinear) element machinery.

Everything in the package that integrates or assembles goes through
:class:`TensorGrid`: the physical meshes of :mod:`cage_homog.geometry`, the
micro lattice of the unfolded fields and the periodic strip of the cell
problem.  Elements are axis-aligned boxes, so the reference element is
``[0, 1]^d`` and all element integrals reduce to per-axis scalings of a few
reference tables.
"""
from __future__ import annotations

import itertools
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


def gauss_rule_1d(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(ndim: int, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on ``[0, 1]^ndim``; returns ``(points (nq, d), weights (nq,))``."""
    x, w = gauss_rule_1d(order)
    pts = np.array(list(itertools.product(x, repeat=ndim)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=ndim))), axis=1)
    return pts.reshape(-1, ndim), wts


def corner_offsets(ndim: int) -> np.ndarray:
    """Local vertex offsets ``(2**d, d)`` in C order."""
    return np.array(list(itertools.product((0, 1), repeat=ndim)), dtype=np.int64)


def q1_basis(points: np.ndarray, ndim: int) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(..., nb)`` and reference gradients ``(..., nb, d)`` of the Q1 basis.

    ``points`` has shape ``(..., d)`` in reference coordinates.
    """
    pts = np.asarray(points, dtype=float)
    corners = corner_offsets(ndim)
    # per-axis 1-D factors: (..., nb, d)
    lin = np.where(corners == 1, pts[..., None, :], 1.0 - pts[..., None, :])
    dlin = np.where(corners == 1, 1.0, -1.0) * np.ones_like(lin)
    vals = np.prod(lin, axis=-1)
    grads = np.empty(lin.shape)
    for k in range(ndim):
        factors = lin.copy()
        factors[..., k] = dlin[..., k]
        grads[..., k] = np.prod(factors, axis=-1)
    return vals, grads


class TensorGrid:
    """Rectilinear grid with one coordinate array per axis.

    Nodes are numbered in C order over the axes; the last axis is the
    vertical one whenever the grid represents a physical domain.
    """

    def __init__(self, axes: Sequence[np.ndarray]):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        for a in self.axes:
            if a.ndim != 1 or a.size < 2:
                raise ValueError("each axis needs at least two coordinates")
            if np.any(np.diff(a) <= 0.0):
                raise ValueError("axis coordinates must be strictly increasing")
        self.ndim = len(self.axes)
        self.shape = tuple(a.size for a in self.axes)
        self.cell_shape = tuple(n - 1 for n in self.shape)
        self.n_nodes = int(np.prod(self.shape))
        self.n_elements = int(np.prod(self.cell_shape))

    @cached_property
    def connectivity(self) -> np.ndarray:
        """Global node indices of each element, shape ``(E, 2**d)``."""
        corners = corner_offsets(self.ndim)
        idx = np.indices(self.cell_shape).reshape(self.ndim, -1).T
        nodes = idx[:, None, :] + corners[None, :, :]
        return np.ravel_multi_index(tuple(nodes[..., k] for k in range(self.ndim)), self.shape)

    @cached_property
    def element_index(self) -> np.ndarray:
        """Multi-index of each element, shape ``(E, d)``."""
        return np.indices(self.cell_shape).reshape(self.ndim, -1).T

    @cached_property
    def sizes(self) -> np.ndarray:
        """Element edge lengths, shape ``(E, d)``."""
        h = [np.diff(a) for a in self.axes]
        ei = self.element_index
        return np.stack([h[k][ei[:, k]] for k in range(self.ndim)], axis=1)

    @cached_property
    def origins(self) -> np.ndarray:
        ei = self.element_index
        return np.stack([self.axes[k][ei[:, k]] for k in range(self.ndim)], axis=1)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.prod(self.sizes, axis=1)

    @property
    def centroids(self) -> np.ndarray:
        return self.origins + 0.5 * self.sizes

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(N, d)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def boundary_mask(self, axes: Optional[Sequence[int]] = None) -> np.ndarray:
        """Nodes on the faces orthogonal to ``axes`` (all axes by default)."""
        axes = range(self.ndim) if axes is None else axes
        idx = np.indices(self.shape).reshape(self.ndim, -1)
        mask = np.zeros(self.n_nodes, dtype=bool)
        for k in axes:
            mask |= (idx[k] == 0) | (idx[k] == self.shape[k] - 1)
        return mask

    def quadrature_points(self, order: int = 2, elements: Optional[np.ndarray] = None):
        """Physical Gauss points ``(E, nq, d)`` and weights ``(E, nq)``."""
        ref, w = gauss_rule(self.ndim, order)
        org, h = self.origins, self.sizes
        if elements is not None:
            org, h = org[elements], h[elements]
        pts = org[:, None, :] + ref[None, :, :] * h[:, None, :]
        return pts, w[None, :] * np.prod(h, axis=1)[:, None]

    # -- evaluation of nodal fields ------------------------------------------------

    def evaluate(self, values: np.ndarray, order: int = 2, elements: Optional[np.ndarray] = None):
        """Field values ``(E, nq)`` and physical gradients ``(E, nq, d)`` at Gauss points."""
        ref, _ = gauss_rule(self.ndim, order)
        b, g = q1_basis(ref, self.ndim)
        conn, h = self.connectivity, self.sizes
        if elements is not None:
            conn, h = conn[elements], h[elements]
        ue = np.asarray(values)[conn]
        vals = ue @ b.T
        nq, nb, d = g.shape
        grads = (ue @ g.transpose(1, 0, 2).reshape(nb, nq * d)).reshape(-1, nq, d) / h[:, None, :]
        return vals, grads

    def integrate(self, values: np.ndarray, elements: Optional[np.ndarray] = None) -> complex:
        """Exact integral of a Q1 nodal field (element volume times vertex mean)."""
        conn, vol = self.connectivity, self.volumes
        if elements is not None:
            conn, vol = conn[elements], vol[elements]
        return np.sum(vol * np.asarray(values)[conn].mean(axis=1))

    def squared_norms(self, values: np.ndarray, elements: Optional[np.ndarray] = None) -> dict:
        """Squared L2 norm and squared gradient components of a nodal field."""
        vals, grads = self.evaluate(values, elements=elements)
        _, w = self.quadrature_points(elements=elements)
        l2 = float(np.sum(w * np.abs(vals) ** 2))
        comp = np.sum(w[..., None] * np.abs(grads) ** 2, axis=(0, 1))
        return {"l2": l2, "grad": comp}


def _reference_tables(ndim: int):
    ref, w = gauss_rule(ndim, 2)
    b, g = q1_basis(ref, ndim)
    mass = np.einsum("q,qa,qb->ab", w, b, b)
    stiff = np.einsum("q,qai,qbj->ijab", w, g, g)
    return b, g, w, mass, stiff


def _scatter(grid: TensorGrid, local: np.ndarray, dof_map: Optional[np.ndarray],
             n_dofs: Optional[int], elements: Optional[np.ndarray]) -> sp.csr_matrix:
    conn = grid.connectivity if elements is None else grid.connectivity[elements]
    if dof_map is not None:
        conn = dof_map[conn]
        n = int(dof_map.max()) + 1 if n_dofs is None else n_dofs
    else:
        n = grid.n_nodes
    nb = conn.shape[1]
    rows = np.repeat(conn, nb, axis=1).ravel()
    cols = np.tile(conn, (1, nb)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return mat.tocsr()


def stiffness_matrix(grid: TensorGrid, coef: np.ndarray, dof_map=None, n_dofs=None,
                     elements: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Assemble ``int coef grad(phi_b) . grad(phi_a)`` with ``coef`` of shape ``(E, d, d)``.

    ``elements`` restricts and orders the element loop; the result does not
    depend on the order up to floating-point summation.
    """
    _, _, _, _, kref = _reference_tables(grid.ndim)
    h = grid.sizes
    coef = np.asarray(coef, dtype=float)
    if elements is not None:
        h, coef = h[elements], coef[elements]
    jac = np.prod(h, axis=1)
    scaled = coef * jac[:, None, None] / (h[:, :, None] * h[:, None, :])
    nb = kref.shape[-1]
    local = (scaled.reshape(scaled.shape[0], -1) @ kref.reshape(-1, nb * nb)).reshape(-1, nb, nb)
    local = 0.5 * (local + local.transpose(0, 2, 1))
    return _scatter(grid, local, dof_map, n_dofs, elements)


def mass_matrix(grid: TensorGrid, coef: np.ndarray, dof_map=None, n_dofs=None,
                elements: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Assemble ``int coef phi_b phi_a`` with a per-element scalar ``coef``."""
    _, _, _, mref, _ = _reference_tables(grid.ndim)
    coef = np.asarray(coef)
    vol = grid.volumes
    if elements is not None:
        coef, vol = coef[elements], vol[elements]
    local = (coef * vol)[:, None, None] * mref[None, :, :]
    return _scatter(grid, local, dof_map, n_dofs, elements)


def load_vector(grid: TensorGrid, source: Callable[[np.ndarray], np.ndarray], dof_map=None,
                n_dofs=None, elements: Optional[np.ndarray] = None, order: int = 2) -> np.ndarray:
    """Assemble ``int f phi_a`` with ``f`` evaluated at physical Gauss points."""
    ref, _ = gauss_rule(grid.ndim, order)
    b, _ = q1_basis(ref, grid.ndim)
    pts, w = grid.quadrature_points(order, elements)
    fq = np.asarray(source(pts.reshape(-1, grid.ndim))).reshape(w.shape)
    local = (fq * w) @ b
    conn = grid.connectivity if elements is None else grid.connectivity[elements]
    if dof_map is not None:
        conn = dof_map[conn]
        n = int(dof_map.max()) + 1 if n_dofs is None else n_dofs
    else:
        n = grid.n_nodes
    out = np.zeros(n, dtype=np.result_type(local.dtype, float))
    np.add.at(out, conn.ravel(), local.ravel())
    return out

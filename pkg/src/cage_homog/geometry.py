"""Domains, layer patterns and structured meshes of the shielded box.

The computational domain is ``O x (-L, L)`` where ``O`` is an interval
(``REDUCED_2D``) or a rectangle (``FULL_3D``).  The thin layer
``|x3| < delta/2`` is tiled by ``delta``-periodic copies of a reference cell
whose grid material ``Y0`` is described by a :class:`LayerPattern` raster.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .lattice import TensorGrid


class PatternError(ValueError):
    """Raised for layer patterns violating the cell assumptions."""


class MeshTooLargeError(RuntimeError):
    def __init__(self, estimate_bytes: float, cap_bytes: float):
        self.estimate_bytes = estimate_bytes
        self.cap_bytes = cap_bytes
        super().__init__(
            f"estimated memory {estimate_bytes / 2**30:.2f} GiB exceeds cap "
            f"{cap_bytes / 2**30:.2f} GiB"
        )


class DimensionMode(str, enum.Enum):
    REDUCED_2D = "REDUCED_2D"
    FULL_3D = "FULL_3D"

    @property
    def in_plane_dims(self) -> int:
        return 1 if self is DimensionMode.REDUCED_2D else 2


class PatternKind(str, enum.Enum):
    CROSS = "CROSS"
    FRAME = "FRAME"
    CUSTOM = "CUSTOM"


class Region(enum.IntEnum):
    GRID = 0
    HOLE = 1
    BULK_PLUS = 2
    BULK_MINUS = 3


@dataclass(frozen=True)
class DomainSpec:
    """``O x (-L, L)``; ``extent`` holds the side lengths of ``O``."""

    extent: tuple
    half_height: float
    mode: DimensionMode = DimensionMode.REDUCED_2D

    def __post_init__(self):
        mode = DimensionMode(self.mode)
        object.__setattr__(self, "mode", mode)
        ext = tuple(float(e) for e in np.atleast_1d(self.extent))
        object.__setattr__(self, "extent", ext)
        if len(ext) != mode.in_plane_dims:
            raise ValueError(f"{mode.value} needs {mode.in_plane_dims} in-plane extent(s), got {len(ext)}")
        if any(e <= 0 for e in ext) or self.half_height <= 0:
            raise ValueError("extents and half_height must be positive")

    @property
    def volume(self) -> float:
        return 2.0 * self.half_height * math.prod(self.extent)

    @property
    def in_plane_area(self) -> float:
        return math.prod(self.extent)

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(e * e for e in self.extent) + (2.0 * self.half_height) ** 2)


@dataclass(frozen=True)
class LayerPattern:
    """Rasterized grid material ``Y0`` on the in-plane unit cell.

    ``raster[i1]`` (1-D) or ``raster[i1, i2]`` (2-D) is True on grid pixels.
    Pixels are half-open, lower-left inclusive.
    """

    raster: np.ndarray
    kind: PatternKind = PatternKind.CUSTOM

    def __post_init__(self):
        r = np.asarray(self.raster, dtype=bool)
        r.setflags(write=False)
        object.__setattr__(self, "raster", r)
        object.__setattr__(self, "kind", PatternKind(self.kind))

    @property
    def resolution(self) -> int:
        return self.raster.shape[0]

    @property
    def in_plane_dims(self) -> int:
        return self.raster.ndim

    @property
    def fill_fraction(self) -> float:
        return float(self.raster.mean())

    def contains(self, frac: np.ndarray) -> np.ndarray:
        """Whether in-cell coordinates ``frac (..., d')`` in ``[0, 1)`` fall in ``Y0``."""
        frac = np.asarray(frac, dtype=float)
        idx = np.clip(np.floor(frac * self.resolution).astype(np.int64), 0, self.resolution - 1)
        return self.raster[tuple(idx[..., k] for k in range(self.in_plane_dims))]

    def is_connected(self) -> bool:
        """Periodic tiling of a 2-D raster forms one connected grid.

        Tiles 3x3 copies and requires a single 4-connected component that
        touches all four sides of the centre cell.  1-D rasters (one in-plane
        direction) have no in-plane connectivity notion and return True.
        """
        if self.in_plane_dims == 1:
            return True
        tiled = np.tile(self.raster, (3, 3))
        labels, n = ndimage.label(tiled)
        if n != 1:
            return False
        r = self.raster
        return bool(r[0, :].any() and r[-1, :].any() and r[:, 0].any() and r[:, -1].any())


def _bar_mask(centres: np.ndarray, width: float, kind: PatternKind) -> np.ndarray:
    if kind is PatternKind.CROSS:
        return (centres >= 0.5 - 0.5 * width) & (centres < 0.5 + 0.5 * width)
    return (centres < 0.5 * width) | (centres >= 1.0 - 0.5 * width)


def build_pattern(kind, bar_width: float, raster_res: int, in_plane_dims: int = 2) -> LayerPattern:
    """Parametric grid patterns.

    ``CROSS`` is two orthogonal bars through the cell centre (one bar when
    ``in_plane_dims == 1``); ``FRAME`` puts the bars on the cell edges, i.e. the
    same wires shifted by half a period.  Pixels whose centre lies in a bar
    belong to ``Y0``.
    """
    kind = PatternKind(kind)
    if kind is PatternKind.CUSTOM:
        raise PatternError("CUSTOM patterns come from a raster, see load_pattern")
    if not 0.0 < bar_width < 1.0:
        raise PatternError(f"bar_width must lie in (0, 1), got {bar_width}")
    if raster_res < 4:
        raise PatternError("raster_res must be at least 4")
    if in_plane_dims not in (1, 2):
        raise ValueError("in_plane_dims is 1 or 2")
    centres = (np.arange(raster_res) + 0.5) / raster_res
    bar = _bar_mask(centres, bar_width, kind)
    raster = bar if in_plane_dims == 1 else bar[:, None] | bar[None, :]
    pattern = LayerPattern(raster, kind)
    validate_pattern(pattern)
    return pattern


def validate_pattern(pattern: LayerPattern) -> None:
    if not pattern.raster.any():
        raise PatternError("grid material Y0 is empty at this raster resolution")
    if pattern.raster.all():
        raise PatternError("complement Y1 of the grid is empty")
    if len(set(pattern.raster.shape)) != 1:
        raise PatternError("raster must be square")
    if not pattern.is_connected():
        raise PatternError("periodic tiling of the pattern is not one connected grid")


def load_pattern(path) -> LayerPattern:
    """Read a plain-text raster: one line per row of ``0``/``1`` characters.

    A single line gives a 1-D pattern.  For 2-D rasters line ``j`` holds the
    pixels with ``x2``-index ``j`` and characters run along ``x1``.
    """
    rows = [ln.strip().replace(" ", "") for ln in Path(path).read_text().splitlines()]
    rows = [r for r in rows if r]
    if not rows or any(set(r) - {"0", "1"} for r in rows):
        raise PatternError(f"{path}: expected rows of 0/1")
    arr = np.array([[c == "1" for c in r] for r in rows], dtype=bool)
    raster = arr[0] if arr.shape[0] == 1 else arr.T
    pattern = LayerPattern(raster, PatternKind.CUSTOM)
    validate_pattern(pattern)
    return pattern


def save_pattern(pattern: LayerPattern, path) -> None:
    r = pattern.raster
    rows = [r] if r.ndim == 1 else list(r.T)
    Path(path).write_text("".join("".join("1" if v else "0" for v in row) + "\n" for row in rows))


@dataclass(frozen=True)
class VerticalGrading:
    """Node placement in ``x3``.

    The band ``|x3| <= core_periods * delta`` is uniform with spacing
    ``delta / (cells_per_period * refine)``; beyond it element heights grow
    geometrically by ``ratio`` up to ``max_size``.  ``breakpoints`` are
    ``x3`` values that must be node planes (source support edges).
    """

    ratio: float = 1.3
    max_size: Optional[float] = None
    core_periods: float = 2.0
    refine: int = 1
    breakpoints: tuple = ()

    def __post_init__(self):
        if not 1.0 <= self.ratio <= 1.3:
            raise ValueError("grading ratio must lie in [1, 1.3]")
        if self.refine < 1:
            raise ValueError("refine must be a positive integer")


def _graded_side(h0: float, n_core: int, length: float, grading: VerticalGrading,
                 breakpoints: Sequence[float]) -> np.ndarray:
    top = n_core * h0
    core = h0 * np.arange(n_core + 1)
    remaining = length - top
    if remaining <= 1e-12 * length:
        core[-1] = length
        return core
    hmax = grading.max_size if grading.max_size is not None else max(length / 16.0, h0)
    steps, h, total = [], h0, 0.0
    while total < remaining * (1 - 1e-12):
        h = min(h * grading.ratio, max(hmax, h0))
        steps.append(h)
        total += h
    steps = np.array(steps) * (remaining / total)
    nodes = np.concatenate([core, top + np.cumsum(steps)])
    nodes[-1] = length
    for b in breakpoints:
        if b <= 0 or b >= length:
            continue
        if b <= top + 1e-12 * length:
            if np.min(np.abs(core - b)) > 1e-9 * length:
                raise ValueError(f"breakpoint x3={b} falls inside the uniform band off the node lattice")
            continue
        j = n_core + 1 + int(np.argmin(np.abs(nodes[n_core + 1:-1] - b))) if nodes.size > n_core + 2 else None
        if j is None:
            nodes = np.sort(np.append(nodes, b))
        else:
            nodes[j] = b
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("vertical layout is not monotone; refine the grading")
    return nodes


def vertical_layout(delta: float, half_height: float, cells_per_period: int,
                    grading: VerticalGrading = VerticalGrading()) -> np.ndarray:
    """Symmetric graded ``x3`` nodes over ``[-L, L]`` with ``0`` and ``+-delta/2`` as node planes."""
    if cells_per_period % 2:
        raise ValueError("cells_per_period must be even so that x3 = 0 is a node plane")
    h0 = delta / (cells_per_period * grading.refine)
    n_core = int(round(grading.core_periods * delta / h0))
    n_core = max(n_core, cells_per_period * grading.refine // 2)
    n_core = min(n_core, int(math.floor(half_height / h0 + 1e-9)))
    if n_core * h0 < 0.5 * delta - 1e-12:
        raise ValueError("layer thicker than the domain")
    bps = np.asarray(grading.breakpoints, dtype=float)
    upper = _graded_side(h0, n_core, half_height, grading, bps[bps > 0])
    lower = _graded_side(h0, n_core, half_height, grading, -bps[bps < 0])
    return np.concatenate([-lower[::-1], upper[1:]])


def classify_point(x, delta: float, pattern: LayerPattern) -> np.ndarray:
    """Region label of points ``x (..., d)`` (last coordinate is ``x3``)."""
    x = np.asarray(x, dtype=float)
    x3 = x[..., -1]
    frac = np.mod(x[..., :-1] / delta, 1.0)
    in_layer = np.abs(x3) < 0.5 * delta
    grid = pattern.contains(frac)
    out = np.where(x3 >= 0.5 * delta, Region.BULK_PLUS, Region.BULK_MINUS)
    out = np.where(in_layer, np.where(grid, Region.GRID, Region.HOLE), out)
    return out.astype(np.int8)


@dataclass
class StructuredMesh:
    """Structured box mesh of the shielded domain with per-element regions."""

    spec: DomainSpec
    delta: float
    n_periods: tuple
    cells_per_period: int
    pattern: Optional[LayerPattern]
    grid: TensorGrid
    regions: np.ndarray
    grading: VerticalGrading = field(default_factory=VerticalGrading)

    @property
    def x3(self) -> np.ndarray:
        return self.grid.axes[-1]

    @property
    def node_count(self) -> int:
        return self.grid.n_nodes

    @property
    def element_count(self) -> int:
        return self.grid.n_elements

    @property
    def ndim(self) -> int:
        return self.grid.ndim

    def region_mask(self, region: str = "ALL") -> np.ndarray:
        """Element mask for ``ALL``, ``GRID``, ``HOLE``, ``LAYER``, ``BULK_PLUS`` or ``BULK_MINUS``."""
        region = region.upper()
        if region == "ALL":
            return np.ones(self.element_count, dtype=bool)
        if region == "LAYER":
            return (self.regions == Region.GRID) | (self.regions == Region.HOLE)
        return self.regions == Region[region]

    def region_counts(self) -> dict:
        return {r.name: int(np.sum(self.regions == r)) for r in Region}

    def region_volumes(self) -> dict:
        vol = self.grid.volumes
        return {r.name: float(vol[self.regions == r].sum()) for r in Region}

    def plane_index(self, c: float) -> int:
        """Index of the node plane ``x3 == c``; raises if not node-aligned."""
        j = int(np.argmin(np.abs(self.x3 - c)))
        if abs(self.x3[j] - c) > 1e-9 * self.spec.half_height:
            raise ValueError(f"x3 = {c} is not a node plane of the mesh")
        return j

    def node_x3(self) -> np.ndarray:
        return self.grid.nodes[:, -1]


def estimate_memory(n_nodes: int, ndim: int) -> float:
    """Rough bytes for assembly plus a direct complex factorization."""
    nnz = n_nodes * 3 ** ndim
    fill = 10.0 * n_nodes ** (4.0 / 3.0) if ndim == 3 else 10.0 * n_nodes * max(math.log2(n_nodes), 1.0)
    return 16.0 * (2 * nnz + fill) + 24.0 * nnz


def build_mesh(spec: DomainSpec, n_periods: int, cells_per_period: int, pattern: LayerPattern,
               grading: VerticalGrading = VerticalGrading(), memory_cap: float = 8 * 2**30) -> StructuredMesh:
    """Mesh ``O x (-L, L)`` with period ``delta = extent[0] / n_periods``.

    In-plane elements are ``delta / cells_per_period`` wide everywhere; inside
    the layer the element height matches that width (times ``1/refine``).
    """
    if n_periods < 2:
        raise ValueError("n_periods must be at least 2")
    if pattern.in_plane_dims != spec.mode.in_plane_dims:
        raise PatternError("pattern dimension does not match the domain mode")
    if cells_per_period < pattern.resolution or cells_per_period % pattern.resolution:
        raise ValueError("cells_per_period must be a multiple of the pattern raster resolution")
    delta = spec.extent[0] / n_periods
    periods = []
    for e in spec.extent:
        n = e / delta
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError("every in-plane extent must be an integer number of periods")
        periods.append(int(round(n)))
    axes = [np.linspace(0.0, e, n * cells_per_period + 1) for e, n in zip(spec.extent, periods)]
    axes.append(vertical_layout(delta, spec.half_height, cells_per_period, grading))
    n_nodes = int(np.prod([a.size for a in axes]))
    est = estimate_memory(n_nodes, len(axes))
    if est > memory_cap:
        raise MeshTooLargeError(est, memory_cap)
    grid = TensorGrid(axes)
    regions = classify_point(grid.centroids, delta, pattern)
    return StructuredMesh(spec, delta, tuple(periods), cells_per_period, pattern, grid, regions, grading)


def box_mesh(spec: DomainSpec, cells: Sequence[int]) -> StructuredMesh:
    """Uniform mesh with ``cells`` elements per axis and no layer.

    Used for manufactured solutions and eigenvalue probes; elements are
    labelled bulk by the sign of ``x3``.
    """
    axes = [np.linspace(0.0, e, n + 1) for e, n in zip(spec.extent, cells[:-1])]
    axes.append(np.linspace(-spec.half_height, spec.half_height, cells[-1] + 1))
    grid = TensorGrid(axes)
    x3 = grid.centroids[:, -1]
    regions = np.where(x3 > 0, Region.BULK_PLUS, Region.BULK_MINUS).astype(np.int8)
    return StructuredMesh(spec, 0.0, (1,) * len(spec.extent), int(cells[0]), None, grid, regions)


def grid_connected_components(mesh: StructuredMesh) -> int:
    """Number of face-connected components of the GRID elements."""
    mask = (mesh.regions == Region.GRID).reshape(mesh.grid.cell_shape)
    _, n = ndimage.label(mask)
    return int(n)


def write_vtk(mesh: StructuredMesh, path, point_data: Optional[dict] = None) -> None:
    """Legacy ASCII VTK structured grid with cell field ``region`` and optional point scalars."""
    g = mesh.grid
    if g.ndim == 2:
        x, z = np.meshgrid(g.axes[0], g.axes[1], indexing="ij")
        pts = np.stack([x, np.zeros_like(x), z], axis=-1)
        dims = (g.shape[0], 1, g.shape[1])
    else:
        x, y, z = np.meshgrid(*g.axes, indexing="ij")
        pts = np.stack([x, y, z], axis=-1)
        dims = g.shape
    # VTK wants x fastest: transpose the C-ordered arrays
    pts_f = pts.reshape(*dims, 3).transpose(2, 1, 0, 3).reshape(-1, 3)
    lines = ["# vtk DataFile Version 3.0", "cage_homog mesh", "ASCII", "DATASET STRUCTURED_GRID",
             f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}", f"POINTS {pts_f.shape[0]} double"]
    lines += [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in pts_f]
    cdims = tuple(max(d - 1, 1) for d in dims)
    reg = mesh.regions.reshape(cdims).transpose(2, 1, 0).ravel()
    lines += [f"CELL_DATA {reg.size}", "SCALARS region int 1", "LOOKUP_TABLE default"]
    lines += [str(int(v)) for v in reg]
    if point_data:
        lines.append(f"POINT_DATA {pts_f.shape[0]}")
        for name, vals in point_data.items():
            arr = np.asarray(vals, dtype=float).reshape(dims).transpose(2, 1, 0).ravel()
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in arr]
    Path(path).write_text("\n".join(lines) + "\n")

"""Homogenization of the Helmholtz equation across a thin periodic high-contrast layer."""
from .geometry import (DimensionMode, DomainSpec, LayerPattern, MeshTooLargeError, PatternError,
                       PatternKind, Region, StructuredMesh, VerticalGrading, box_mesh, build_mesh,
                       build_pattern, classify_point, load_pattern, save_pattern)
from .fem import MaterialField, NodalField, SolverError, SparseHermitianSystem, assemble, norms, solve, trace_l2
from .problems import (BandSource, GapReport, PhysicalParams, ResonanceError, SolveReport,
                       eigen_gap_check, solve_delta_problem, solve_limit, solve_regularized)
from .unfolding import UnfoldedField, unfold, refold
from .cell import CellSolution, solve_cell_problem
from .constants import ConstantReport, coercivity_constant, form_matrix_eigenvalues, regularized_ellipticity_constant

__version__ = "0.1.0"

import numpy as np
import pytest

from cage_homog import DimensionMode, DomainSpec, VerticalGrading, build_mesh, build_pattern
from cage_homog.problems import BandSource, PhysicalParams

SPEC_2D = DomainSpec((1.0,), 1.0, DimensionMode.REDUCED_2D)
SPEC_3D = DomainSpec((1.0, 1.0), 1.0, DimensionMode.FULL_3D)
SOURCE = BandSource(0.5, 0.75, 1.0)


def c0_params(**kw) -> PhysicalParams:
    base = dict(omega=1.0, eps1=1.0, eps2=1.0, eps3=1.0, A=None, source=SOURCE)
    base.update(kw)
    return PhysicalParams(**base)


def c0_mesh(delta: float, cpp: int = 8, refine: int = 1, mode: str = "2d", raster: int = 8):
    spec = SPEC_2D if mode == "2d" else SPEC_3D
    pattern = build_pattern("CROSS", 0.5, raster, spec.mode.in_plane_dims)
    grading = VerticalGrading(1.3, 1.0 / 32 if mode == "2d" else 1.0 / 16, 2.0, refine, SOURCE.breakpoints)
    return build_mesh(spec, int(round(1.0 / delta)), cpp, pattern, grading)


@pytest.fixture(scope="session")
def mesh_quarter():
    return c0_mesh(0.25)


@pytest.fixture(scope="session")
def mesh_eighth():
    return c0_mesh(0.125)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one line per criterion -------------------------------------------

ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_record():
    def record(criterion: int, mode: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append((criterion, mode, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, mode, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: (r[0], r[1])):
        terminalreporter.write_line(f"criterion {crit:2d} [{mode}]: {'PASS' if passed else 'FAIL'}  {detail}")

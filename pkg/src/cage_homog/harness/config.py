"""Study configuration: one YAML document plus environment overrides.

Recognized environment variables:

``CAGE_HOMOG_WORKERS``
    worker count for concurrent per-delta / per-theta cases.
``CAGE_HOMOG_OUTPUT``
    output directory.
"""
from __future__ import annotations

import copy
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..geometry import DimensionMode, DomainSpec, LayerPattern, VerticalGrading, build_pattern, load_pattern
from ..problems import BandSource, PhysicalParams


class ConfigError(ValueError):
    """Invalid or empty configuration (a usage error at the CLI)."""


class StudyKind(str, enum.Enum):
    CONVERGE_DELTA = "CONVERGE_DELTA"
    REGULARIZE_THETA = "REGULARIZE_THETA"
    SHIELDING = "SHIELDING"
    CELL = "CELL"
    CONSTANTS = "CONSTANTS"
    CHECK_OPS = "CHECK_OPS"
    SOLVE = "SOLVE"
    LIMIT = "LIMIT"


COMMAND_KIND = {
    "converge": StudyKind.CONVERGE_DELTA,
    "regularize": StudyKind.REGULARIZE_THETA,
    "shielding": StudyKind.SHIELDING,
    "cell": StudyKind.CELL,
    "constants": StudyKind.CONSTANTS,
    "check": StudyKind.CHECK_OPS,
    "solve": StudyKind.SOLVE,
    "limit": StudyKind.LIMIT,
}

# the desk-scale reference configuration
DEFAULTS = {
    "domain": {"mode": "REDUCED_2D", "extent": [1.0], "half_height": 1.0},
    "physics": {"omega": 1.0, "eps1": 1.0, "eps2": 1.0, "eps3": 1.0, "A": "identity",
                "source": {"lo": 0.5, "hi": 0.75, "amplitude": 1.0}},
    "pattern": {"kind": "CROSS", "bar_width": 0.5, "raster_res": 8},
    "deltas": [0.25, 0.125, 0.0625, 0.03125],
    "delta": 0.125,
    "thetas": [1e-1, 1e-2, 1e-3, 1e-4],
    "eps2_sweep": [0.0, 0.1, 1.0, 10.0],
    "resolution": {"cells_per_period": 8, "grading_ratio": 1.3, "max_size": 0.03125,
                   "core_periods": 2.0, "limit_refine": 4},
    "cell": {"zeta": 8.0, "resolution": 8, "interface_flux": True},
    "constants": {"alpha": 1.0, "tau": 1.0, "omega": 1.0, "theta": 0.5, "diam": None, "fnorm": 1.0},
    "check": {"fault_injection": False, "seed": 12345, "samples": 100},
    "gap_threshold": 0.05,
    "workers": 1,
    "seed": 12345,
    "output": {"dir": "cage_homog_out", "vtk": False},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _strictly_decreasing(xs) -> bool:
    return all(a > b for a, b in zip(xs, xs[1:]))


@dataclass
class StudyConfig:
    kind: StudyKind
    raw: dict
    output_dir: Path
    workers: int = 1
    seed: int = 12345
    base_dir: Path = field(default_factory=Path.cwd)

    # -- typed views -------------------------------------------------------------
    @property
    def domain(self) -> DomainSpec:
        d = self.raw["domain"]
        return DomainSpec(tuple(d["extent"]), float(d["half_height"]), DimensionMode(d["mode"]))

    @property
    def source(self) -> Optional[BandSource]:
        s = self.raw["physics"].get("source")
        if not s:
            return None
        amp = s.get("amplitude", 1.0)
        amp = complex(amp) if not isinstance(amp, (list, tuple)) else complex(amp[0], amp[1])
        L = self.domain.half_height
        lo, hi = float(s["lo"]), float(s["hi"])
        if not 0 < lo < hi <= L:
            raise ConfigError("source band must satisfy 0 < lo < hi <= L")
        return BandSource(lo, hi, amp)

    def params(self, eps2: Optional[float] = None) -> PhysicalParams:
        p = self.raw["physics"]
        A = p.get("A", "identity")
        if isinstance(A, list):
            import numpy as np

            A = np.asarray(A, dtype=float)
        return PhysicalParams(float(p["omega"]), float(p["eps1"]),
                              float(p["eps2"] if eps2 is None else eps2), float(p["eps3"]), A, self.source)

    @property
    def pattern(self) -> LayerPattern:
        p = self.raw["pattern"]
        kind = str(p.get("kind", "CROSS")).upper()
        if kind == "CUSTOM":
            path = Path(p["file"])
            return load_pattern(path if path.is_absolute() else self.base_dir / path)
        return build_pattern(kind, float(p["bar_width"]), int(p["raster_res"]), self.domain.mode.in_plane_dims)

    @property
    def cells_per_period(self) -> int:
        return int(self.raw["resolution"]["cells_per_period"])

    def grading(self, refine: int = 1) -> VerticalGrading:
        r = self.raw["resolution"]
        src = self.source
        bps = tuple(src.breakpoints) if src is not None else ()
        return VerticalGrading(float(r.get("grading_ratio", 1.3)), r.get("max_size"),
                               float(r.get("core_periods", 2.0)), refine, bps)

    @property
    def limit_refine(self) -> int:
        return int(self.raw["resolution"].get("limit_refine", 4))

    @property
    def deltas(self) -> list:
        return [float(d) for d in self.raw["deltas"]]

    @property
    def thetas(self) -> list:
        return [float(t) for t in self.raw["thetas"]]

    def n_periods(self, delta: float) -> int:
        e = self.domain.extent[0]
        n = e / delta
        if abs(n - round(n)) > 1e-9 * n:
            raise ConfigError(f"delta={delta} is not extent/N for an integer N")
        return int(round(n))

    def validate(self) -> "StudyConfig":
        self.domain
        self.pattern
        self.params()
        if self.kind in (StudyKind.CONVERGE_DELTA, StudyKind.SHIELDING):
            ds = self.deltas
            if len(ds) < 1 or not _strictly_decreasing(ds):
                raise ConfigError("deltas must be a non-empty strictly decreasing list")
            for d in ds:
                self.n_periods(d)
        if self.kind is StudyKind.REGULARIZE_THETA:
            th = self.thetas
            delta = float(self.raw["delta"])
            self.n_periods(delta)
            if not th or not _strictly_decreasing(th):
                raise ConfigError("thetas must be a non-empty strictly decreasing list")
            upper = self.params().eps2 / delta**2
            if any(not 0 < t < upper for t in th):
                raise ConfigError(f"every theta must lie in (0, eps2/delta^2 = {upper:.6g})")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        return self


def from_dict(data: Optional[dict], kind=None, base_dir: Optional[Path] = None,
              env: Optional[dict] = None) -> StudyConfig:
    """Build a validated config from a mapping (missing keys take the reference defaults)."""
    if not data:
        raise ConfigError("empty configuration")
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    raw = _merge(DEFAULTS, data)
    if kind is None:
        kind = raw.get("study")
        if kind is None:
            raise ConfigError("configuration has no 'study' key and no command was given")
    if not isinstance(kind, StudyKind):
        kind = COMMAND_KIND.get(str(kind).lower(), kind)
    kind = StudyKind(kind) if not isinstance(kind, StudyKind) else kind
    env = os.environ if env is None else env
    workers = int(env.get("CAGE_HOMOG_WORKERS", raw.get("workers", 1)))
    out = env.get("CAGE_HOMOG_OUTPUT", raw["output"]["dir"])
    base = Path.cwd() if base_dir is None else Path(base_dir)
    out = Path(out)
    if not out.is_absolute():
        out = base / out
    cfg = StudyConfig(kind, raw, out, workers, int(raw.get("seed", 12345)), base)
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, kind=None, env: Optional[dict] = None) -> StudyConfig:
    path = Path(path)
    text = path.read_text()
    data = yaml.safe_load(text) if text.strip() else None
    return from_dict(data, kind, base_dir=path.parent, env=env)

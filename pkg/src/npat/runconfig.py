"""Run configuration: INI text -> frozen dataclasses, validation, and construction of the run's objects.

Grammar (every key optional unless noted; lists are comma separated, points
are "x y" pairs separated by ";"):

    [geometry]  preset = corner | cavity
                arm_length, pad, h                 (corner)
                width, height, h, gamma_start, gamma_end   (cavity)
    [speed]     kind = constant | gradient | file;  c0, gx, gy;  path
    [time]      T (required), cfl
    [phantom]   kind = default | bump | multibump | annulus
                centers, radii, amplitudes, widths, velocity_part, pat
    [region]    source = phantom | mask | doi;  threshold;  path
    [iteration] method = nudging | neumann;  j_max;  stop_ratio;  use_truth;  stride
    [rays]      n_dirs, tangency, heatmap_stride
    [audit]     resolutions                         (list of h values)
    [output]    directory, formats                  (any of field, pgm, pdf)

Relative paths resolve against the directory of the config file. A
manifest.json written by a previous run is accepted in place of the INI file."""
from __future__ import annotations

import configparser
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .config import CFL_DEFAULT, N_DIRS_DEFAULT, STOP_RATIO_DEFAULT, TANGENCY_THRESHOLD
from .errors import ConfigError
from .fieldfile import FieldFile
from .geometry import (
    Geometry,
    Grid,
    RegionMask,
    SpeedField,
    build_cavity_geometry,
    build_corner_geometry,
    check_causal_padding,
    domain_of_influence,
    region_from_phantom,
)
from .operators import Propagator, StatePair
from .phantoms import PhantomKind, PhantomSpec, default_phantom_spec, make_phantom

log = logging.getLogger(__name__)

FORMATS = ("field", "pgm", "pdf")


@dataclass(frozen=True)
class GeometryBlock:
    preset: str = "corner"
    h: float = 0.025
    arm_length: float = 1.0
    pad: float = 2.2
    width: float = 2.0
    height: float = 1.0
    gamma_start: float = 0.5
    gamma_end: float = 1.5


@dataclass(frozen=True)
class SpeedBlock:
    kind: str = "constant"
    c0: float = 1.0
    gx: float = 0.0
    gy: float = 0.0
    path: Optional[Path] = None


@dataclass(frozen=True)
class TimeBlock:
    T: float
    cfl: float = CFL_DEFAULT


@dataclass(frozen=True)
class PhantomBlock:
    spec: Optional[PhantomSpec] = None     # None: default two-bump phantom
    pat: bool = False


@dataclass(frozen=True)
class RegionBlock:
    source: str = "phantom"
    threshold: float = 1e-6
    path: Optional[Path] = None


@dataclass(frozen=True)
class IterationBlock:
    method: str = "nudging"
    j_max: int = 30
    stop_ratio: float = STOP_RATIO_DEFAULT
    use_truth: bool = True
    stride: int = 0                         # 0: write no intermediate iterates


@dataclass(frozen=True)
class RaysBlock:
    n_dirs: int = N_DIRS_DEFAULT
    tangency: float = TANGENCY_THRESHOLD
    heatmap_stride: int = 1


@dataclass(frozen=True)
class AuditBlock:
    resolutions: Tuple[float, ...] = ()


@dataclass(frozen=True)
class OutputBlock:
    directory: Path = Path("out")
    formats: Tuple[str, ...] = ("field",)


@dataclass(frozen=True)
class RunSetup:
    """Objects a command works on, built once from a validated RunConfig."""
    geometry: Geometry
    phantom: StatePair
    region: RegionMask
    prop: Propagator
    clearance: float


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryBlock
    speed: SpeedBlock
    time: TimeBlock
    phantom: PhantomBlock = field(default_factory=PhantomBlock)
    region: RegionBlock = field(default_factory=RegionBlock)
    iteration: IterationBlock = field(default_factory=IterationBlock)
    rays: RaysBlock = field(default_factory=RaysBlock)
    audit: AuditBlock = field(default_factory=AuditBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    text: str = ""
    base_dir: Path = Path(".")

    # ---- loading

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        base_dir = path.parent
        if path.suffix == ".json":
            # relative paths in a manifest's config resolve where the original INI lived
            try:
                doc = json.loads(raw)
                raw = doc["config"]
                base_dir = Path(doc.get("config_dir") or base_dir)
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path} is not a run manifest with a 'config' entry") from exc
        return cls.from_text(raw, base_dir)

    @classmethod
    def from_text(cls, text: str, base_dir=Path(".")) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
        base_dir = Path(base_dir)
        known = {"geometry", "speed", "time", "phantom", "region", "iteration", "rays", "audit", "output"}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        if not cp.has_option("time", "T"):
            raise ConfigError("[time] T is required")
        reader = _Reader(cp, base_dir)
        return cls(
            geometry=reader.geometry(),
            speed=reader.speed(),
            time=TimeBlock(reader.get_float("time", "T"), reader.get_float("time", "cfl", CFL_DEFAULT)),
            phantom=reader.phantom(),
            region=reader.region(),
            iteration=reader.iteration(),
            rays=RaysBlock(reader.get_int("rays", "n_dirs", N_DIRS_DEFAULT),
                           reader.get_float("rays", "tangency", TANGENCY_THRESHOLD),
                           reader.get_int("rays", "heatmap_stride", 1)),
            audit=AuditBlock(tuple(reader.get_floats("audit", "resolutions"))),
            output=reader.output(),
            text=text,
            base_dir=base_dir,
        )

    # ---- construction

    def with_h(self, h: float) -> "RunConfig":
        return replace(self, geometry=replace(self.geometry, h=h))

    def build_geometry(self) -> Geometry:
        g = self.geometry
        if g.preset == "corner":
            grid, bmap = build_corner_geometry(g.arm_length, g.pad, g.h)
        elif g.preset == "cavity":
            grid, bmap = build_cavity_geometry(g.width, g.height, g.h, g.gamma_start, g.gamma_end)
        else:
            raise ConfigError(f"unknown geometry preset {g.preset!r}")
        return Geometry(grid, self.build_speed(grid), bmap)

    def build_speed(self, grid: Grid) -> SpeedField:
        s = self.speed
        if s.kind == "constant":
            return SpeedField.constant(grid, s.c0)
        if s.kind == "gradient":
            return SpeedField.gradient(grid, s.c0, s.gx, s.gy)
        if s.kind == "file":
            if s.path is None:
                raise ConfigError("[speed] kind=file needs a path")
            if not s.path.exists():
                raise ConfigError(f"speed file not found: {s.path}")
            values = FieldFile.read(s.path).values
            if values.shape != grid.shape:
                raise ConfigError(f"speed file {s.path} is {values.shape}, grid is {grid.shape}")
            return SpeedField(values)
        raise ConfigError(f"unknown speed kind {s.kind!r}")

    def build_phantom(self, geometry: Geometry) -> StatePair:
        spec = self.phantom.spec or default_phantom_spec(self.geometry.arm_length)
        return make_phantom(spec, geometry)

    def build_region(self, geometry: Geometry, phantom: StatePair) -> RegionMask:
        r = self.region
        if r.source == "phantom":
            field_ = np.abs(phantom.u0) + np.abs(phantom.u1)
            return region_from_phantom(field_, r.threshold)
        if r.source == "mask":
            if r.path is None or not r.path.exists():
                raise ConfigError(f"region mask file not found: {r.path}")
            mask = FieldFile.read(r.path).to_mask()
            if mask.shape != geometry.grid.shape:
                raise ConfigError(f"region mask {r.path} is {mask.shape}, grid is {geometry.grid.shape}")
            return RegionMask(mask).require_interior()
        if r.source == "doi":
            doi = domain_of_influence(geometry, self.time.T).mask
            core = np.zeros_like(doi)
            core[2:-2, 2:-2] = True
            return RegionMask(doi & core).require_interior()
        raise ConfigError(f"unknown region source {r.source!r}")

    def prepare(self, threads: int = 1) -> RunSetup:
        """Validate every cross-field constraint and build the run's objects (no solves)."""
        it = self.iteration
        if it.j_max < 1:
            raise ConfigError(f"[iteration] j_max must be >= 1, got {it.j_max}")
        if it.method not in ("nudging", "neumann"):
            raise ConfigError(f"unknown iteration method {it.method!r}")
        if it.stride < 0:
            raise ConfigError(f"[iteration] stride must be >= 0, got {it.stride}")
        if self.rays.n_dirs < 8:
            raise ConfigError(f"[rays] n_dirs must be >= 8, got {self.rays.n_dirs}")
        if threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}")
        geometry = self.build_geometry()
        phantom = self.build_phantom(geometry)
        region = self.build_region(geometry, phantom)
        clearance = check_causal_padding(geometry, self.time.T, region)
        prop = Propagator(geometry, self.time.T, self.time.cfl, threads)
        log.info("geometry %dx%d, h=%g, T=%g, dt=%.6g, |K|=%d", geometry.grid.nx, geometry.grid.ny,
                 geometry.grid.h, self.time.T, prop.dt, region.size)
        return RunSetup(geometry, phantom, region, prop, clearance)

    def validate(self) -> None:
        self.prepare()


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, base_dir: Path):
        self.cp = cp
        self.base_dir = base_dir

    def _get(self, section: str, key: str) -> Optional[str]:
        if not self.cp.has_option(section, key):
            return None
        return self.cp.get(section, key).strip()

    def get_str(self, section, key, default=None):
        value = self._get(section, key)
        return default if value in (None, "") else value

    def get_float(self, section, key, default=None):
        value = self._get(section, key)
        if value in (None, ""):
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {value!r} is not a number") from None

    def get_int(self, section, key, default=None):
        value = self._get(section, key)
        if value in (None, ""):
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {value!r} is not an integer") from None

    def get_bool(self, section, key, default=False):
        if self._get(section, key) in (None, ""):
            return default
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key} is not a boolean") from None

    def get_floats(self, section, key):
        value = self._get(section, key)
        if not value:
            return []
        try:
            return [float(v) for v in value.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {value!r} is not a list of numbers") from None

    def get_points(self, section, key):
        value = self._get(section, key)
        if not value:
            return []
        out = []
        for item in value.split(";"):
            parts = item.replace(",", " ").split()
            if len(parts) != 2:
                raise ConfigError(f"[{section}] {key}: {item.strip()!r} is not an 'x y' pair")
            try:
                out.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise ConfigError(f"[{section}] {key}: {item.strip()!r} is not numeric") from None
        return out

    def get_path(self, section, key):
        value = self._get(section, key)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def geometry(self) -> GeometryBlock:
        d = GeometryBlock()
        return GeometryBlock(
            self.get_str("geometry", "preset", d.preset),
            self.get_float("geometry", "h", d.h),
            self.get_float("geometry", "arm_length", d.arm_length),
            self.get_float("geometry", "pad", d.pad),
            self.get_float("geometry", "width", d.width),
            self.get_float("geometry", "height", d.height),
            self.get_float("geometry", "gamma_start", d.gamma_start),
            self.get_float("geometry", "gamma_end", d.gamma_end),
        )

    def speed(self) -> SpeedBlock:
        return SpeedBlock(self.get_str("speed", "kind", "constant"), self.get_float("speed", "c0", 1.0),
                          self.get_float("speed", "gx", 0.0), self.get_float("speed", "gy", 0.0),
                          self.get_path("speed", "path"))

    def phantom(self) -> PhantomBlock:
        kind = self.get_str("phantom", "kind", "default")
        pat = self.get_bool("phantom", "pat", False)
        if kind == "default":
            return PhantomBlock(None, pat)
        try:
            pkind = PhantomKind(kind)
        except ValueError:
            raise ConfigError(f"unknown phantom kind {kind!r}") from None
        centers = self.get_points("phantom", "centers")
        radii = self.get_floats("phantom", "radii")
        amps = self.get_floats("phantom", "amplitudes") or [1.0] * len(centers)
        widths = self.get_floats("phantom", "widths")
        spec = PhantomSpec(pkind, tuple(centers), tuple(radii), tuple(amps), tuple(widths),
                           self.get_bool("phantom", "velocity_part", False))
        return PhantomBlock(spec, pat)

    def region(self) -> RegionBlock:
        return RegionBlock(self.get_str("region", "source", "phantom"),
                           self.get_float("region", "threshold", 1e-6), self.get_path("region", "path"))

    def iteration(self) -> IterationBlock:
        d = IterationBlock()
        return IterationBlock(self.get_str("iteration", "method", d.method),
                              self.get_int("iteration", "j_max", d.j_max),
                              self.get_float("iteration", "stop_ratio", d.stop_ratio),
                              self.get_bool("iteration", "use_truth", d.use_truth),
                              self.get_int("iteration", "stride", d.stride))

    def output(self) -> OutputBlock:
        formats = tuple(f.strip() for f in (self.get_str("output", "formats", "field") or "").split(",") if f.strip())
        bad = [f for f in formats if f not in FORMATS]
        if bad:
            raise ConfigError(f"unknown output format(s): {', '.join(bad)}")
        return OutputBlock(self.get_path("output", "directory") or Path("out"), formats)

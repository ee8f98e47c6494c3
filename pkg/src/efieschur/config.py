"""
Experiment configuration: a flat ``key = value`` text file, with command-line
flags taking precedence.

Geometry specs::

    plate:W          square plate, side W wavelengths
    plate:WxH        rectangular plate
    cube:S           cube, side S wavelengths
    sphere:R[:L]     icosphere of radius R wavelengths, L subdivisions (default 3)
    file:PATH        mesh file in the text format of :mod:`efieschur.mesh`
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import mesh as meshmod
from .ordering import ALGORITHMS

__all__ = ["ConfigError", "ExperimentConfig", "parse_geometry", "parse_range", "load_config"]

PRECONDITIONERS = ("schur", "nullfield", "jacobi", "none")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    geometry: str = "plate:2"
    freq_ghz: float = 0.3
    density: float = 10.0  # cells per wavelength (plate, cube)
    leaf_size: int = 100
    max_level: int | None = None
    eta: float = 1.0
    tol_aca: float = 1e-4
    fill_tol: float = 1e-2
    ordering: str = "sloan"
    pc: str = "schur"
    gmres_tol: float = 1e-6
    restart: int | None = None
    max_iter: int = 2000
    sweep_theta_deg: float = 60.0
    sweep_phi_deg: str = "0:180:7"  # start:stop:count, endpoints included
    polarization: str = "theta"
    dense_check: int = 0  # angles checked against the dense solve in `solve`
    ladder: str = "2,3,4,6,8"  # plate sides in wavelengths for `scaling`
    out_dir: str = "results"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def frequency(self):
        return self.freq_ghz * 1e9

    @property
    def wavelength(self):
        return meshmod.wavelength(self.frequency)

    def validate(self):
        for name in ("freq_ghz", "density", "eta", "tol_aca", "gmres_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.fill_tol < 0:
            raise ConfigError("fill_tol must be non-negative (0 keeps fill-in dense)")
        if self.leaf_size < 1:
            raise ConfigError("leaf_size must be at least 1")
        if self.max_level is not None and self.max_level < 0:
            raise ConfigError("max_level must be non-negative")
        if self.restart is not None and self.restart < 1:
            raise ConfigError("restart must be at least 1")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.ordering not in ALGORITHMS:
            raise ConfigError(f"ordering must be one of {ALGORITHMS}")
        if self.pc not in PRECONDITIONERS:
            raise ConfigError(f"pc must be one of {PRECONDITIONERS}")
        if self.polarization not in ("theta", "phi"):
            raise ConfigError("polarization must be theta or phi")
        if self.dense_check < 0:
            raise ConfigError("dense_check must be non-negative")
        parse_geometry(self.geometry)
        parse_range(self.sweep_phi_deg)
        self.ladder_sides()

    def ladder_sides(self):
        try:
            sides = [float(v) for v in self.ladder.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad ladder {self.ladder!r}") from None
        if not sides or any(v <= 0 for v in sides):
            raise ConfigError("ladder needs positive plate sides")
        return sides

    def sweep_angles(self):
        """(theta, phi) pairs in radians for the monostatic sweep."""
        phis = parse_range(self.sweep_phi_deg)
        theta = np.deg2rad(self.sweep_theta_deg)
        return [(theta, np.deg2rad(p)) for p in phis]

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values):
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _coerce(key, kinds[key], raw)
        return cls(**out)

    @classmethod
    def from_text(cls, text):
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        return cls.from_mapping(values)


def _coerce(key, kind, raw):
    if not isinstance(raw, str):
        return raw
    kind = str(kind)
    if "None" in kind and raw.lower() in ("none", ""):
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def load_config(path=None, overrides=None):
    """Defaults, then the file (if any), then ``overrides`` (flags win)."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = ExperimentConfig.from_text(text)
        values = {f.name: getattr(base, f.name) for f in fields(base)}
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return ExperimentConfig.from_mapping(values)


def parse_range(spec):
    """``start:stop:count`` (endpoints included) or a single value."""
    parts = str(spec).split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            if count < 1:
                raise ConfigError("sweep count must be at least 1")
            return np.linspace(start, stop, count)
    except ValueError:
        pass
    raise ConfigError(f"bad range {spec!r}; expected start:stop:count")


def parse_geometry(spec):
    """Split a geometry spec into ``(kind, args)``; raises :class:`ConfigError`."""
    kind, _, rest = str(spec).partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "plate":
            w, _, h = rest.partition("x")
            w = float(w)
            h = float(h) if h else w
            if w <= 0 or h <= 0:
                raise ValueError
            return kind, (w, h)
        if kind == "cube":
            s = float(rest)
            if s <= 0:
                raise ValueError
            return kind, (s,)
        if kind == "sphere":
            r, _, lvl = rest.partition(":")
            r, lvl = float(r), int(lvl) if lvl else 3
            if r <= 0 or lvl < 0:
                raise ValueError
            return kind, (r, lvl)
        if kind == "file" and rest:
            return kind, (rest,)
    except ValueError:
        pass
    raise ConfigError(f"bad geometry spec {spec!r}")


def make_mesh(cfg, geometry=None):
    kind, args = parse_geometry(geometry or cfg.geometry)
    f = cfg.frequency
    if kind == "plate":
        return meshmod.generate_plate(args[0], args[1], cfg.density, f)
    if kind == "cube":
        return meshmod.generate_cube(args[0], cfg.density, f)
    if kind == "sphere":
        return meshmod.generate_sphere(args[0], args[1], f)
    return meshmod.load_mesh(args[0], f)

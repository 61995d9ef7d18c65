"""Run configuration: TOML files with unit-suffixed physical quantities.

Every physical scalar is written as a string ``"<number> <unit>"``, for
example ``omega10 = "2.4e15 rad_s"``.  Dimensionless entries (S, N,
reflection amplitudes, cutoffs) are plain numbers.  Unknown sections or
keys are rejected by name.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .params import HBAR, CavityMode, DyeParameters, GeometrySpec, LaserSpec
from .rates import RateOptions


class ConfigError(ValueError):
    pass


DEBYE = 3.33564e-30
EV = 1.602176634e-19

# unit -> (dimension, factor to SI)
UNITS = {
    "rad_s": ("angular", 1.0),
    "s-1": ("angular", 1.0),
    "Hz": ("angular", 2 * math.pi),
    "eV": ("angular", EV / HBAR),
    "m": ("length", 1.0),
    "um": ("length", 1e-6),
    "nm": ("length", 1e-9),
    "m2": ("area", 1.0),
    "um2": ("area", 1e-12),
    "K": ("temperature", 1.0),
    "C_m": ("dipole", 1.0),
    "D": ("dipole", DEBYE),
    "J_m2": ("spectral_intensity", 1.0),
    "s": ("time", 1.0),
    "ps": ("time", 1e-12),
    "fs": ("time", 1e-15),
}


def quantity(text, dimension: str, where: str) -> float:
    """Parse ``"<number> <unit>"`` into SI, checking the dimension."""
    if not isinstance(text, str):
        raise ConfigError(f"{where}: expected a quantity with a unit suffix, got {text!r}")
    parts = text.split()
    if len(parts) != 2:
        raise ConfigError(f"{where}: expected '<number> <unit>', got {text!r}")
    try:
        value = float(parts[0])
    except ValueError:
        raise ConfigError(f"{where}: bad number {parts[0]!r}") from None
    if parts[1] not in UNITS:
        raise ConfigError(f"{where}: unknown unit {parts[1]!r}")
    dim, factor = UNITS[parts[1]]
    if dim != dimension:
        raise ConfigError(f"{where}: unit {parts[1]!r} is a {dim}, expected a {dimension}")
    return value * factor


# schema: section -> key -> kind; kind is a dimension from UNITS, a list of
# angular quantities, or a plain TOML type
SCHEMA = {
    "run": {"name": "string", "engine": "string", "output": "string"},
    "dye": {
        "omega10": "angular", "Omega": "angular", "S": "number", "d01": "dipole",
        "T": "temperature", "N": "number", "orientation": "vector",
    },
    "laser": {
        "I0": "spectral_intensity", "lineshape": "string", "width": "angular",
        "center": "angular", "T_laser": "temperature",
    },
    "geometry": {
        "kind": "string", "length": "length", "r1": "reflection", "r2": "reflection",
        "perfect_mirrors": "bool", "permittivity": "number", "position": "length",
        "mode_area": "area", "near_field": "bool", "isotropic": "bool",
    },
    "rates": {
        "delta_kappa": "angular", "delta_gamma_up": "angular", "gamma_down": "angular",
        "gamma_down_tot": "angular", "scan_window": "angular_list", "max_modes": "integer",
    },
    "solver": {
        "molecules": "integer", "photon_cutoff": "integer", "t_final": "time", "dt": "time",
        "samples": "integer", "literal_double_sum": "bool", "tolerance": "number",
        "quantum_modes": "integer",
    },
    "initial": {"photons": "integer_list", "excited": "integer_list", "f": "number"},
    "scan": {"pumps": "angular_list", "pump_min": "angular", "pump_max": "angular",
             "points": "integer", "fraction": "number", "rtol": "number"},
}
MODE_KEYS = {"omega": "angular", "gamma": "angular", "Omega": "angular"}
REQUIRED = {"dye": ("omega10", "Omega", "S", "d01", "T")}


def _convert(value, kind: str, where: str):
    if kind in ("angular", "length", "area", "temperature", "dipole", "spectral_intensity", "time"):
        return quantity(value, kind, where)
    if kind == "angular_list":
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list of quantities")
        return [quantity(v, "angular", f"{where}[{i}]") for i, v in enumerate(value)]
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a plain number, got {value!r}")
        return float(value)
    if kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind == "integer_list":
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of integers")
        return list(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if kind == "string":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if kind == "vector":
        if not isinstance(value, list) or len(value) != 3:
            raise ConfigError(f"{where}: expected three numbers")
        return [float(v) for v in value]
    if kind == "reflection":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return [float(value), 0.0]
        if isinstance(value, list) and len(value) == 2:
            return [float(value[0]), float(value[1])]
        raise ConfigError(f"{where}: expected a number or [re, im]")
    raise AssertionError(kind)  # pragma: no cover


def normalize(raw: dict) -> dict:
    """Strictly validated copy of a parsed TOML document in SI units."""
    out: dict = {}
    for section, body in raw.items():
        if section == "modes":
            if not isinstance(body, list):
                raise ConfigError("modes: expected an array of tables [[modes]]")
            modes = []
            for i, m in enumerate(body):
                for k in m:
                    if k not in MODE_KEYS:
                        raise ConfigError(f"unknown key '{k}' in [[modes]] entry {i}")
                missing = set(MODE_KEYS) - set(m)
                if missing:
                    raise ConfigError(f"[[modes]] entry {i} is missing {sorted(missing)}")
                modes.append({k: _convert(v, MODE_KEYS[k], f"modes[{i}].{k}") for k, v in m.items()})
            out["modes"] = modes
            continue
        if section not in SCHEMA:
            raise ConfigError(f"unknown section '{section}'")
        if not isinstance(body, dict):
            raise ConfigError(f"section '{section}' must be a table")
        sec = {}
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            sec[key] = _convert(value, SCHEMA[section][key], f"{section}.{key}")
        out[section] = sec
    for section, keys in REQUIRED.items():
        if section not in out:
            raise ConfigError(f"missing section [{section}]")
        for k in keys:
            if k not in out[section]:
                raise ConfigError(f"missing key '{k}' in [{section}]")
    if "geometry" not in out and "modes" not in out:
        raise ConfigError("need a [geometry] section or a [[modes]] list")
    return out


def config_hash(normalized: dict) -> str:
    text = json.dumps(normalized, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class RunConfig:
    data: dict
    source: str = "<memory>"
    hash: str = field(init=False)

    def __post_init__(self):
        self.hash = config_hash(self.data)

    @classmethod
    def from_text(cls, text: str, source: str = "<memory>") -> "RunConfig":
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        return cls(normalize(raw), source)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), str(path))

    @classmethod
    def builtin(cls, name: str = "reference") -> "RunConfig":
        text = resources.files("nestedbec").joinpath("configs", f"{name}.toml").read_text()
        return cls.from_text(text, f"builtin:{name}")

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.hash, "version": __version__}

    @property
    def name(self) -> str:
        return self.section("run").get("name", "run")

    @property
    def engine(self) -> str:
        engine = self.section("run").get("engine", "meanfield")
        if engine not in ("quantum", "meanfield"):
            raise ConfigError(f"run.engine must be 'quantum' or 'meanfield', got {engine!r}")
        return engine

    def _build(self, cls, section: str, **kw):
        try:
            return cls(**kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    def dye(self) -> DyeParameters:
        d = dict(self.section("dye"))
        if "orientation" in d:
            d["orientation"] = tuple(d["orientation"])
        return self._build(DyeParameters, "dye", **d)

    def laser(self) -> LaserSpec:
        d = dict(self.section("laser"))
        d.setdefault("I0", 0.0)
        return self._build(LaserSpec, "laser", **d)

    def geometry(self) -> GeometrySpec | None:
        if "geometry" not in self.data:
            return None
        d = dict(self.section("geometry"))
        d.pop("isotropic", None)
        for k in ("r1", "r2"):
            if k in d:
                d[k] = complex(*d[k])
        return self._build(GeometrySpec, "geometry", **d)

    def modes(self) -> list[CavityMode] | None:
        if "modes" not in self.data:
            return None
        return [self._build(CavityMode, "modes", index=i, **m) for i, m in enumerate(self.data["modes"])]

    def rate_options(self) -> RateOptions:
        d = dict(self.section("rates"))
        if "scan_window" in d:
            w = d["scan_window"]
            if len(w) != 2:
                raise ConfigError("rates.scan_window needs two entries")
            d["scan_window"] = (w[0], w[1])
        return self._build(RateOptions, "rates", **d)

    def pump_grid(self) -> np.ndarray:
        s = self.section("scan")
        if "pumps" in s:
            if any(k in s for k in ("pump_min", "pump_max", "points")):
                raise ConfigError("[scan] give either 'pumps' or 'pump_min'/'pump_max'/'points'")
            return np.asarray(s["pumps"], dtype=float)
        try:
            lo, hi, k = s["pump_min"], s["pump_max"], s.get("points", 41)
        except KeyError as exc:
            raise ConfigError(f"[scan] missing {exc.args[0]!r}") from None
        if not 0 < lo <= hi or k < 1:
            raise ConfigError("[scan] need 0 < pump_min <= pump_max and points >= 1")
        return np.geomspace(lo, hi, k)

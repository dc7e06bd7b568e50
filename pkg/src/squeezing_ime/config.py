"""Scenario configuration: a strict YAML schema whose defaults are the module defaults.

A configuration names a system (dampings plus ``G``/``F`` entries given as
``[row, col, re, im]`` with 1-based indices, rates in units of the first
mode's damping), a symmetric frequency grid, the analysis to run and
optional per-analysis sections.  Unknown keys are rejected; missing keys
take the module defaults so that ``serialize -> parse -> serialize`` is
idempotent.
"""

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import DEFAULT_GRID_MAX, DEFAULT_GRID_POINTS, FrequencyGrid, QuadraticSystem
from .errors import ValidationError
from .ime import (
    DEFAULT_BAND,
    DEFAULT_BAND_POINTS,
    DEFAULT_N_STARTS,
    DEFAULT_TOL_DB,
    OBJECTIVES,
    ImeChain,
    ImeStage,
    ImeTopology,
)
from .mesh import DEFAULT_N_CAVITIES, DEFAULT_ORDERING, DEFAULT_PHASE_TOL, ORDERINGS
from .spectra import DEFAULT_SWEEP_RESOLUTION_DEG, LocalOscillator, lo_from_angles

ANALYSES = ("spectrum", "abmd", "hd-sweep", "optimize-ime", "decompose")
BUNDLED = ("single_mode_opo", "two_mode_opo", "four_mode")


def _float(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ValidationError(f"field '{path}': expected a finite number, got {v!r}")
    return float(v)


def _int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"field '{path}': expected an integer, got {v!r}")
    return int(v)


def _bool(v, path):
    if not isinstance(v, bool):
        raise ValidationError(f"field '{path}': expected true/false, got {v!r}")
    return v


def _floats(v, path):
    if not isinstance(v, list):
        raise ValidationError(f"field '{path}': expected a list of numbers, got {v!r}")
    return [_float(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _band(v, path):
    out = _floats(v, path)
    if len(out) != 2 or not 0 <= out[0] < out[1]:
        raise ValidationError(f"field '{path}': expected [low, high] with 0 <= low < high, got {v!r}")
    return out


def _choice(options):
    def conv(v, path):
        if v not in options:
            raise ValidationError(f"field '{path}': expected one of {list(options)}, got {v!r}")
        return v

    return conv


def _optional(conv):
    def wrapped(v, path):
        return None if v is None else conv(v, path)

    return wrapped


def _pairs(v, path):
    if not isinstance(v, list):
        raise ValidationError(f"field '{path}': expected a list of [m, n] pairs")
    out = []
    for i, p in enumerate(v):
        if not (isinstance(p, list) and len(p) == 2):
            raise ValidationError(f"field '{path}[{i}]': expected [m, n]")
        out.append([_int(p[0], f"{path}[{i}][0]"), _int(p[1], f"{path}[{i}][1]")])
    return out


def _entries(v, path):
    if not isinstance(v, list):
        raise ValidationError(f"field '{path}': expected a list of [row, col, re, im] entries")
    out = []
    for i, e in enumerate(v):
        if not (isinstance(e, list) and len(e) == 4):
            raise ValidationError(f"field '{path}[{i}]': expected [row, col, re, im], got {e!r}")
        out.append([_int(e[0], f"{path}[{i}].row"), _int(e[1], f"{path}[{i}].col"),
                    _float(e[2], f"{path}[{i}].re"), _float(e[3], f"{path}[{i}].im")])
    return out


def _stage(v, path):
    if not isinstance(v, dict):
        raise ValidationError(f"field '{path}': expected a mapping")
    _reject_unknown(v, {"detunings", "gamma", "couplings"}, path)
    for key in ("detunings", "gamma"):
        if key not in v:
            raise ValidationError(f"field '{path}.{key}' is required")
    couplings = []
    for i, c in enumerate(v.get("couplings") or []):
        if not (isinstance(c, list) and len(c) == 4):
            raise ValidationError(f"field '{path}.couplings[{i}]': expected [m, n, theta, phi]")
        couplings.append([_int(c[0], f"{path}.couplings[{i}].m"), _int(c[1], f"{path}.couplings[{i}].n"),
                          _float(c[2], f"{path}.couplings[{i}].theta"),
                          _float(c[3], f"{path}.couplings[{i}].phi")])
    return {"detunings": _floats(v["detunings"], f"{path}.detunings"),
            "gamma": _floats(v["gamma"], f"{path}.gamma"), "couplings": couplings}


def _stages(v, path):
    if not isinstance(v, list):
        raise ValidationError(f"field '{path}': expected a list of stages")
    return [_stage(s, f"{path}[{i}]") for i, s in enumerate(v)]


# section -> key -> (default, converter); defaults are the module defaults
SCHEMA = {
    "grid": {
        "max": (DEFAULT_GRID_MAX, _float),
        "points": (DEFAULT_GRID_POINTS, _int),
    },
    "spectrum": {
        "lo_angles": (None, _optional(_floats)),
    },
    "hd_sweep": {
        "resolution_deg": (DEFAULT_SWEEP_RESOLUTION_DEG, _float),
        "target_index": (None, _optional(_int)),
    },
    "abmd": {},
    "optimize": {
        "target_index": (None, _optional(_int)),
        "band": (list(DEFAULT_BAND), _band),
        "n_stages": (1, _int),
        "couplings": (None, _optional(_pairs)),
        "equal_damping": (True, _bool),
        "objective": ("db", _choice(OBJECTIVES)),
        "seed": (None, _optional(_int)),
        "n_starts": (DEFAULT_N_STARTS, _int),
        "n_points": (DEFAULT_BAND_POINTS, _int),
        "tol_db": (DEFAULT_TOL_DB, _float),
    },
    "ime": {
        "stages": ([], _stages),
        "lo_angles": (None, _optional(_floats)),
    },
    "decompose": {
        "ordering": (DEFAULT_ORDERING, _choice(ORDERINGS)),
        "n_cavities": (DEFAULT_N_CAVITIES, _int),
        "phase_tolerance": (DEFAULT_PHASE_TOL, _float),
        "band": (None, _optional(_band)),
    },
}
SYSTEM_SCHEMA = {"gamma": _floats, "G": _entries, "F": _entries}


def _reject_unknown(mapping, allowed, path):
    for key in mapping:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ValidationError(f"unknown key '{where}'")


def _matrix(entries, n, name):
    mat = np.zeros((n, n), dtype=complex)
    seen = set()
    for i, (r, c, re, im) in enumerate(entries):
        if not (1 <= r <= n and 1 <= c <= n):
            raise ValidationError(f"field 'system.{name}[{i}]': index ({r}, {c}) out of range for {n} modes")
        if (r, c) in seen:
            raise ValidationError(f"field 'system.{name}[{i}]': duplicate entry ({r}, {c})")
        seen.add((r, c))
        mat[r - 1, c - 1] = re + 1j * im
    return mat


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario; ``sections`` holds every schema section with defaults filled in."""

    name: str
    analysis: str
    system: dict
    sections: dict

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValidationError("configuration must be a mapping at top level")
        _reject_unknown(data, {"name", "analysis", "system", *SCHEMA}, "")
        if "system" not in data:
            raise ValidationError("field 'system' is required")
        name = data.get("name", "scenario")
        if not isinstance(name, str):
            raise ValidationError(f"field 'name': expected a string, got {name!r}")
        analysis = _choice(ANALYSES)(data.get("analysis", "spectrum"), "analysis")
        raw = data["system"]
        if not isinstance(raw, dict):
            raise ValidationError("field 'system': expected a mapping")
        _reject_unknown(raw, SYSTEM_SCHEMA, "system")
        if "gamma" not in raw:
            raise ValidationError("field 'system.gamma' is required")
        system = {k: conv(raw.get(k, []), f"system.{k}") for k, conv in SYSTEM_SCHEMA.items()}
        sections = {}
        for sec, fields in SCHEMA.items():
            given = data.get(sec) or {}
            if not isinstance(given, dict):
                raise ValidationError(f"field '{sec}': expected a mapping")
            _reject_unknown(given, fields, sec)
            sections[sec] = {k: (conv(given[k], f"{sec}.{k}") if k in given else copy.deepcopy(default))
                             for k, (default, conv) in fields.items()}
        cfg = cls(name, analysis, system, sections)
        cfg.build_system()
        cfg.build_grid()
        cfg.build_chain()
        return cfg

    def to_dict(self):
        out = {"name": self.name, "analysis": self.analysis, "system": copy.deepcopy(self.system)}
        out.update(copy.deepcopy(self.sections))
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def replace(self, analysis=None, grid_points=None, grid_max=None, seed=None):
        """Copy with command-line overrides applied (and re-validated)."""
        data = self.to_dict()
        if analysis is not None:
            data["analysis"] = analysis
        if grid_points is not None:
            data["grid"]["points"] = grid_points
        if grid_max is not None:
            data["grid"]["max"] = grid_max
        if seed is not None:
            data["optimize"]["seed"] = seed
        return ScenarioConfig.from_dict(data)

    @property
    def n_modes(self):
        return len(self.system["gamma"])

    def build_system(self):
        n = self.n_modes
        if n < 1:
            raise ValidationError("field 'system.gamma': at least one mode is required")
        return QuadraticSystem(_matrix(self.system["G"], n, "G"), _matrix(self.system["F"], n, "F"),
                               self.system["gamma"])

    def build_grid(self):
        g = self.sections["grid"]
        if g["points"] % 2 == 0:
            raise ValidationError("field 'grid.points': must be odd so that the grid contains omega = 0")
        return FrequencyGrid.uniform(g["max"], g["points"])

    def build_chain(self):
        """Explicit IME chain of the ``ime`` section, or None when it lists no stages."""
        stages = self.sections["ime"]["stages"]
        if not stages:
            return None
        out = []
        for i, st in enumerate(stages):
            couplings = {}
            for m, k, theta, phi in st["couplings"]:
                if not 1 <= m < k <= self.n_modes:
                    raise ValidationError(f"field 'ime.stages[{i}].couplings': invalid pair ({m}, {k})")
                couplings[(m - 1, k - 1)] = (theta, phi)
            if len(st["detunings"]) != self.n_modes:
                raise ValidationError(f"field 'ime.stages[{i}].detunings': expected {self.n_modes} values")
            out.append(ImeStage.from_parameters(st["detunings"], st["gamma"], couplings))
        return ImeChain(tuple(out), self.n_modes)

    def build_lo(self, section="ime"):
        angles = self.sections[section]["lo_angles"]
        if angles is None:
            return None
        return LocalOscillator(lo_from_angles(angles, self.n_modes))

    def build_topology(self):
        opt = self.sections["optimize"]
        pairs = None if opt["couplings"] is None else tuple((m - 1, n - 1) for m, n in opt["couplings"])
        return ImeTopology(self.n_modes, opt["n_stages"], pairs, opt["equal_damping"],
                           with_lo=opt["objective"] != "stationary")


def parse_config(text):
    """Parse YAML text into a ScenarioConfig; syntax errors report their line."""
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ValidationError(f"configuration parse error{where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"configuration parse error: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def bundled_config_text(name):
    if name not in BUNDLED:
        raise ValidationError(f"unknown bundled scenario {name!r}; choose from {list(BUNDLED)}")
    return resources.files("squeezing_ime").joinpath("configs", f"{name}.yaml").read_text()


def load_config(source):
    """Load a configuration from a file path or a bundled scenario name."""
    if str(source) in BUNDLED and not Path(source).exists():
        return parse_config(bundled_config_text(str(source)))
    return parse_config(Path(source).read_text())

"""Flat ``key = value`` run configuration with unit-suffixed keys.

Every key ends in a unit suffix (``_m``, ``_hz``, ``_ohm`` ...); enumerations
use ``_mode`` and file paths ``_path``.  Blank lines and ``#`` comments are
ignored.  Parsing reports every violation at once, each with its line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

from . import device as dv
from .fitting import DEFAULT_K_CUB, prototype_calibration
from .magnetics import build_layout, coil_resistance, transduction_coefficient

UNIT_SUFFIXES = (
    "_kgpm3", "_ohmm", "_npm3", "_npm", "_vspm", "_hzps", "_pm2", "_m3",
    "_ohm", "_hz", "_kg", "_m", "_t", "_count", "_ratio", "_mode", "_path",
)

_FLOAT, _INT, _LIST, _STR = "float", "int", "list", "str"

# key -> (kind, default, description); None defaults mean "derive".
SCHEMA: dict[str, tuple[str, Any, str]] = {
    "device_preset_mode": (_STR, "prototype", "prototype (calibrated reference device) or raw"),
    "magnet_side_a_m": (_FLOAT, dv.DEFAULT_MAGNET_SIDE, "magnet footprint edge a"),
    "magnet_side_b_m": (_FLOAT, dv.DEFAULT_MAGNET_SIDE, "magnet footprint edge b"),
    "magnet_thickness_m": (_FLOAT, dv.DEFAULT_MAGNET_THICKNESS, "magnet height"),
    "magnet_remanence_t": (_FLOAT, dv.DEFAULT_REMANENCE, "remanent flux density"),
    "magnet_density_kgpm3": (_FLOAT, dv.DEFAULT_DENSITY, "magnet density"),
    "magnet_gap_m": (_FLOAT, dv.DEFAULT_GAP, "rest gap, coil plane to magnet bottom"),
    "coil_turns_count": (_INT, 52, "number of turns"),
    "coil_track_width_m": (_FLOAT, 20e-6, "track width"),
    "coil_track_thickness_m": (_FLOAT, 15e-6, "track thickness"),
    "coil_track_separation_m": (_FLOAT, 15e-6, "gap between tracks"),
    "coil_outer_side_m": (_FLOAT, 10e-3, "outer side of the spiral"),
    "coil_resistivity_ohmm": (_FLOAT, dv.CU_RESISTIVITY, "track resistivity"),
    "mass_kg": (_FLOAT, None, "proof mass; default magnet mass"),
    "natural_freq_hz": (_FLOAT, None, "linear natural frequency (raw preset)"),
    "k_lin_npm": (_FLOAT, None, "linear stiffness; overrides natural_freq_hz"),
    "k_cub_npm3": (_FLOAT, None, "cubic stiffness"),
    "zeta_p_ratio": (_FLOAT, None, "parasitic damping ratio"),
    "gamma_sat_pm2": (_FLOAT, 0.0, "amplitude-dependent damping coefficient"),
    "coupling_k_vspm": (_FLOAT, None, "transduction coefficient; default from magnetics"),
    "r_coil_ohm": (_FLOAT, None, "coil resistance; default from layout"),
    "device_volume_m3": (_FLOAT, dv.DEFAULT_DEVICE_VOLUME, "active device volume"),
    "r_load_ohm": (_FLOAT, 1e5, "load resistance"),
    "y0_m": (_FLOAT, 5.1e-6, "base displacement amplitude"),
    "f_hz": (_FLOAT, 344.0, "excitation frequency"),
    "branch_mode": (_STR, "up", "response branch: up or down"),
    "track_resonance_mode": (_STR, "on", "on: operating points at the response peak"),
    "sweep_f_start_hz": (_FLOAT, None, "sweep start; default below resonance"),
    "sweep_f_end_hz": (_FLOAT, None, "sweep end; default above resonance"),
    "sweep_rate_hzps": (_FLOAT, 1.0, "sweep rate"),
    "sweep_direction_mode": (_STR, "both", "up, down or both"),
    "sweep_bin_hz": (_FLOAT, 0.5, "sweep bin width"),
    "sweep_steps_per_cycle_count": (_INT, 64, "RK4 steps per forcing cycle"),
    "gap_min_m": (_FLOAT, 0.1e-3, "coil table: smallest gap"),
    "gap_max_m": (_FLOAT, 3e-3, "coil table: largest gap"),
    "gap_points_count": (_INT, 15, "coil table: number of gaps"),
    "fr_f_min_hz": (_FLOAT, None, "frequency response: lower edge"),
    "fr_f_max_hz": (_FLOAT, None, "frequency response: upper edge"),
    "fr_points_count": (_INT, 401, "frequency response: grid size"),
    "backbone_mode": (_STR, "off", "on: also write backbone.csv"),
    "r_min_ohm": (_FLOAT, 1.0, "load scan: smallest resistance"),
    "r_max_ohm": (_FLOAT, 1e7, "load scan: largest resistance"),
    "r_points_count": (_INT, 61, "load scan: number of points"),
    "scale_list_ratio": (_LIST, [0.5, 0.7, 1.0, 1.4, 2.0], "scaling factors"),
    "thickness_list_m": (_LIST, [15e-6, 20e-6, 25e-6, 30e-6, 35e-6, 40e-6], "track thicknesses"),
    "fit_csv_path": (_STR, None, "measured curve CSV"),
    "fit_free_mode": (_STR, "zeta_p,coupling_k", "comma-separated free parameters"),
    "fit_starts_count": (_INT, 8, "multi-start count"),
    "zeta_p_min_ratio": (_FLOAT, 1e-3, "fit bound"),
    "zeta_p_max_ratio": (_FLOAT, 0.1, "fit bound"),
    "coupling_k_min_vspm": (_FLOAT, 1e-2, "fit bound"),
    "coupling_k_max_vspm": (_FLOAT, 10.0, "fit bound"),
    "k_cub_min_npm3": (_FLOAT, 1e6, "fit bound"),
    "k_cub_max_npm3": (_FLOAT, 1e12, "fit bound"),
}

ENUMS = {
    "device_preset_mode": ("prototype", "raw"),
    "branch_mode": ("up", "down"),
    "track_resonance_mode": ("on", "off"),
    "sweep_direction_mode": ("up", "down", "both"),
    "backbone_mode": ("on", "off"),
}

MAGNET_KEYS = {
    "magnet_side_a_m": "side_a",
    "magnet_side_b_m": "side_b",
    "magnet_thickness_m": "thickness",
    "magnet_remanence_t": "remanence",
    "magnet_density_kgpm3": "density",
    "magnet_gap_m": "gap_z0",
}
COIL_KEYS = {
    "coil_turns_count": "n_turns",
    "coil_track_width_m": "track_width",
    "coil_track_thickness_m": "track_thickness",
    "coil_track_separation_m": "track_separation",
    "coil_outer_side_m": "outer_side",
    "coil_resistivity_ohmm": "resistivity",
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any]
    explicit: frozenset[str] = field(default_factory=frozenset)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def is_set(self, key: str) -> bool:
        return key in self.explicit


def _convert(kind: str, raw: str) -> Any:
    if kind == _STR:
        return raw
    if kind == _INT:
        return int(raw)
    if kind == _LIST:
        vals = [float(p) for p in raw.split(",") if p.strip()]
        if not vals:
            raise ValueError("empty list")
        return vals
    return float(raw)


def parse_config(text: str) -> RunConfig:
    errors: list[str] = []
    values = {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in SCHEMA.items()}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if not key.endswith(UNIT_SUFFIXES):
            errors.append(f"line {lineno}: key {key!r} has no unit suffix (e.g. _m, _hz, _ohm)")
            continue
        if key not in SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
            continue
        seen[key] = lineno
        kind = SCHEMA[key][0]
        try:
            val = _convert(kind, raw)
        except ValueError:
            errors.append(f"line {lineno}: {key} expects {kind}, got {raw!r}")
            continue
        nums = val if isinstance(val, list) else [val]
        if kind in (_FLOAT, _LIST) and not all(math.isfinite(x) for x in nums):
            errors.append(f"line {lineno}: {key} must be finite, got {raw!r}")
            continue
        if key in ENUMS and val not in ENUMS[key]:
            errors.append(f"line {lineno}: {key} must be one of {ENUMS[key]}, got {val!r}")
            continue
        values[key] = val
    if errors:
        raise ConfigError(errors)
    return RunConfig(values=values, explicit=frozenset(seen))


def build_device(cfg: RunConfig) -> dv.DeviceParams:
    """Device described by ``cfg``; explicit keys override the preset."""
    magnet = dv.MagnetSpec(**{f: cfg[k] for k, f in MAGNET_KEYS.items()})
    coil = dv.CoilSpec(**{f: cfg[k] for k, f in COIL_KEYS.items()})
    geometry_changed = any(cfg.is_set(k) for k in (*MAGNET_KEYS, *COIL_KEYS))

    if cfg["device_preset_mode"] == "prototype":
        k_cub = cfg["k_cub_npm3"] if cfg.is_set("k_cub_npm3") else DEFAULT_K_CUB
        base = prototype_calibration(k_cub).device
        res = base.resonator
        coupling, r_coil = base.coupling_k, base.r_coil
        if geometry_changed:
            layout = build_layout(coil)
            coupling = transduction_coefficient(magnet, layout, magnet.gap_z0)
            r_coil = coil_resistance(layout, coil.resistivity)
    else:
        mass = cfg["mass_kg"] if cfg["mass_kg"] is not None else magnet.mass
        if cfg["k_lin_npm"] is not None:
            k_lin = cfg["k_lin_npm"]
        else:
            k_lin = dv.k_lin_for_frequency(mass, cfg["natural_freq_hz"] or 344.0)
        res = dv.ResonatorParams(mass=mass, k_lin=k_lin, k_cub=0.0, zeta_p=0.008)
        layout = build_layout(coil)
        coupling = transduction_coefficient(magnet, layout, magnet.gap_z0)
        r_coil = coil_resistance(layout, coil.resistivity)

    changes: dict[str, float] = {}
    if cfg.is_set("mass_kg"):
        changes["mass"] = cfg["mass_kg"]
    if cfg.is_set("k_lin_npm"):
        changes["k_lin"] = cfg["k_lin_npm"]
    elif cfg.is_set("natural_freq_hz"):
        changes["k_lin"] = dv.k_lin_for_frequency(changes.get("mass", res.mass), cfg["natural_freq_hz"])
    for key, name in (("k_cub_npm3", "k_cub"), ("zeta_p_ratio", "zeta_p"), ("gamma_sat_pm2", "gamma_sat")):
        if cfg.is_set(key):
            changes[name] = cfg[key]
    res = replace(res, **changes)
    return dv.DeviceParams(
        resonator=res,
        magnet=magnet,
        coil=coil,
        load=dv.ElectricalLoad(cfg["r_load_ohm"]),
        coupling_k=cfg["coupling_k_vspm"] if cfg.is_set("coupling_k_vspm") else coupling,
        r_coil=cfg["r_coil_ohm"] if cfg.is_set("r_coil_ohm") else r_coil,
        device_volume=cfg["device_volume_m3"],
    )


def describe_keys() -> str:
    lines = []
    for key, (kind, default, desc) in SCHEMA.items():
        shown = "derived" if default is None else default
        lines.append(f"{key:30s} {kind:5s} default={shown!s:<24s} {desc}")
    return "\n".join(lines)

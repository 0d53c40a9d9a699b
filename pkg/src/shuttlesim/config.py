"""TOML configuration in external units.

Key names carry their unit (``_mv``, ``_af``, ``_k``, ``_mhz``, ``_mohm``,
``_deg``, ``_e``); :func:`device_params` and :func:`drive_config` convert to
SI. Unknown keys are rejected with the list of valid ones.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import tomli
import tomli_w

from .constants import E_CHARGE, R_QUANTUM
from .params import BarrierLaw, DeviceParams, DriveConfig

__all__ = [
    "ConfigError",
    "Config",
    "REFERENCE_CONFIG",
    "load_config",
    "parse_config",
    "apply_overrides",
    "dumps",
    "device_params",
    "drive_config",
    "external_from_params",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class _Unit:
    to_si: object
    from_si: object


_MV = _Unit(lambda x: x / 1e3, lambda x: x * 1e3)
_AF = _Unit(lambda x: x / 1e18, lambda x: x * 1e18)
_K = _Unit(lambda x: x, lambda x: x)
_MHZ = _Unit(lambda x: x * 1e6, lambda x: x / 1e6)
_MOHM = _Unit(lambda x: x * 1e6, lambda x: x / 1e6)
_DEG = _Unit(math.radians, math.degrees)
_E = _Unit(lambda x: x * E_CHARGE, lambda x: x / E_CHARGE)

# key -> (field, unit, default); default None means required
_DEVICE = {
    "c_l_af": ("c_l", _AF, None),
    "c_r_af": ("c_r", _AF, None),
    "c_top_af": ("c_top", _AF, None),
    "c_pl_af": ("c_pl", _AF, None),
    "c_bl_af": ("c_bl", _AF, None),
    "c_br_af": ("c_br", _AF, None),
    "temperature_k": ("temperature", _K, None),
    "bias_shift_mv": ("bias_shift", _MV, 0.1),
    "offset_charge_e": ("offset_charge", _E, 0.0),
}
_BARRIER = {
    "r0_mohm": ("r0", _MOHM, None),
    "v_ref_mv": ("v_ref", _MV, None),
    "v_slope_mv": ("v_slope", _MV, None),
    "r_floor_mohm": ("r_floor", _MOHM, 10.0 * R_QUANTUM / 1e6),
}
_DRIVE = {
    "f_p_mhz": ("f_p", _MHZ, None),
    "mean_bl_mv": ("mean_bl", _MV, None),
    "mean_br_mv": ("mean_br", _MV, None),
    "amp_bl_mv": ("amp_bl", _MV, None),
    "amp_br_mv": ("amp_br", _MV, None),
    "phase_bl_deg": ("phase_bl", _DEG, 180.0),
    "phase_br_deg": ("phase_br", _DEG, 0.0),
    "v_top_mv": ("v_top", _MV, None),
    "v_pl_mv": ("v_pl", _MV, None),
    "v_sd_mv": ("v_sd", _MV, 0.0),
}

# per-subcommand settings with their defaults
_SECTIONS = {
    "trace": {"v_sd_min_mv": -1.0, "v_sd_max_mv": 6.0, "points": 200},
    "plateau": {"target_n": 1, "window_min_mv": 2.9, "window_max_mv": 3.4},
    "map": {
        "v_sd_min_mv": -1.0, "v_sd_max_mv": 6.0, "v_sd_points": 8,
        "v_pl_min_mv": -1250.0, "v_pl_max_mv": -920.0, "v_pl_points": 111,
    },
    "static_map": {
        "v_sd_mv": 1.0,
        "v_bl_min_mv": 560.0, "v_bl_max_mv": 700.0, "v_bl_points": 71,
        "v_br_min_mv": 600.0, "v_br_max_mv": 740.0, "v_br_points": 71,
    },
    "freq_sweep": {
        "f_p_mhz": [60.0, 120.0, 180.0, 240.0], "v_sd_min_mv": 2.0, "v_sd_max_mv": 4.0,
        "points": 21, "target_n": 1, "fast_barriers": True,
    },
    "kmc": {"periods": 2000, "shards": 8, "burn_in": 20, "event_log": False},
    "fit": {"data": "", "free": ["temperature"], "max_evals": 200},
}

REFERENCE_CONFIG = "reference.toml"


def _schema() -> dict:
    return {
        "device": {**{k: v[2] for k, v in _DEVICE.items()},
                   "barrier_left": {k: v[2] for k, v in _BARRIER.items()},
                   "barrier_right": {k: v[2] for k, v in _BARRIER.items()}},
        "drive": {k: v[2] for k, v in _DRIVE.items()},
        **copy.deepcopy(_SECTIONS),
    }


def _resolve(values: dict, schema: dict, path: str = "") -> dict:
    unknown = sorted(set(values) - set(schema))
    if unknown:
        where = path.rstrip(".") or "top level"
        raise ConfigError(
            f"unknown key(s) {', '.join(path + k for k in unknown)} in {where}; "
            f"valid keys: {', '.join(sorted(schema))}"
        )
    out = {}
    missing = []
    for key, default in schema.items():
        if isinstance(default, dict):
            sub = values.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{path}{key} must be a table")
            out[key] = _resolve(sub, default, f"{path}{key}.")
        elif key in values:
            value = values[key]
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{path}{key} must be true or false")
            elif isinstance(default, list):
                if not isinstance(value, list):
                    value = [value]
                if default and isinstance(default[0], float):
                    value = [float(x) for x in value]
            elif isinstance(default, str):
                value = str(value)
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
                    raise ConfigError(f"{path}{key} must be an integer")
                value = int(value)
            else:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{path}{key} must be a number (got {value!r})")
                value = float(value)
            out[key] = value
        elif default is None:
            missing.append(path + key)
        else:
            out[key] = default
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    return out


@dataclass(frozen=True)
class Config:
    """Resolved configuration (external units, defaults filled in)."""

    values: dict
    source: str | None = None

    @property
    def device(self) -> DeviceParams:
        return device_params(self.values)

    @property
    def drive(self) -> DriveConfig:
        return drive_config(self.values)

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def with_overrides(self, overrides) -> "Config":
        return Config(apply_overrides(self.values, overrides), self.source)


def parse_config(data: dict | str, source: str | None = None) -> Config:
    if isinstance(data, str):
        try:
            data = tomli.loads(data)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from None
    return Config(_resolve(data, _schema()), source)


def load_config(path: str | Path | None = None) -> Config:
    """Read a TOML config; ``None`` loads the shipped reference."""
    if path is None:
        text = resources.files("shuttlesim").joinpath("data").joinpath(REFERENCE_CONFIG).read_text()
        return parse_config(text, f"<builtin>/{REFERENCE_CONFIG}")
    return parse_config(Path(path).read_text(), str(path))


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(values: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as TOML literals."""
    out = copy.deepcopy(values)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown section {part!r} in override {key!r}; valid keys: "
                                  f"{', '.join(sorted(node))}")
            node = node[part]
        if parts[-1] not in node or isinstance(node[parts[-1]], dict):
            raise ConfigError(f"unknown key {key!r}; valid keys: "
                              f"{', '.join(k for k in sorted(node) if not isinstance(node[k], dict))}")
        node[parts[-1]] = _parse_value(text.strip())
    return _resolve(out, _schema())


def dumps(values: dict) -> str:
    return tomli_w.dumps(values)


def _convert(section: dict, table: dict) -> dict:
    return {field: unit.to_si(section[key]) for key, (field, unit, _) in table.items()}


def device_params(values: dict) -> DeviceParams:
    dev = values["device"]
    laws = {side: BarrierLaw(**_convert(dev[side], _BARRIER)) for side in ("barrier_left", "barrier_right")}
    return DeviceParams(**_convert(dev, _DEVICE), **laws)


def drive_config(values: dict) -> DriveConfig:
    return DriveConfig(**_convert(values["drive"], _DRIVE))


def external_from_params(p: DeviceParams, d: DriveConfig) -> dict:
    """``device``/``drive`` tables in external units for ``(p, d)``."""

    def back(obj, table):
        return {key: unit.from_si(getattr(obj, field)) for key, (field, unit, _) in table.items()}

    dev = back(p, _DEVICE)
    dev["barrier_left"] = back(p.barrier_left, _BARRIER)
    dev["barrier_right"] = back(p.barrier_right, _BARRIER)
    return {"device": dev, "drive": back(d, _DRIVE)}

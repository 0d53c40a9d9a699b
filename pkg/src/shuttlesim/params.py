"""Device and drive parameter types, validation and the gate waveform.

Everything here is in SI units. Conversion from the external units used in
config files (mV, aF, K, MHz, MOhm) lives in :mod:`shuttlesim.config`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, is_dataclass, replace

import numpy as np

from .constants import E_CHARGE, R_QUANTUM

__all__ = [
    "BarrierLaw",
    "DeviceParams",
    "DriveConfig",
    "ValidationReport",
    "validate_params",
    "charging_energy",
    "gate_waveform",
]


@dataclass(frozen=True)
class BarrierLaw:
    """Exponential gate-voltage dependence of one tunnel barrier.

    ``R(v) = max(r_floor, r0 * exp(-(v - v_ref) / v_slope))``
    """

    r0: float
    v_ref: float
    v_slope: float
    r_floor: float = 10.0 * R_QUANTUM


@dataclass(frozen=True)
class DeviceParams:
    """Capacitances, barrier laws and electron temperature of the island.

    Lead L is the source, lead R the drain. ``offset_charge`` is a background
    charge (coulombs) added to the polarization charge.
    """

    c_l: float
    c_r: float
    c_top: float
    c_pl: float
    c_bl: float
    c_br: float
    temperature: float
    barrier_left: BarrierLaw
    barrier_right: BarrierLaw
    bias_shift: float = 1e-4
    offset_charge: float = 0.0

    @property
    def c_sigma(self) -> float:
        return self.c_l + self.c_r + self.c_top + self.c_pl + self.c_bl + self.c_br

    def lead_potentials(self, v_sd: float) -> tuple[float, float]:
        """(v_L, v_R): source at ``v_sd + bias_shift``, drain grounded."""
        return v_sd + self.bias_shift, 0.0


@dataclass(frozen=True)
class DriveConfig:
    """Periodic barrier-gate drive plus static gate and bias voltages.

    Amplitudes are peak-to-peak; the default phases put the two barrier
    gates in antiphase with V_BR peaking at a quarter period.
    """

    f_p: float
    mean_bl: float
    mean_br: float
    amp_bl: float
    amp_br: float
    v_top: float
    v_pl: float
    v_sd: float = 0.0
    phase_bl: float = math.pi
    phase_br: float = 0.0

    @property
    def period(self) -> float:
        return 1.0 / self.f_p


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "ok" if self.ok else "; ".join(self.violations)


def _numeric_fields(obj, prefix=""):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            yield from _numeric_fields(value, prefix + f.name + ".")
        else:
            yield prefix + f.name, value


def validate_params(p: DeviceParams, d: DriveConfig | None = None) -> ValidationReport:
    """Check the invariants of ``p`` and ``d``; never raises."""
    report = ValidationReport()
    bad = report.violations
    for obj in (p, d):
        if obj is None:
            continue
        for name, value in _numeric_fields(obj):
            if not math.isfinite(value):
                bad.append(f"{name} must be finite (got {value!r})")
    for name in ("c_l", "c_r", "c_top", "c_pl", "c_bl", "c_br"):
        if not getattr(p, name) > 0:
            bad.append(f"{name} must be > 0")
    if not p.temperature > 0:
        bad.append("temperature must be > 0")
    for side in ("barrier_left", "barrier_right"):
        law = getattr(p, side)
        if not law.r0 > 0:
            bad.append(f"{side}.r0 must be > 0")
        if not law.v_slope > 0:
            bad.append(f"{side}.v_slope must be > 0")
        if not law.r_floor >= R_QUANTUM:
            bad.append(f"{side}.r_floor below resistance quantum ({R_QUANTUM:.3f} ohm)")
    if d is not None:
        if not d.f_p > 0:
            bad.append("f_p must be > 0")
        if not d.amp_bl >= 0:
            bad.append("amp_bl must be >= 0")
        if not d.amp_br >= 0:
            bad.append("amp_br must be >= 0")
    return report


def charging_energy(p: DeviceParams) -> float:
    """E_C = e^2 / (2 C_sigma), joules."""
    return E_CHARGE**2 / (2.0 * p.c_sigma)


def gate_waveform(d: DriveConfig, t):
    """Barrier gate voltages ``(v_bl, v_br)`` at time(s) ``t``."""
    w = 2.0 * math.pi * d.f_p
    t = np.asarray(t, dtype=float)
    v_bl = d.mean_bl + 0.5 * d.amp_bl * np.sin(w * t + d.phase_bl)
    v_br = d.mean_br + 0.5 * d.amp_br * np.sin(w * t + d.phase_br)
    if v_bl.ndim == 0:
        return float(v_bl), float(v_br)
    return v_bl, v_br


def with_updates(obj, **changes):
    """``dataclasses.replace`` that also accepts ``barrier_left__r0`` style keys."""
    nested: dict[str, dict] = {}
    flat = {}
    for key, value in changes.items():
        if "__" in key:
            head, tail = key.split("__", 1)
            nested.setdefault(head, {})[tail] = value
        else:
            flat[key] = value
    for head, sub in nested.items():
        flat[head] = with_updates(getattr(obj, head), **sub)
    return replace(obj, **flat)

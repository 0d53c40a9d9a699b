"""Gate-dependent barrier resistances and sequential tunneling rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import E_CHARGE, K_B
from .electrostatics import Event, bias_at, free_energy_change
from .params import BarrierLaw, DeviceParams, DriveConfig, gate_waveform

__all__ = [
    "TransitionRates",
    "barrier_resistance",
    "tunnel_rate",
    "thermal_factor",
    "rates_at",
]

_SERIES_CUTOFF = 1e-4


def barrier_resistance(law: BarrierLaw, v_gate):
    with np.errstate(over="ignore"):  # a pinched-off barrier is allowed to reach inf
        r = np.maximum(law.r_floor, law.r0 * np.exp(-(np.asarray(v_gate, dtype=float) - law.v_ref) / law.v_slope))
    return float(r) if r.ndim == 0 else r


def thermal_factor(x):
    """x / (exp(x) - 1), stable for any real x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < _SERIES_CUTOFF
    pos = (x > 0) & ~small
    neg = (x < 0) & ~small
    xs = x[small]
    out[small] = 1.0 - 0.5 * xs + xs * xs / 12.0
    xp = x[pos]
    out[pos] = xp * np.exp(-xp) / -np.expm1(-xp)
    xn = x[neg]
    out[neg] = xn / np.expm1(xn)
    return out


def tunnel_rate(dF, r_t, temperature):
    """Orthodox rate ``dF / (e^2 R (exp(dF/kT) - 1))`` in 1/s.

    Parameters
    ----------
    dF : float or array
        Free-energy change of the event, joules.
    r_t : float or array
        Tunnel resistance, ohms.
    temperature : float
        Electron temperature, kelvin.
    """
    if np.any(np.asarray(r_t) <= 0):
        raise ValueError("tunnel resistance must be > 0")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    kT = K_B * temperature
    rate = kT / (E_CHARGE**2 * np.asarray(r_t, dtype=float)) * thermal_factor(np.asarray(dF) / kT)
    return float(rate) if rate.ndim == 0 else rate


@dataclass(frozen=True)
class TransitionRates:
    """The four event rates for every state of a window at one instant.

    Rates of transitions that would leave the window are set to zero.
    """

    n: np.ndarray
    in_l: np.ndarray
    out_l: np.ndarray
    in_r: np.ndarray
    out_r: np.ndarray

    def __getitem__(self, event) -> np.ndarray:
        return getattr(self, {"inL": "in_l", "outL": "out_l", "inR": "in_r", "outR": "out_r"}[Event(event).value])


def rates_at(p: DeviceParams, d: DriveConfig, window: tuple[int, int], t: float) -> TransitionRates:
    n_min, n_max = window
    n = np.arange(n_min, n_max + 1)
    b = bias_at(p, d, t)
    v_bl, v_br = gate_waveform(d, t)
    r_l = barrier_resistance(p.barrier_left, v_bl)
    r_r = barrier_resistance(p.barrier_right, v_br)
    out = {}
    for event, r in ((Event.IN_L, r_l), (Event.OUT_L, r_l), (Event.IN_R, r_r), (Event.OUT_R, r_r)):
        dF = free_energy_change(p, n, b, event)
        rate = tunnel_rate(dF, r, p.temperature)
        rate[-1 if event.step > 0 else 0] = 0.0
        out[event] = rate
    return TransitionRates(n, out[Event.IN_L], out[Event.OUT_L], out[Event.IN_R], out[Event.OUT_R])

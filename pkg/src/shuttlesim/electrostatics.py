"""Orthodox electrostatics of a single metallic island.

The island carries charge ``-n e``; ``n`` counts excess electrons. The
polarization charge ``q_p`` collects every capacitively induced charge so
that the island energy is ``U(n) = (q_p - n e)^2 / (2 C_sigma)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .constants import E_CHARGE
from .params import DeviceParams, DriveConfig, gate_waveform

__all__ = [
    "Event",
    "WindowError",
    "InstantaneousBias",
    "polarization_charge",
    "bias_at",
    "island_energy",
    "free_energy_change",
]


class Event(enum.Enum):
    IN_L = "inL"
    OUT_L = "outL"
    IN_R = "inR"
    OUT_R = "outR"

    @property
    def lead(self) -> str:
        return self.value[-1]

    @property
    def step(self) -> int:
        return 1 if self.value.startswith("in") else -1


class WindowError(ValueError):
    """A charge state fell outside the truncation window."""


def polarization_charge(p: DeviceParams, v_l, v_r, v_top, v_pl, v_bl, v_br):
    return (
        p.c_l * v_l
        + p.c_r * v_r
        + p.c_top * v_top
        + p.c_pl * v_pl
        + p.c_bl * v_bl
        + p.c_br * v_br
        + p.offset_charge
    )


@dataclass(frozen=True)
class InstantaneousBias:
    """Lead and gate potentials at one instant plus the induced charge."""

    v_l: float
    v_r: float
    v_top: float
    v_pl: float
    v_bl: float
    v_br: float
    q_p: float

    @classmethod
    def from_voltages(cls, p: DeviceParams, v_l, v_r, v_top, v_pl, v_bl, v_br):
        q = polarization_charge(p, v_l, v_r, v_top, v_pl, v_bl, v_br)
        return cls(v_l, v_r, v_top, v_pl, v_bl, v_br, q)

    def recompute(self, p: DeviceParams) -> float:
        return polarization_charge(p, self.v_l, self.v_r, self.v_top, self.v_pl, self.v_bl, self.v_br)

    def lead_potential(self, lead: str) -> float:
        return self.v_l if lead == "L" else self.v_r


def bias_at(p: DeviceParams, d: DriveConfig, t: float) -> InstantaneousBias:
    v_bl, v_br = gate_waveform(d, t)
    v_l, v_r = p.lead_potentials(d.v_sd)
    return InstantaneousBias.from_voltages(p, v_l, v_r, d.v_top, d.v_pl, v_bl, v_br)


def island_energy(p: DeviceParams, n, b: InstantaneousBias):
    return (b.q_p - n * E_CHARGE) ** 2 / (2.0 * p.c_sigma)


def _addition_energy(p: DeviceParams, n, q_p):
    # U(n+1) - U(n), written without squaring large numbers
    return E_CHARGE * (E_CHARGE * (n + 0.5) - q_p) / p.c_sigma


def free_energy_change(p: DeviceParams, n, b: InstantaneousBias, event, window=None):
    """Free-energy change of one tunneling event starting from state ``n``.

    ``window`` is an optional ``(n_min, n_max)`` pair; the start and target
    states must both lie inside it.
    """
    event = Event(event)
    if window is not None:
        lo, hi = window
        target = n + event.step
        if not (lo <= n <= hi and lo <= target <= hi):
            raise WindowError(f"transition {n} -> {target} leaves window [{lo}, {hi}]")
    v = b.lead_potential(event.lead)
    if event.step > 0:
        return _addition_energy(p, n, b.q_p) + E_CHARGE * v
    return -_addition_energy(p, n - 1, b.q_p) - E_CHARGE * v

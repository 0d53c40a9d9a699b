"""Physical constants (exact 2019 SI values where defined)."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    e: float = 1.602176634e-19  # C
    kB: float = 1.380649e-23  # J/K
    h: float = 6.62607015e-34  # J s

    @property
    def RQ(self) -> float:
        """Resistance quantum h/e**2 in ohms."""
        return self.h / self.e**2


CONST = PhysicalConstants()
E_CHARGE = CONST.e
K_B = CONST.kB
R_QUANTUM = CONST.RQ

"""Simulation and analysis of a gate-driven single-electron shuttle.

Sequential-tunneling model of one island between two leads, with
barrier-gate dependent tunnel resistances, solved either as a periodic
master equation (:mod:`shuttlesim.dynamics`) or by kinetic Monte Carlo
(:mod:`shuttlesim.kmc`).
"""

from importlib.metadata import PackageNotFoundError, version

from .constants import CONST, E_CHARGE, K_B, R_QUANTUM, PhysicalConstants
from .params import (
    BarrierLaw,
    DeviceParams,
    DriveConfig,
    ValidationReport,
    charging_energy,
    gate_waveform,
    validate_params,
)
from .dynamics import (
    ChargeStateSpace,
    ConvergenceError,
    PeriodicSolution,
    SolverError,
    StaticGates,
    evolve_period,
    periodic_steady_state,
    static_current,
)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

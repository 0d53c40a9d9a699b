"""Master-equation dynamics over the periodic drive.

The one-period propagator is integrated once per configuration; the
periodic steady state is then found by power iteration on it (with
repeated squaring once plain iteration stalls), and a final period is
re-integrated from the fixed point to sample occupations and accumulate the
junction currents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .constants import E_CHARGE
from .electrostatics import polarization_charge
from .params import DeviceParams, DriveConfig, gate_waveform

__all__ = [
    "ChargeStateSpace",
    "PeriodicSolution",
    "SolverError",
    "ConvergenceError",
    "StaticGates",
    "RTOL",
    "ATOL",
    "auto_window",
    "propagator",
    "evolve_period",
    "periodic_steady_state",
    "static_distribution",
    "static_current",
]

RTOL = 1e-10
ATOL = 1e-14
MAX_STEPS = 2_000_000
BOUNDARY_TOL = 1e-8
HALF_WIDTH = 4


class SolverError(RuntimeError):
    """Numerical failure; ``diagnostics`` carries whatever was known."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(SolverError):
    def __init__(self, message, residual, diagnostics=None):
        super().__init__(message, diagnostics)
        self.residual = residual


@dataclass
class ChargeStateSpace:
    """Window ``[n_min, n_max]`` of island occupancies and a distribution on it."""

    n_min: int
    n_max: int
    probabilities: np.ndarray | None = None

    def __post_init__(self):
        if self.n_max < self.n_min + 1:
            raise ValueError("window needs at least two states")
        if self.probabilities is None:
            self.probabilities = np.full(self.size, 1.0 / self.size)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if self.probabilities.shape != (self.size,):
            raise ValueError("probability vector does not match the window")

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    @property
    def window(self) -> tuple[int, int]:
        return self.n_min, self.n_max

    def expanded(self, by: int = 2) -> "ChargeStateSpace":
        return ChargeStateSpace(self.n_min - by, self.n_max + by)

    def mean(self) -> float:
        return float(self.states @ self.probabilities)


@dataclass
class PeriodicSolution:
    """Periodic steady state sampled over one drive period.

    Currents are period averages in amperes, positive for conventional
    current from source (L) to drain (R).
    """

    time_grid: np.ndarray
    occupations: np.ndarray  # (len(time_grid), n_states)
    current_left: float
    current_right: float
    space: ChargeStateSpace
    diagnostics: dict = field(default_factory=dict)

    @property
    def current(self) -> float:
        # the drain junction is where the amplifier sits
        return self.current_right

    @property
    def mismatch(self) -> float:
        return abs(self.current_left - self.current_right)


@dataclass(frozen=True)
class StaticGates:
    v_top: float
    v_pl: float
    v_bl: float
    v_br: float

    @classmethod
    def from_drive(cls, d: DriveConfig, t: float | None = None) -> "StaticGates":
        """Gate voltages of ``d`` at time ``t``, or the mean values if ``t`` is None."""
        if t is None:
            return cls(d.v_top, d.v_pl, d.mean_bl, d.mean_br)
        v_bl, v_br = gate_waveform(d, t)
        return cls(d.v_top, d.v_pl, v_bl, v_br)


def _frozen_drive(gates: StaticGates, v_sd: float, f_p: float = 1.0) -> DriveConfig:
    return DriveConfig(f_p, gates.v_bl, gates.v_br, 0.0, 0.0, gates.v_top, gates.v_pl, v_sd)


def _static_rates(p: DeviceParams, gates: StaticGates, v_sd: float, window):
    n_min, n_max = window
    N = n_max - n_min + 1
    r = np.empty((4, N))
    _kernels.rates(_kernels.pack(p, _frozen_drive(gates, v_sd)), n_min, N, 0.0, r)
    return r


def static_distribution(p: DeviceParams, gates: StaticGates, v_sd: float, window) -> np.ndarray:
    """Stationary occupation vector for constant gates (solves ``M P = 0``).

    The generator of a single island is tridiagonal, so the null vector
    follows from the flux balance between neighbouring states; the
    recursion is done in log space and needs no matrix inversion.
    """
    r = _static_rates(p, gates, v_sd, window)
    up = r[_kernels.IN_L, :-1] + r[_kernels.IN_R, :-1]
    down = r[_kernels.OUT_L, 1:] + r[_kernels.OUT_R, 1:]
    if np.any((up == 0.0) & (down == 0.0)):
        raise SolverError(
            "generator is singular: the window splits into disconnected blocks",
            {"condition_estimate": math.inf},
        )
    tiny = np.finfo(float).tiny
    steps = np.log(np.maximum(up, tiny)) - np.log(np.maximum(down, tiny))
    logp = np.concatenate(([0.0], np.cumsum(steps)))
    logp -= logp.max()
    prob = np.exp(logp)
    prob /= prob.sum()
    # residual check of M P = 0 against the flux scale
    flux = up * prob[:-1] - down * prob[1:]
    scale = max(float(np.max(up * prob[:-1])), float(np.max(down * prob[1:])), np.finfo(float).tiny)
    if np.max(np.abs(flux)) > 1e-9 * scale:
        ratio = float(np.max(np.maximum(up, down)) / max(np.min(np.maximum(up, down)), np.finfo(float).tiny))
        raise SolverError("stationary solve is ill-conditioned", {"condition_estimate": ratio})
    return prob


def _static_window(p: DeviceParams, gates: StaticGates, v_sd: float, half_width: int):
    v_l, v_r = p.lead_potentials(v_sd)
    q = polarization_charge(p, v_l, v_r, gates.v_top, gates.v_pl, gates.v_bl, gates.v_br) / E_CHARGE
    center = int(round(q))
    return center - half_width, center + half_width


def static_current(p: DeviceParams, gates: StaticGates, v_sd: float, window=None) -> float:
    """Stationary dc current (amperes, source-to-drain positive) without rf drive."""
    if window is None:
        window = _static_window(p, gates, v_sd, HALF_WIDTH + 4)
    prob = static_distribution(p, gates, v_sd, window)
    r = _static_rates(p, gates, v_sd, window)
    return float(E_CHARGE * prob @ (r[_kernels.IN_R] - r[_kernels.OUT_R]))


def auto_window(p: DeviceParams, d: DriveConfig, half_width: int = HALF_WIDTH) -> ChargeStateSpace:
    """Window centred on the static mean occupancy at the t = 0 gate values,
    widened to cover the swing of the polarization charge over one period."""
    gates = StaticGates.from_drive(d, 0.0)
    wide = _static_window(p, gates, d.v_sd, half_width + 6)
    prob = static_distribution(p, gates, d.v_sd, wide)
    center = int(round(np.arange(wide[0], wide[1] + 1) @ prob))
    phasor = p.c_bl * d.amp_bl * np.exp(1j * d.phase_bl) + p.c_br * d.amp_br * np.exp(1j * d.phase_br)
    extra = int(math.ceil(0.5 * abs(phasor) / E_CHARGE - 0.25))
    return ChargeStateSpace(center - half_width - extra, center + half_width + extra)


def kink_times(p: DeviceParams, d: DriveConfig) -> np.ndarray:
    """Times in ``[0, 1/f_p)`` where a barrier resistance meets its floor."""
    T = d.period
    w = 2.0 * math.pi * d.f_p
    times = []
    for law, mean, amp, phase in (
        (p.barrier_left, d.mean_bl, d.amp_bl, d.phase_bl),
        (p.barrier_right, d.mean_br, d.amp_br, d.phase_br),
    ):
        if amp <= 0 or law.r0 <= law.r_floor * 1e-300:
            continue
        v_star = law.v_ref + law.v_slope * math.log(law.r0 / law.r_floor)
        s = (v_star - mean) / (0.5 * amp)
        if abs(s) >= 1.0:
            continue
        base = math.asin(s)
        for arg in (base, math.pi - base):
            times.append(((arg - phase) / w) % T)
    return np.array(sorted(times))


def _integrate(p, d, space, P0, grid=None, rtol=RTOL, atol=ATOL):
    theta = _kernels.pack(p, d)
    T = d.period
    kinks = kink_times(p, d)
    kinks = kinks[(kinks > 0.0) & (kinks < T)]
    grid = np.zeros(0) if grid is None else np.asarray(grid, dtype=float)
    stops = np.concatenate((grid, kinks))
    slots = np.concatenate((np.arange(grid.size), np.full(kinks.size, -1)))
    order = np.argsort(stops, kind="stable")
    P, Q, samples, stats = _kernels.radau(
        theta, space.n_min, space.size, np.ascontiguousarray(P0, dtype=float),
        0.0, T, rtol, atol, T * 1e-4, np.ascontiguousarray(stops[order]),
        np.ascontiguousarray(slots[order]), grid.size, MAX_STEPS,
    )
    diag = {"steps": int(stats[0]), "rejected": int(stats[1]), "rate_evaluations": int(stats[2])}
    if stats[3] != 0:
        raise SolverError("integrator exceeded the step budget", diag)
    return P, Q, samples, diag


def propagator(p: DeviceParams, d: DriveConfig, space: ChargeStateSpace, rtol=RTOL, atol=ATOL):
    """One-period propagator ``Phi`` and the junction charge matrix ``Q``.

    ``Phi @ P0`` is the distribution after one period and ``Q @ P0`` the
    electrons moved through the (right, left) junction during it.
    """
    Phi, Q, _, diag = _integrate(p, d, space, np.eye(space.size), rtol=rtol, atol=atol)
    return Phi, Q, diag


def evolve_period(p: DeviceParams, d: DriveConfig, space: ChargeStateSpace, p_start=None,
                  rtol=RTOL, atol=ATOL) -> np.ndarray:
    """Distribution at ``t = 1/f_p`` starting from ``p_start`` at ``t = 0``."""
    p0 = space.probabilities if p_start is None else np.asarray(p_start, dtype=float)
    if abs(p0.sum() - 1.0) > 1e-9:
        raise ValueError("p_start must be normalized")
    P, _, _, diag = _integrate(p, d, space, p0.reshape(-1, 1), rtol=rtol, atol=atol)
    P = P[:, 0]
    drift = abs(P.sum() - 1.0)
    if drift > 1e-9:
        raise SolverError(f"probability drift {drift:.3e} over one period", diag)
    return P / P.sum()


def _power_iterate(Phi, p, tol, max_iter, plain_iterations=8):
    Pk = Phi
    change = math.inf
    for it in range(1, max_iter + 1):
        p_new = Pk @ p
        p_new = np.clip(p_new, 0.0, None)
        p_new /= p_new.sum()
        change = float(np.abs(p_new - p).sum())
        p = p_new
        if change < tol:
            return p, it, change
        if it >= plain_iterations:
            # slow mixing: advance 2**k periods per iteration
            Pk = Pk @ Pk
            Pk = np.clip(Pk, 0.0, None)
            Pk /= Pk.sum(axis=0, keepdims=True)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", change)


def periodic_steady_state(
    p: DeviceParams,
    d: DriveConfig,
    space: ChargeStateSpace | None = None,
    n_grid: int = 1000,
    tol: float = 1e-12,
    max_iter: int = 200,
    rtol: float = RTOL,
    atol: float = ATOL,
    auto_expand: bool = True,
) -> PeriodicSolution:
    """Periodic steady state of the driven master equation.

    Parameters
    ----------
    space : ChargeStateSpace, optional
        Truncation window; chosen by :func:`auto_window` when omitted.
    n_grid : int
        Number of sampling intervals over the final period.
    auto_expand : bool
        Grow the window by two states per side while the boundary states
        carry more than ``1e-8`` probability.
    """
    if space is None:
        space = auto_window(p, d)
    T = d.period
    for _ in range(20):
        Phi, Q, diag_phi = propagator(p, d, space, rtol, atol)
        warm = static_distribution(p, StaticGates.from_drive(d, 0.0), d.v_sd, space.window)
        try:
            p_star, iterations, change = _power_iterate(Phi, warm, tol, max_iter)
        except ConvergenceError as exc:
            exc.diagnostics.update(diag_phi, window=space.window)
            raise
        grid = np.linspace(0.0, T, n_grid + 1)
        P1, Q1, samples, diag = _integrate(p, d, space, p_star.reshape(-1, 1), grid, rtol, atol)
        occ = samples[:, :, 0]
        edge = float(np.max(occ[:, 0] + occ[:, -1]))
        if edge < BOUNDARY_TOL or not auto_expand:
            break
        space = space.expanded(2)
    else:
        raise SolverError("window expansion did not bound the distribution", {"edge_probability": edge})

    i_right = E_CHARGE * Q1[0, 0] / T
    i_left = E_CHARGE * Q1[1, 0] / T
    diagnostics = {
        "iterations": iterations,
        "power_change": change,
        "periodicity_residual": float(np.abs(P1[:, 0] - p_star).sum()),
        "edge_probability": edge,
        "propagator_steps": diag_phi["steps"],
        "final_period_steps": diag["steps"],
        "rejected_steps": diag_phi["rejected"] + diag["rejected"],
        "window": space.window,
    }
    diagnostics["junction_mismatch"] = abs(i_left - i_right)
    sol_space = replace(space, probabilities=p_star)
    return PeriodicSolution(grid, occ, i_left, i_right, sol_space, diagnostics)

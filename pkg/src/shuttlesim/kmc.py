"""Kinetic Monte Carlo trajectories of the driven island.

Events are sampled by thinning: every period is cut into ``SLICES`` equal
slices and, for each slice, charge state and event type, a constant rate
majorant is precomputed. Candidate events are drawn from the piecewise
constant majorant process and accepted with probability ``rate/majorant``.
The sampler shares only the rate formula with the master-equation solver.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _kernels
from ._kernels import ECH, IN_L, IN_R, OUT_L, OUT_R
from .constants import E_CHARGE
from .dynamics import ChargeStateSpace, SolverError, StaticGates, auto_window, static_distribution
from .params import DeviceParams, DriveConfig

__all__ = [
    "SLICES",
    "OVERSAMPLE",
    "SAFETY",
    "RNG_ALGORITHM",
    "MajorantViolation",
    "Trajectory",
    "KMCSummary",
    "rate_majorants",
    "simulate",
    "simulate_shards",
    "write_event_log",
]

SLICES = 1024
OVERSAMPLE = 4
SAFETY = 1.1
ACCEPTANCE_WARNING = 0.05
RNG_ALGORITHM = "numpy.random.PCG64 (SeedSequence.spawn per shard)"

EVENT_NAMES = ("inL", "outL", "inR", "outR")
_STEP = np.array([1, -1, 1, -1])


class MajorantViolation(RuntimeError):
    """A sampled rate exceeded its precomputed majorant."""


@njit(cache=True)
def _majorants(theta, n_min, N, period, slices, oversample, safety):
    n_pts = slices * oversample + 1
    dt = period / (slices * oversample)
    samples = np.empty((n_pts, 4, N))
    r = np.empty((4, N))
    for j in range(n_pts):
        _kernels.rates(theta, n_min, N, j * dt, r)
        samples[j] = r
    maj = np.zeros((slices, 4, N))
    for k in range(slices):
        for j in range(k * oversample, (k + 1) * oversample + 1):
            for e in range(4):
                for i in range(N):
                    if samples[j, e, i] > maj[k, e, i]:
                        maj[k, e, i] = samples[j, e, i]
    return maj * safety


def rate_majorants(p: DeviceParams, d: DriveConfig, space: ChargeStateSpace,
                   slices: int = SLICES, oversample: int = OVERSAMPLE, safety: float = SAFETY):
    """Per-slice rate bounds, shape ``(slices, 4, n_states)``."""
    theta = _kernels.pack(p, d)
    return _majorants(theta, space.n_min, space.size, d.period, slices, oversample, safety)


@njit(cache=True)
def _rate_one(theta, n_min, N, i, e, t):
    """Rate of event ``e`` from window index ``i`` at time ``t``."""
    if (e == IN_L or e == IN_R) and i == N - 1:
        return 0.0
    if (e == OUT_L or e == OUT_R) and i == 0:
        return 0.0
    kT = theta[_kernels.KT]
    v_bl = theta[_kernels.MEAN_BL] + theta[_kernels.HAMP_BL] * math.sin(theta[_kernels.OMEGA] * t + theta[_kernels.PHASE_BL])
    v_br = theta[_kernels.MEAN_BR] + theta[_kernels.HAMP_BR] * math.sin(theta[_kernels.OMEGA] * t + theta[_kernels.PHASE_BR])
    qp = theta[_kernels.QSTATIC] + theta[_kernels.CBL] * v_bl + theta[_kernels.CBR] * v_br
    n = n_min + i
    scale = ECH / theta[_kernels.CSIGMA]
    if e == IN_L or e == OUT_L:
        res = _kernels._resistance(v_bl, theta[_kernels.R0_L], theta[_kernels.VREF_L],
                                   theta[_kernels.VSLOPE_L], theta[_kernels.RFLOOR_L])
        v = theta[_kernels.VL]
    else:
        res = _kernels._resistance(v_br, theta[_kernels.R0_R], theta[_kernels.VREF_R],
                                   theta[_kernels.VSLOPE_R], theta[_kernels.RFLOOR_R])
        v = theta[_kernels.VR]
    if e == IN_L or e == IN_R:
        dF = scale * (ECH * (n + 0.5) - qp) + ECH * v
    else:
        dF = -scale * (ECH * (n - 0.5) - qp) - ECH * v
    return kT / (ECH * ECH * res) * _kernels._thermal(dF / kT)


@njit(cache=True)
def _run(theta, n_min, N, period, maj, i0, n_periods, n_burn, rng, log_events):
    """Thinning loop. Returns per-period net transfers (right, left), the
    final state, candidate/accepted counts, the event log, and a violation
    record ``[slice, event, state, rate, majorant]`` (slice < 0 if none)."""
    slices = maj.shape[0]
    dt = period / slices
    net_r = np.zeros(n_periods, dtype=np.int64)
    net_l = np.zeros(n_periods, dtype=np.int64)
    cap = 1024 if log_events else 1
    ev_t = np.empty(cap)
    ev_e = np.empty(cap, dtype=np.int64)
    ev_n = np.empty(cap, dtype=np.int64)
    n_ev = 0
    candidates = 0
    accepted = 0
    violation = np.array([-1.0, 0.0, 0.0, 0.0, 0.0])
    i = i0
    total = n_burn + n_periods
    for m in range(total):
        counting = m >= n_burn
        for k in range(slices):
            lam = maj[k, 0, i] + maj[k, 1, i] + maj[k, 2, i] + maj[k, 3, i]
            s = 0.0
            while lam > 0.0:
                s += rng.exponential() / lam
                if s >= dt:
                    break
                u = rng.random() * lam
                e = 0
                acc = maj[k, 0, i]
                while e < 3 and u >= acc:
                    e += 1
                    acc += maj[k, e, i]
                bound = maj[k, e, i]
                if bound <= 0.0:
                    continue
                candidates += 1
                tau = k * dt + s
                true = _rate_one(theta, n_min, N, i, e, tau)
                if true > bound:
                    violation[0] = k
                    violation[1] = e
                    violation[2] = n_min + i
                    violation[3] = true
                    violation[4] = bound
                    return net_r, net_l, i, candidates, accepted, ev_t[:n_ev], ev_e[:n_ev], ev_n[:n_ev], violation
                if rng.random() * bound < true:
                    accepted += 1
                    if counting:
                        j = m - n_burn
                        if e == IN_R:
                            net_r[j] += 1
                        elif e == OUT_R:
                            net_r[j] -= 1
                        elif e == OUT_L:
                            net_l[j] += 1
                        else:
                            net_l[j] -= 1
                        if log_events:
                            if n_ev == cap:
                                cap *= 2
                                ev_t = np.concatenate((ev_t, np.empty(cap - n_ev)))
                                ev_e = np.concatenate((ev_e, np.empty(cap - n_ev, dtype=np.int64)))
                                ev_n = np.concatenate((ev_n, np.empty(cap - n_ev, dtype=np.int64)))
                            ev_t[n_ev] = j * period + tau
                            ev_e[n_ev] = e
                            ev_n[n_ev] = n_min + i
                            n_ev += 1
                    i += 1 if (e == IN_L or e == IN_R) else -1
                    lam = maj[k, 0, i] + maj[k, 1, i] + maj[k, 2, i] + maj[k, 3, i]
    return net_r, net_l, i, candidates, accepted, ev_t[:n_ev], ev_e[:n_ev], ev_n[:n_ev], violation


@dataclass
class Trajectory:
    """One simulated run.

    ``events`` arrays are empty unless the run was made with
    ``log_events=True``; ``event_n_before`` is the occupancy before each
    event. ``net_transfers_right[m]`` counts electrons in through R minus
    out through R during period ``m``.
    """

    event_times: np.ndarray
    event_types: np.ndarray
    event_n_before: np.ndarray
    net_transfers_right: np.ndarray
    net_transfers_left: np.ndarray
    seed: int | None
    f_p: float
    candidates: int
    accepted: int
    metadata: dict = field(default_factory=dict)

    @property
    def event_n_after(self) -> np.ndarray:
        return self.event_n_before + _STEP[self.event_types]

    @property
    def n_periods(self) -> int:
        return self.net_transfers_right.size

    @property
    def acceptance_ratio(self) -> float:
        return self.accepted / self.candidates if self.candidates else 1.0


@dataclass
class KMCSummary:
    """Pooled statistics of one or more trajectories.

    ``std_error`` is the standard error of ``mean_current``; the variance it
    is built from is floored at ``1/n_periods`` so that a run without a
    single error event does not claim infinite precision.
    """

    n_periods: int
    mean_transfers: float
    variance: float
    mean_current: float
    std_error: float
    acceptance_ratio: float
    shard_means: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "n_periods", "mean_transfers", "variance", "mean_current", "std_error", "acceptance_ratio")}
        out["shard_means"] = [float(x) for x in self.shard_means]
        out.update(self.metadata)
        return out


def _initial_state(p, d, space, rng):
    try:
        prob = static_distribution(p, StaticGates.from_drive(d, 0.0), d.v_sd, space.window)
    except SolverError:
        # frozen chain: nothing can move, so any state is stationary
        return space.size // 2
    return int(rng.choice(space.size, p=prob))


def simulate(
    p: DeviceParams,
    d: DriveConfig,
    space: ChargeStateSpace | None = None,
    n_periods: int = 2000,
    seed: int | np.random.SeedSequence | None = 0,
    burn_in: int = 20,
    log_events: bool = False,
    majorants: np.ndarray | None = None,
) -> Trajectory:
    """Simulate ``n_periods`` drive periods after ``burn_in`` discarded ones.

    The start state is drawn from the static distribution at the ``t = 0``
    gate values. ``seed`` may be an int or a ``SeedSequence`` (as produced
    by :func:`simulate_shards`).

    Raises
    ------
    MajorantViolation
        If a true rate exceeds its slice majorant.
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    if space is None:
        space = auto_window(p, d)
    if majorants is None:
        majorants = rate_majorants(p, d, space)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    i0 = _initial_state(p, d, space, rng)
    theta = _kernels.pack(p, d)
    net_r, net_l, _, cand, acc, ev_t, ev_e, ev_n, viol = _run(
        theta, space.n_min, space.size, d.period, majorants, i0, n_periods, burn_in, rng, log_events)
    if viol[0] >= 0:
        raise MajorantViolation(
            f"rate {viol[3]:.6e}/s of {EVENT_NAMES[int(viol[1])]} at n={int(viol[2])} "
            f"exceeds majorant {viol[4]:.6e}/s in slice {int(viol[0])}")
    meta = {
        "rng": RNG_ALGORITHM,
        "entropy": str(ss.entropy),
        "spawn_key": list(ss.spawn_key),
        "window": space.window,
        "burn_in": burn_in,
        "slices": int(majorants.shape[0]),
    }
    traj = Trajectory(ev_t, ev_e, ev_n, net_r, net_l, seed if isinstance(seed, int) else None,
                      d.f_p, int(cand), int(acc), meta)
    if cand and traj.acceptance_ratio < ACCEPTANCE_WARNING:
        warnings.warn(f"thinning acceptance ratio {traj.acceptance_ratio:.3f} below "
                      f"{ACCEPTANCE_WARNING}: majorants are loose", RuntimeWarning, stacklevel=2)
    return traj


def summarize(trajectories: list[Trajectory]) -> KMCSummary:
    counts = np.concatenate([t.net_transfers_right for t in trajectories]).astype(float)
    n = counts.size
    f_p = trajectories[0].f_p
    mean = float(counts.mean())
    var = float(counts.var(ddof=1)) if n > 1 else 0.0
    se = math.sqrt(max(var, 1.0 / n) / n)
    cand = sum(t.candidates for t in trajectories)
    acc = sum(t.accepted for t in trajectories)
    return KMCSummary(
        n_periods=n,
        mean_transfers=mean,
        variance=var,
        mean_current=E_CHARGE * f_p * mean,
        std_error=E_CHARGE * f_p * se,
        acceptance_ratio=acc / cand if cand else 1.0,
        shard_means=np.array([t.net_transfers_right.mean() for t in trajectories]),
        metadata={"rng": RNG_ALGORITHM, "shards": len(trajectories)},
    )


def _shard(args):
    p, d, space, n_periods, ss, burn_in, maj = args
    return simulate(p, d, space, n_periods, ss, burn_in, majorants=maj)


def simulate_shards(
    p: DeviceParams,
    d: DriveConfig,
    n_periods: int = 2000,
    shards: int = 8,
    seed: int = 0,
    space: ChargeStateSpace | None = None,
    burn_in: int = 20,
    jobs: int = 1,
) -> tuple[KMCSummary, list[Trajectory]]:
    """Run ``shards`` independent trajectories of ``n_periods`` each and pool them.

    Shard seeds come from ``SeedSequence(seed).spawn(shards)``, so results do
    not depend on ``jobs``.
    """
    if space is None:
        space = auto_window(p, d)
    maj = rate_majorants(p, d, space)
    seqs = np.random.SeedSequence(seed).spawn(shards)
    tasks = [(p, d, space, n_periods, ss, burn_in, maj) for ss in seqs]
    if jobs > 1 and shards > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, shards)) as pool:
            trajs = list(pool.map(_shard, tasks))
    else:
        trajs = [_shard(t) for t in tasks]
    summary = summarize(trajs)
    summary.metadata.update(seed=seed, window=space.window, periods_per_shard=n_periods)
    return summary, trajs


def write_event_log(traj: Trajectory, path: str | os.PathLike) -> None:
    """CSV with one row per event: ``time_s,event,n_before,n_after``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "event", "n_before", "n_after"])
        for t, e, nb, na in zip(traj.event_times, traj.event_types, traj.event_n_before, traj.event_n_after):
            w.writerow([repr(float(t)), EVENT_NAMES[int(e)], int(nb), int(na)])

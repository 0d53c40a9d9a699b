"""Sweeps, maps, plateau metrics and parameter fitting built on the solvers.

Every sweep is a set of independent periodic (or static) solves, so the
drivers take a ``jobs`` argument and fan points out over processes. A point
that fails to solve is recorded in ``failures`` and gets a NaN current; the
sweep carries on.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import __version__
from .config import external_from_params, load_config
from .constants import E_CHARGE
from .dynamics import SolverError, StaticGates, periodic_steady_state, static_current
from .params import DeviceParams, DriveConfig, with_updates

__all__ = [
    "FAST_BARRIER_SCALE",
    "TraceResult",
    "MapResult",
    "PlateauStats",
    "FrequencySweepResult",
    "AsymmetryResult",
    "FitResult",
    "reference_config",
    "snapshot",
    "bias_trace",
    "map_bias_plunger",
    "plunger_period",
    "map_barriers_static",
    "frequency_sweep",
    "plateau_stats",
    "low_gradient_index",
    "asymmetry_study",
    "fit_parameters",
    "read_measured_csv",
    "write_trace_csv",
    "write_map_csv",
]

# r0 multiplier of the fast-barrier variant (ten times faster tunnelling)
FAST_BARRIER_SCALE = 0.1


def reference_config(temperature: float | None = None, fast_barriers: bool = False):
    """``(DeviceParams, DriveConfig)`` of the shipped reference configuration.

    Parameters
    ----------
    temperature : float, optional
        Electron temperature in kelvin; the file value (0.3 K) otherwise.
    fast_barriers : bool
        Scale both ``r0`` by :data:`FAST_BARRIER_SCALE`.
    """
    cfg = load_config()
    p, d = cfg.device, cfg.drive
    if temperature is not None:
        p = replace(p, temperature=temperature)
    if fast_barriers:
        p = with_updates(p, barrier_left__r0=p.barrier_left.r0 * FAST_BARRIER_SCALE,
                         barrier_right__r0=p.barrier_right.r0 * FAST_BARRIER_SCALE)
    return p, d


def snapshot(p: DeviceParams, d: DriveConfig) -> dict:
    """Exact (SI, repr-precision) and external-unit record of a configuration."""
    return {"si": {"device": asdict(p), "drive": asdict(d)},
            "external": external_from_params(p, d),
            "version": __version__}


def _pool_map(fn, tasks, jobs):
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _periodic_point(args):
    p, d = args
    try:
        sol = periodic_steady_state(p, d)
    except (SolverError, ValueError) as exc:
        return math.nan, math.nan, {"error": f"{type(exc).__name__}: {exc}"}
    return sol.current_right, sol.current_left, sol.diagnostics


def _static_point(args):
    p, gates, v_sd = args
    try:
        return static_current(p, gates, v_sd), math.nan, {}
    except (SolverError, ValueError) as exc:
        return math.nan, math.nan, {"error": f"{type(exc).__name__}: {exc}"}


@dataclass
class TraceResult:
    """Currents along one swept variable.

    ``currents`` is the drain-junction current, ``current_left`` the source
    junction one (NaN for static solves); ``failures`` lists
    ``(index, message)`` for points that did not solve.
    """

    variable: str
    values: np.ndarray
    currents: np.ndarray
    current_left: np.ndarray
    diagnostics: list
    config: dict
    f_p: float | None = None
    failures: list = field(default_factory=list)

    @property
    def mismatch(self) -> np.ndarray:
        return np.abs(self.currents - self.current_left)

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.currents)


def _collect(results):
    cur = np.array([r[0] for r in results], dtype=float)
    left = np.array([r[1] for r in results], dtype=float)
    diags = [r[2] for r in results]
    failures = [(i, dg["error"]) for i, dg in enumerate(diags) if "error" in dg]
    return cur, left, diags, failures


def bias_trace(p: DeviceParams, d: DriveConfig, v_sd, jobs: int = 1) -> TraceResult:
    """Periodic steady-state current versus source-drain bias (volts)."""
    v_sd = np.asarray(v_sd, dtype=float)
    if np.any(np.diff(v_sd) <= 0):
        raise ValueError("bias grid must be strictly increasing")
    tasks = [(p, replace(d, v_sd=float(v))) for v in v_sd]
    cur, left, diags, failures = _collect(_pool_map(_periodic_point, tasks, jobs))
    return TraceResult("v_sd", v_sd, cur, left, diags, snapshot(p, d), d.f_p, failures)


@dataclass
class MapResult:
    """Currents on a 2-D grid; ``currents[i, j]`` belongs to ``(y[i], x[j])``."""

    x_name: str
    x: np.ndarray
    y_name: str
    y: np.ndarray
    currents: np.ndarray
    current_left: np.ndarray
    config: dict
    failures: list = field(default_factory=list)

    @property
    def mismatch(self) -> np.ndarray:
        return np.abs(self.currents - self.current_left)


def map_bias_plunger(p: DeviceParams, d: DriveConfig, v_sd, v_pl, jobs: int = 1) -> MapResult:
    """Driven current over (plunger voltage, bias)."""
    v_sd = np.asarray(v_sd, dtype=float)
    v_pl = np.asarray(v_pl, dtype=float)
    tasks = [(p, replace(d, v_sd=float(vs), v_pl=float(vp))) for vp in v_pl for vs in v_sd]
    cur, left, _, failures = _collect(_pool_map(_periodic_point, tasks, jobs))
    shape = (v_pl.size, v_sd.size)
    return MapResult("v_sd", v_sd, "v_pl", v_pl, cur.reshape(shape), left.reshape(shape),
                     snapshot(p, d), failures)


def map_barriers_static(p: DeviceParams, d: DriveConfig, v_bl, v_br, v_sd: float | None = None,
                        jobs: int = 1) -> MapResult:
    """Static (undriven) current over the two barrier-gate voltages.

    ``currents[i, j]`` is at ``v_br[i]``, ``v_bl[j]``; ``v_sd`` defaults to
    ``d.v_sd``.
    """
    v_bl = np.asarray(v_bl, dtype=float)
    v_br = np.asarray(v_br, dtype=float)
    v_sd = d.v_sd if v_sd is None else v_sd
    tasks = [(p, StaticGates(d.v_top, d.v_pl, float(a), float(b)), v_sd) for b in v_br for a in v_bl]
    cur, left, _, failures = _collect(_pool_map(_static_point, tasks, jobs))
    shape = (v_br.size, v_bl.size)
    return MapResult("v_bl", v_bl, "v_br", v_br, cur.reshape(shape), left.reshape(shape),
                     snapshot(p, replace(d, v_sd=v_sd)), failures)


def plunger_period(m: MapResult, min_shift: float | None = None) -> float:
    """Period of a map along its ``y`` (plunger) axis.

    The map is compared with copies of itself shifted along ``y`` (linear
    interpolation); the first minimum of the mean squared difference beyond
    ``min_shift`` (default a tenth of the ``y`` span) is refined by a
    parabola through the neighbouring shifts.
    """
    y = m.y
    span = y[-1] - y[0]
    min_shift = 0.1 * span if min_shift is None else min_shift
    step = np.min(np.diff(y)) / 4.0
    shifts = np.arange(min_shift, 0.75 * span, step)
    cur = np.nan_to_num(m.currents)

    def cost(s):
        inside = y + s <= y[-1]
        total = 0.0
        for j in range(cur.shape[1]):
            shifted = np.interp(y[inside] + s, y, cur[:, j])
            total += np.mean((shifted - cur[inside, j]) ** 2)
        return total / cur.shape[1]

    c = np.array([cost(s) for s in shifts])
    scale = np.mean((cur - cur.mean(axis=0)) ** 2)
    # first local minimum that is well below the decorrelated level
    for k in range(1, c.size - 1):
        if c[k] <= c[k - 1] and c[k] <= c[k + 1] and c[k] < 0.2 * scale:
            denom = c[k - 1] - 2.0 * c[k] + c[k + 1]
            offset = 0.5 * (c[k - 1] - c[k + 1]) / denom if denom > 0 else 0.0
            return float(shifts[k] + offset * step)
    raise ValueError("no period found along the plunger axis")


@dataclass
class PlateauStats:
    """Metrics of one plateau of an I-V trace.

    ``relative_offset`` is ``mean_current / reference_current - 1`` and
    ``reference_current`` defaults to ``target_n * e * f_p``.
    """

    target_n: int
    window: tuple[float, float]
    n_points: int
    mean_current: float
    max_abs_deviation: float
    low_gradient_point: float
    low_gradient_current: float
    reference_current: float
    relative_offset: float


def low_gradient_index(v, current, lo: int, hi: int) -> int:
    """Index in ``[lo, hi)`` of minimal smoothed ``|dI/dV|``.

    Central differences on the sampled grid, then a 3-point moving average.
    Ties (within 1e-9 of the trace's overall slope scale) go to the point
    nearest the middle of the range.
    """
    v = np.asarray(v, dtype=float)
    current = np.asarray(current, dtype=float)
    if v.size < 2:
        return lo
    g = np.abs(np.gradient(current, v))
    padded = np.concatenate(([g[0]], g, [g[-1]]))
    smooth = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    seg = smooth[lo:hi]
    span = float(v.max() - v.min())
    tie = 1e-9 * float(np.max(np.abs(current))) / span if span > 0 else 0.0
    best = np.flatnonzero(seg <= seg.min() + tie)
    mid = 0.5 * (hi - 1 - lo)
    return lo + int(best[np.argmin(np.abs(best - mid))])


def plateau_stats(trace, target_n: int = 1, window=None, f_p: float | None = None,
                  reference: float | None = None) -> PlateauStats:
    """Plateau metrics over ``window = (v_lo, v_hi)`` (volts, inclusive).

    ``trace`` is a :class:`TraceResult` or a ``(v, currents)`` pair.

    Examples
    --------
    >>> v = np.linspace(0, 1e-3, 11)
    >>> s = plateau_stats((v, np.full(11, 9.6131e-12)), 1, (0, 1e-3), reference=9.6131e-12)
    >>> s.relative_offset
    0.0
    """
    if isinstance(trace, TraceResult):
        v, cur = trace.values, trace.currents
        f_p = trace.f_p if f_p is None else f_p
    else:
        v, cur = (np.asarray(a, dtype=float) for a in trace)
    if window is None:
        window = (float(v[0]), float(v[-1]))
    lo_v, hi_v = window
    if not hi_v >= lo_v:
        raise ValueError("window must satisfy lo <= hi")
    idx = np.flatnonzero((v >= lo_v) & (v <= hi_v) & np.isfinite(cur))
    if idx.size == 0:
        raise ValueError("no finite samples inside the plateau window")
    if reference is None:
        if f_p is None:
            raise ValueError("need f_p or an explicit reference current")
        reference = target_n * E_CHARGE * f_p
    sel = cur[idx]
    mean = float(np.mean(sel))
    target = target_n * E_CHARGE * f_p if f_p is not None else reference
    k = low_gradient_index(v, cur, int(idx[0]), int(idx[-1]) + 1)
    return PlateauStats(
        target_n=target_n,
        window=(float(lo_v), float(hi_v)),
        n_points=int(idx.size),
        mean_current=mean,
        max_abs_deviation=float(np.max(np.abs(sel - target))),
        low_gradient_point=float(v[k]),
        low_gradient_current=float(cur[k]),
        reference_current=float(reference),
        relative_offset=mean / reference - 1.0 if reference != 0 else math.nan,
    )


def flat_windows(v, currents, level: float, rel_tol: float):
    """Maximal runs of consecutive samples with ``|I/level - 1| < rel_tol``,
    as ``(v_start, v_end)`` pairs."""
    good = np.abs(np.asarray(currents) / level - 1.0) < rel_tol
    runs = []
    start = None
    for i, g in enumerate(good):
        if g and start is None:
            start = i
        if start is not None and (not g or i == good.size - 1):
            end = i if g else i - 1
            runs.append((float(v[start]), float(v[end])))
            start = None
    return runs


@dataclass
class FrequencySweepResult:
    frequencies: np.ndarray
    stats: list
    relative_deviation: np.ndarray  # plateau mean / (n e f) - 1
    traces: list


def frequency_sweep(p: DeviceParams, d: DriveConfig, frequencies, v_sd, target_n: int = 1,
                    window=None, jobs: int = 1) -> FrequencySweepResult:
    """Plateau current at each drive frequency over a fixed bias window."""
    freqs = np.asarray(frequencies, dtype=float)
    traces, stats = [], []
    for f in freqs:
        tr = bias_trace(p, replace(d, f_p=float(f)), v_sd, jobs)
        traces.append(tr)
        stats.append(plateau_stats(tr, target_n=target_n, window=window))
    dev = np.array([s.mean_current / (target_n * E_CHARGE * f) - 1.0 for s, f in zip(stats, freqs)])
    return FrequencySweepResult(freqs, stats, dev, traces)


_KNOBS = ("amp_bl/amp_br", "amp_br/amp_bl", "c_l/c_r")


def _asymmetric(p: DeviceParams, d: DriveConfig, knob: str, ratio: float):
    if knob == "amp_bl/amp_br":
        return p, replace(d, amp_bl=ratio * d.amp_br)
    if knob == "amp_br/amp_bl":
        return p, replace(d, amp_br=ratio * d.amp_bl)
    if knob == "c_l/c_r":
        total = p.c_l + p.c_r
        return replace(p, c_l=total * ratio / (1.0 + ratio), c_r=total / (1.0 + ratio)), d
    raise ValueError(f"unknown asymmetry knob {knob!r}; choose from {', '.join(_KNOBS)}")


@dataclass
class AsymmetryResult:
    """Zero-bias current and, optionally, a bias trace per knob value.

    ``edge_bias`` is the lowest bias at which the trace reaches half of
    ``e f_p`` (NaN without traces or if never reached).
    """

    knob: str
    ratios: np.ndarray
    zero_bias_current: np.ndarray
    traces: list
    edge_bias: np.ndarray
    f_p: float

    def best(self, target_n: int = 1) -> tuple[float, float]:
        """``(ratio, |I(0)/(n e f) - 1|)`` closest to ``target_n * e * f_p``."""
        dev = np.abs(self.zero_bias_current / (target_n * E_CHARGE * self.f_p) - 1.0)
        k = int(np.nanargmin(dev))
        return float(self.ratios[k]), float(dev[k])


def asymmetry_study(p: DeviceParams, d: DriveConfig, ratios, knob: str = "amp_bl/amp_br",
                    v_sd=None, jobs: int = 1) -> AsymmetryResult:
    """Effect of drive or junction asymmetry on the shuttle current.

    ``knob`` is one of ``"amp_bl/amp_br"`` (scales ``amp_bl``),
    ``"amp_br/amp_bl"`` (scales ``amp_br``) or ``"c_l/c_r"`` (redistributes
    ``c_l + c_r``).
    """
    ratios = np.asarray(ratios, dtype=float)
    configs = [_asymmetric(p, d, knob, float(r)) for r in ratios]
    zero = _collect(_pool_map(_periodic_point, [(pp, replace(dd, v_sd=0.0)) for pp, dd in configs], jobs))[0]
    traces = []
    edges = np.full(ratios.size, np.nan)
    if v_sd is not None:
        for k, (pp, dd) in enumerate(configs):
            tr = bias_trace(pp, dd, v_sd, jobs)
            traces.append(tr)
            hit = np.flatnonzero(tr.currents >= 0.5 * E_CHARGE * d.f_p)
            if hit.size:
                edges[k] = tr.values[hit[0]]
    return AsymmetryResult(knob, ratios, zero, traces, edges, d.f_p)


@dataclass
class FitResult:
    """Outcome of :func:`fit_parameters`; ``residual`` is the MSE in A^2."""

    params: DeviceParams
    values: dict
    residual: float
    history: list
    converged: bool
    n_evals: int
    message: str


def _model_currents(p, d, v_sd, jobs):
    tr = bias_trace(p, d, v_sd, jobs)
    return tr.currents


def fit_parameters(v_sd, currents, free, initial: DeviceParams, drive: DriveConfig,
                   weights=None, max_evals: int = 200, jobs: int = 1, xatol: float = 1e-4,
                   initial_step: float = 0.25) -> FitResult:
    """Least-squares fit of device parameters to a measured I-V trace.

    Nelder-Mead on the logarithm of each free parameter, so fitted values
    stay positive. The loss is the (optionally weighted) mean squared
    current residual.

    Parameters
    ----------
    v_sd, currents : array_like
        Measured bias (volts) and current (amperes), at least 10 points.
    free : list of str
        Names of :class:`DeviceParams` fields; barrier-law fields are
        addressed as ``"barrier_left__r0"``.
    initial : DeviceParams
        Start point; fixed parameters are taken from it.
    initial_step : float
        Simplex size in log units.
    """
    v_sd = np.asarray(v_sd, dtype=float)
    currents = np.asarray(currents, dtype=float)
    if v_sd.size < 10:
        raise ValueError("fit needs at least 10 data points")
    if not free:
        raise ValueError("no free parameters")
    order = np.argsort(v_sd)
    v_sd, currents = v_sd[order], currents[order]
    w = np.ones_like(currents) if weights is None else np.asarray(weights, dtype=float)[order]
    start = []
    for name in free:
        obj = initial
        for part in name.split("__"):
            obj = getattr(obj, part)
        if not obj > 0:
            raise ValueError(f"free parameter {name} must be positive for the log transform")
        start.append(math.log(obj))
    x0 = np.array(start)
    scale = (E_CHARGE * drive.f_p) ** 2
    history = []

    def params_at(x):
        return with_updates(initial, **{n: float(math.exp(v)) for n, v in zip(free, x)})

    def loss(x):
        model = _model_currents(params_at(x), drive, v_sd, jobs)
        if not np.all(np.isfinite(model)):
            mse = math.inf
        else:
            mse = float(np.sum(w * (model - currents) ** 2) / np.sum(w))
        history.append({**{n: math.exp(v) for n, v in zip(free, x)}, "residual": mse})
        return mse / scale

    simplex = np.vstack([x0] + [x0 + initial_step * np.eye(x0.size)[i] for i in range(x0.size)])
    res = minimize(loss, x0, method="Nelder-Mead",
                   options={"maxfev": max_evals, "xatol": xatol, "fatol": 1e-14,
                            "initial_simplex": simplex})
    best = params_at(res.x)
    return FitResult(
        params=best,
        values={n: math.exp(v) for n, v in zip(free, res.x)},
        residual=float(res.fun * scale),
        history=history,
        converged=bool(res.success),
        n_evals=int(res.nfev),
        message=str(res.message),
    )


def read_measured_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``v_sd_mV,current_pA`` columns; returns SI arrays (volts, amperes)."""
    v, i = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"v_sd_mV", "current_pA"} <= set(reader.fieldnames):
            raise ValueError("measured data needs columns v_sd_mV and current_pA")
        for row in reader:
            v.append(float(row["v_sd_mV"]) * 1e-3)
            i.append(float(row["current_pA"]) * 1e-12)
    return np.array(v), np.array(i)


def _g17(x) -> str:
    return "nan" if not np.isfinite(x) else format(float(x), ".17g")


def _g6(x) -> str:
    return "nan" if not np.isfinite(x) else format(float(x), ".6g")


_SCALES = {"v_sd": ("v_sd_mV", 1e3), "v_pl": ("v_pl_mV", 1e3), "v_bl": ("v_bl_mV", 1e3),
           "v_br": ("v_br_mV", 1e3), "f_p": ("f_p_MHz", 1e-6)}


def write_trace_csv(trace: TraceResult, path) -> None:
    name, k = _SCALES.get(trace.variable, (trace.variable, 1.0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name, "current_A", "current_pA", "current_left_A", "mismatch_A", "status"])
        for i, x in enumerate(trace.values):
            status = trace.diagnostics[i].get("error", "ok") if trace.diagnostics else "ok"
            w.writerow([_g17(x * k), _g17(trace.currents[i]), _g6(trace.currents[i] * 1e12),
                        _g17(trace.current_left[i]), _g17(trace.mismatch[i]), status])


def write_map_csv(m: MapResult, path) -> None:
    xn, xk = _SCALES.get(m.x_name, (m.x_name, 1.0))
    yn, yk = _SCALES.get(m.y_name, (m.y_name, 1.0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([yn, xn, "current_A", "current_pA"])
        for i, y in enumerate(m.y):
            for j, x in enumerate(m.x):
                w.writerow([_g17(y * yk), _g17(x * xk), _g17(m.currents[i, j]), _g6(m.currents[i, j] * 1e12)])

"""Command-line interface.

Every run writes ``manifest.json`` into the output directory, also when the
run fails. Exit codes: 0 success, 1 invalid configuration, 2 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, dumps, load_config
from .constants import E_CHARGE
from .dynamics import SolverError
from .kmc import MajorantViolation, simulate, simulate_shards, write_event_log
from .params import charging_energy, validate_params, with_updates
from . import experiments as ex

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


class _Run:
    """Output bookkeeping shared by the subcommands."""

    def __init__(self, out: Path, args):
        self.out = out
        self.args = args
        self.files: list[str] = []
        self.solver_failures = 0
        self.error = None

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(str(p))
        return p

    def json(self, name: str, data) -> None:
        _write_json(self.path(name), data)


def _grid(lo_mv, hi_mv, n):
    return np.linspace(lo_mv * 1e-3, hi_mv * 1e-3, int(n))


def _trace_summary(tr: ex.TraceResult) -> dict:
    ok = tr.ok
    return {
        "points": int(tr.values.size),
        "failures": tr.failures,
        "max_junction_mismatch_A": float(np.max(tr.mismatch[ok])) if ok.any() else math.nan,
        "config": tr.config,
    }


def _stats_dict(s: ex.PlateauStats) -> dict:
    return {k: getattr(s, k) for k in s.__dataclass_fields__}


def cmd_validate(cfg, run: _Run) -> int:
    p, d = cfg.device, cfg.drive
    report = validate_params(p, d)
    e_c = charging_energy(p)
    info = {
        "valid": report.ok,
        "violations": report.violations,
        "c_sigma_aF": p.c_sigma * 1e18,
        "charging_energy_meV": e_c / E_CHARGE * 1e3,
        "ideal_current_pA": E_CHARGE * d.f_p * 1e12,
    }
    run.json("validate.json", info)
    print(f"C_sigma = {info['c_sigma_aF']:.6g} aF, E_C = {info['charging_energy_meV']:.6g} meV, "
          f"e*f_p = {info['ideal_current_pA']:.6g} pA")
    print("valid" if report.ok else f"invalid: {report}")
    if not report.ok:
        run.error = f"invalid parameters: {report}"
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_trace(cfg, run: _Run) -> int:
    p, d = cfg.device, cfg.drive
    sec = cfg.section("trace")
    tr = ex.bias_trace(p, d, _grid(sec["v_sd_min_mv"], sec["v_sd_max_mv"], sec["points"]), run.args.jobs)
    ex.write_trace_csv(tr, run.path("trace.csv"))
    pl = cfg.section("plateau")
    summary = _trace_summary(tr)
    try:
        st = ex.plateau_stats(tr, pl["target_n"], (pl["window_min_mv"] * 1e-3, pl["window_max_mv"] * 1e-3))
        summary["plateau"] = _stats_dict(st)
    except ValueError as exc:
        summary["plateau"] = {"error": str(exc)}
    summary["flat_windows_1e-3"] = ex.flat_windows(tr.values, tr.currents, pl["target_n"] * E_CHARGE * d.f_p, 1e-3) \
        if pl["target_n"] else []
    run.json("summary.json", summary)
    run.solver_failures += len(tr.failures)
    return EXIT_OK


def cmd_plateau(cfg, run: _Run) -> int:
    p, d = cfg.device, cfg.drive
    sec, pl = cfg.section("trace"), cfg.section("plateau")
    tr = ex.bias_trace(p, d, _grid(sec["v_sd_min_mv"], sec["v_sd_max_mv"], sec["points"]), run.args.jobs)
    ex.write_trace_csv(tr, run.path("trace.csv"))
    out = {"trace": _trace_summary(tr)}
    window = (pl["window_min_mv"] * 1e-3, pl["window_max_mv"] * 1e-3)
    st = ex.plateau_stats(tr, pl["target_n"], window)
    out["plateau"] = _stats_dict(st)
    zero = ex.plateau_stats(tr, 0, (-0.5e-3, 0.5e-3))
    out["zero_plateau"] = _stats_dict(zero)
    run.json("plateau.json", out)
    print(f"n={st.target_n} window [{window[0]*1e3:g}, {window[1]*1e3:g}] mV: mean {st.mean_current*1e12:.6f} pA, "
          f"offset {st.relative_offset:.3e}, low-gradient point {st.low_gradient_point*1e3:.4g} mV")
    print(f"zero plateau mean {zero.mean_current*1e15:.4g} fA")
    run.solver_failures += len(tr.failures)
    return EXIT_OK


def cmd_map(cfg, run: _Run) -> int:
    p, d = cfg.device, cfg.drive
    sec = cfg.section("map")
    m = ex.map_bias_plunger(p, d, _grid(sec["v_sd_min_mv"], sec["v_sd_max_mv"], sec["v_sd_points"]),
                            _grid(sec["v_pl_min_mv"], sec["v_pl_max_mv"], sec["v_pl_points"]), run.args.jobs)
    ex.write_map_csv(m, run.path("map.csv"))
    summary = {"failures": m.failures, "config": m.config,
               "gate_charge_period_mV": E_CHARGE / p.c_pl * 1e3}
    try:
        summary["plunger_period_mV"] = ex.plunger_period(m) * 1e3
    except ValueError as exc:
        summary["plunger_period_mV"] = str(exc)
    run.json("summary.json", summary)
    run.solver_failures += len(m.failures)
    return EXIT_OK


def cmd_static_map(cfg, run: _Run) -> int:
    p, d = cfg.device, cfg.drive
    sec = cfg.section("static_map")
    m = ex.map_barriers_static(p, d, _grid(sec["v_bl_min_mv"], sec["v_bl_max_mv"], sec["v_bl_points"]),
                               _grid(sec["v_br_min_mv"], sec["v_br_max_mv"], sec["v_br_points"]),
                               sec["v_sd_mv"] * 1e-3, run.args.jobs)
    ex.write_map_csv(m, run.path("static_map.csv"))
    run.json("summary.json", {"failures": m.failures, "config": m.config})
    run.solver_failures += len(m.failures)
    return EXIT_OK


def cmd_freq_sweep(cfg, run: _Run) -> int:
    sec = cfg.section("freq_sweep")
    p, d = cfg.device, cfg.drive
    if sec["fast_barriers"]:
        p = with_updates(p, barrier_left__r0=p.barrier_left.r0 * ex.FAST_BARRIER_SCALE,
                         barrier_right__r0=p.barrier_right.r0 * ex.FAST_BARRIER_SCALE)
    freqs = np.array(sec["f_p_mhz"]) * 1e6
    fs = ex.frequency_sweep(p, d, freqs, _grid(sec["v_sd_min_mv"], sec["v_sd_max_mv"], sec["points"]),
                            sec["target_n"], jobs=run.args.jobs)
    with open(run.path("freq_sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f_p_MHz", "mean_current_A", "mean_current_pA", "relative_deviation", "low_gradient_point_mV"])
        for f, st, dev in zip(fs.frequencies, fs.stats, fs.relative_deviation):
            w.writerow([format(f / 1e6, ".17g"), format(st.mean_current, ".17g"),
                        format(st.mean_current * 1e12, ".6g"), format(dev, ".17g"),
                        format(st.low_gradient_point * 1e3, ".17g")])
    run.json("summary.json", {
        "frequencies_MHz": fs.frequencies / 1e6,
        "relative_deviation": fs.relative_deviation,
        "plateaus": [_stats_dict(s) for s in fs.stats],
        "config": ex.snapshot(p, d),
    })
    run.solver_failures += sum(len(t.failures) for t in fs.traces)
    return EXIT_OK


def cmd_kmc(cfg, run: _Run) -> int:
    p, d = cfg.device, cfg.drive
    sec = cfg.section("kmc")
    summary, trajs = simulate_shards(p, d, sec["periods"], sec["shards"], run.args.seed,
                                     burn_in=sec["burn_in"], jobs=run.args.jobs)
    with open(run.path("periods.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shard", "period", "net_transfers_right", "net_transfers_left"])
        for s, tr in enumerate(trajs):
            for m, (nr, nl) in enumerate(zip(tr.net_transfers_right, tr.net_transfers_left)):
                w.writerow([s, m, int(nr), int(nl)])
    if sec["event_log"]:
        first = simulate(p, d, n_periods=min(sec["periods"], 100), seed=run.args.seed, log_events=True)
        write_event_log(first, run.path("events.csv"))
    out = summary.to_dict()
    out["config"] = ex.snapshot(p, d)
    run.json("kmc.json", out)
    print(f"mean current {summary.mean_current*1e12:.6f} pA +- {summary.std_error*1e12:.2g} pA "
          f"({summary.n_periods} periods, acceptance {summary.acceptance_ratio:.3f})")
    return EXIT_OK


def cmd_fit(cfg, run: _Run) -> int:
    p, d = cfg.device, cfg.drive
    sec = cfg.section("fit")
    if not sec["data"]:
        raise ConfigError("fit.data must name a CSV file with columns v_sd_mV,current_pA")
    v, i = ex.read_measured_csv(sec["data"])
    res = ex.fit_parameters(v, i, sec["free"], p, d, max_evals=sec["max_evals"], jobs=run.args.jobs)
    model = ex.bias_trace(res.params, d, np.sort(v), run.args.jobs)
    ex.write_trace_csv(model, run.path("fit_trace.csv"))
    run.json("fit.json", {
        "values": res.values,
        "residual_A2": res.residual,
        "converged": res.converged,
        "evaluations": res.n_evals,
        "message": res.message,
        "history": res.history,
        "config": ex.snapshot(res.params, d),
    })
    print(f"fit {'converged' if res.converged else 'NOT converged'}: "
          + ", ".join(f"{k} = {v:.6g}" for k, v in res.values.items()) + f", MSE {res.residual:.3e} A^2")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "trace": cmd_trace,
    "plateau": cmd_plateau,
    "map": cmd_map,
    "static-map": cmd_static_map,
    "freq-sweep": cmd_freq_sweep,
    "kmc": cmd_kmc,
    "fit": cmd_fit,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shuttlesim", description="Single-electron shuttle simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config (default: built-in reference)")
    common.add_argument("--out", default="shuttlesim_out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. drive.f_p_mhz=120 (repeatable)")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (kmc)")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "check a config and print derived quantities",
        "trace": "current versus bias under rf drive",
        "plateau": "plateau metrics of a bias trace",
        "map": "current over bias and plunger voltage",
        "static-map": "undriven current over the barrier gates",
        "freq-sweep": "plateau current versus drive frequency",
        "kmc": "kinetic Monte Carlo counting statistics",
        "fit": "fit device parameters to a measured trace",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest = {
        "subcommand": args.command,
        "version": __version__,
        "config_path": args.config,
        "overrides": args.set,
        "seed": args.seed,
        "jobs": args.jobs,
    }
    rec = _Run(out, args)
    code = EXIT_OK
    try:
        cfg = load_config(args.config).with_overrides(args.set)
        manifest["resolved_config"] = cfg.values
        (out / "resolved_config.toml").write_text(dumps(cfg.values))
        rec.files.append(str(out / "resolved_config.toml"))
        if args.command != "validate":
            report = validate_params(cfg.device, cfg.drive)
            if not report.ok:
                raise ConfigError(f"invalid parameters: {report}")
        code = COMMANDS[args.command](cfg, rec)
        if rec.error:
            manifest["error"] = rec.error
        if code == EXIT_OK and rec.solver_failures:
            manifest["error"] = f"{rec.solver_failures} point(s) failed to solve"
            code = EXIT_SOLVER
    except (ConfigError, OSError) as exc:
        manifest["error"] = str(exc)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INVALID
    except (SolverError, MajorantViolation) as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        print(f"solver failure: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    finally:
        manifest["exit_code"] = code
        manifest["wall_time_s"] = time.perf_counter() - t0
        manifest["outputs"] = rec.files + [str(out / "manifest.json")]
        _write_json(out / "manifest.json", manifest)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

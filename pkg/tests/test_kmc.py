import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from shuttlesim.constants import E_CHARGE
from shuttlesim.dynamics import ChargeStateSpace, auto_window
from shuttlesim.experiments import reference_config
from shuttlesim.kmc import (
    EVENT_NAMES,
    MajorantViolation,
    rate_majorants,
    simulate,
    simulate_shards,
    summarize,
    write_event_log,
)
from shuttlesim.params import BarrierLaw


@pytest.fixture(scope="module")
def plateau():
    p, d = reference_config()
    return p, replace(d, v_sd=3e-3)


def test_frozen_device_has_no_events(plateau):
    p, d = plateau
    dead = BarrierLaw(math.inf, 0.0, 1e-3, r_floor=math.inf)
    p = replace(p, barrier_left=dead, barrier_right=dead)
    traj = simulate(p, d, ChargeStateSpace(110, 124), n_periods=50, log_events=True)
    assert traj.event_times.size == 0
    assert np.all(traj.net_transfers_right == 0) and np.all(traj.net_transfers_left == 0)
    assert traj.candidates == 0


def test_same_seed_same_trajectory(plateau):
    p, d = plateau
    a = simulate(p, d, n_periods=100, seed=7, log_events=True)
    b = simulate(p, d, n_periods=100, seed=7, log_events=True)
    c = simulate(p, d, n_periods=100, seed=8, log_events=True)
    assert np.array_equal(a.event_times, b.event_times)
    assert np.array_equal(a.event_types, b.event_types)
    assert not np.array_equal(a.event_times, c.event_times)


def test_shards_independent_of_jobs(plateau):
    p, d = plateau
    s1, _ = simulate_shards(p, d, n_periods=50, shards=3, seed=3, jobs=1)
    s2, _ = simulate_shards(p, d, n_periods=50, shards=3, seed=3, jobs=3)
    assert np.array_equal(s1.shard_means, s2.shard_means)
    assert s1.n_periods == 150


def test_deep_plateau_transfers_one_electron(plateau):
    p, d = plateau
    traj = simulate(p, d, n_periods=500, seed=1)
    assert np.mean(traj.net_transfers_right == 1) >= 0.99
    assert np.mean(traj.net_transfers_left == 1) >= 0.99


def test_event_log_is_consistent(plateau, tmp_path):
    p, d = plateau
    traj = simulate(p, d, n_periods=20, seed=2, log_events=True)
    assert np.all(np.diff(traj.event_times) >= 0)
    assert np.array_equal(traj.event_n_before[1:], traj.event_n_after[:-1])
    path = tmp_path / "events.csv"
    write_event_log(traj, path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == traj.event_times.size
    assert set(r["event"] for r in rows) <= set(EVENT_NAMES)
    assert all(int(r["n_after"]) - int(r["n_before"]) in (-1, 1) for r in rows)


def test_event_counts_match_period_totals(plateau):
    p, d = plateau
    traj = simulate(p, d, n_periods=30, seed=4, log_events=True, burn_in=0)
    e = traj.event_types
    net_r = np.sum(e == EVENT_NAMES.index("inR")) - np.sum(e == EVENT_NAMES.index("outR"))
    assert net_r == traj.net_transfers_right.sum()


def test_bad_majorant_is_detected(plateau):
    p, d = plateau
    space = auto_window(p, d)
    maj = rate_majorants(p, d, space) * 1e-3
    with pytest.raises(MajorantViolation):
        simulate(p, d, space, n_periods=5, majorants=maj)


def test_loose_majorant_warns(plateau):
    p, d = plateau
    space = auto_window(p, d)
    maj = rate_majorants(p, d, space) * 100.0
    with pytest.warns(RuntimeWarning, match="acceptance"):
        simulate(p, d, space, n_periods=5, majorants=maj)


def test_majorants_bound_rates(plateau):
    p, d = plateau
    space = auto_window(p, d)
    maj = rate_majorants(p, d, space)
    assert maj.shape == (1024, 4, space.size)
    assert np.all(maj >= 0)


def test_summary_statistics(plateau):
    p, d = plateau
    summary, trajs = simulate_shards(p, d, n_periods=40, shards=2, seed=0)
    counts = np.concatenate([t.net_transfers_right for t in trajs])
    ef = E_CHARGE * d.f_p
    assert summary.mean_current == pytest.approx(ef * counts.mean())
    assert summary.std_error >= ef / counts.size
    assert summarize(trajs).mean_current == summary.mean_current
    assert set(summary.to_dict()) >= {"mean_current", "std_error", "n_periods"}


def test_rejects_zero_periods(plateau):
    with pytest.raises(ValueError):
        simulate(*plateau, n_periods=0)

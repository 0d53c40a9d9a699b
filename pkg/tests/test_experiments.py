import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shuttlesim.constants import E_CHARGE
from shuttlesim.dynamics import StaticGates, periodic_steady_state, static_current
from shuttlesim.experiments import (
    asymmetry_study,
    bias_trace,
    fit_parameters,
    flat_windows,
    low_gradient_index,
    map_barriers_static,
    plateau_stats,
    read_measured_csv,
    reference_config,
    snapshot,
    write_trace_csv,
)
from shuttlesim.params import BarrierLaw, DeviceParams, DriveConfig


def symmetric_device():
    p, d = reference_config()
    law = BarrierLaw(5e9, 0.63, 4e-3)
    p = replace(p, bias_shift=0.0, barrier_left=law, barrier_right=law)
    d = replace(d, mean_bl=0.626, mean_br=0.626)
    return p, d


def test_flat_trace_stats():
    v = np.linspace(2e-3, 4e-3, 11)
    ef = E_CHARGE * 60e6
    s = plateau_stats((v, np.full(11, ef)), 1, (2e-3, 4e-3), f_p=60e6)
    assert s.n_points == 11 and s.max_abs_deviation == 0.0 and abs(s.relative_offset) < 1e-15
    assert s.low_gradient_point == pytest.approx(3e-3)
    assert flat_windows(v, np.full(11, ef), ef, 1e-3) == [(2e-3, 4e-3)]


def test_higher_plateau_reference():
    s = plateau_stats((np.linspace(0, 1, 10), np.zeros(10)), 4, f_p=60e6)
    assert s.reference_current == pytest.approx(4 * 9.6131e-12, rel=1e-5)
    assert s.reference_current == pytest.approx(38.4524e-12, rel=1e-5)


def test_plateau_window_errors():
    v = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        plateau_stats((v, v), 1, (0.6, 0.5), f_p=1.0)
    with pytest.raises(ValueError):
        plateau_stats((v, v), 1, (2.0, 3.0), f_p=1.0)
    with pytest.raises(ValueError):
        plateau_stats((v, v), 1)


@settings(max_examples=60)
@given(arrays(float, st.integers(3, 40), elements=st.floats(0.5, 2.0)), st.floats(0.1, 10.0))
def test_plateau_stats_invariants(cur, k):
    v = np.linspace(0.0, 1e-3, cur.size)
    s = plateau_stats((v, cur), 1, reference=1.0)
    assert cur.min() - 1e-12 <= s.mean_current <= cur.max() + 1e-12
    assert s.n_points == cur.size
    assert v[0] <= s.low_gradient_point <= v[-1]
    assert s.max_abs_deviation >= abs(s.mean_current - 1.0) - 1e-12
    scaled = plateau_stats((v, k * cur), 1, reference=k)
    assert scaled.relative_offset == pytest.approx(s.relative_offset, abs=1e-12)
    assert scaled.low_gradient_point == s.low_gradient_point


def test_low_gradient_prefers_middle_on_ties():
    v = np.linspace(0, 1, 9)
    assert low_gradient_index(v, np.zeros(9), 0, 9) == 4


def test_zero_amplitude_reduces_to_static():
    p, d = reference_config()
    d = replace(d, v_sd=2e-3, amp_bl=0.0, amp_br=0.0, mean_bl=0.64, mean_br=0.66)
    driven = periodic_steady_state(p, d).current
    static = static_current(p, StaticGates.from_drive(d, 0.0), d.v_sd)
    assert driven == pytest.approx(static, rel=1e-8)


def test_static_map_ridge_follows_gate_lever_arms():
    p, d = reference_config()
    flat = BarrierLaw(5e8, 0.0, 1e6)  # bias-independent resistance
    p = replace(p, barrier_left=flat, barrier_right=flat)
    v_bl = np.array([0.60, 0.62])
    v_br = np.linspace(0.55, 0.75, 801)
    m = map_barriers_static(p, d, v_bl, v_br, v_sd=0.5e-3)
    assert not m.failures
    # follow the same Coulomb peak in both columns
    k0 = int(np.argmax(m.currents[:, 0]))
    shift = -(v_bl[1] - v_bl[0]) * p.c_bl / p.c_br
    expected = v_br[k0] + shift
    near = np.abs(v_br - expected) < 0.01
    k1 = np.flatnonzero(near)[np.argmax(m.currents[near, 1])]
    slope = (v_br[k1] - v_br[k0]) / (v_bl[1] - v_bl[0])
    assert slope == pytest.approx(-p.c_bl / p.c_br, abs=2 * (v_br[1] - v_br[0]) / (v_bl[1] - v_bl[0]))


def test_static_map_pinched_off():
    p, d = reference_config()
    m = map_barriers_static(p, d, np.linspace(0.50, 0.52, 3), np.linspace(0.50, 0.52, 3), v_sd=2e-3)
    assert np.all(np.abs(m.currents) < 1e-15)


def test_static_map_transposes_under_mirror():
    p, d = symmetric_device()
    p = replace(p, c_bl=10e-18, c_br=10e-18)
    grid = np.linspace(0.6, 0.66, 5)
    v = 1e-3
    a = map_barriers_static(p, d, grid, grid, v_sd=v)
    c_gates = p.c_top + p.c_pl + p.c_bl + p.c_br
    b = map_barriers_static(replace(p, offset_charge=p.offset_charge - v * c_gates), d, grid, grid, v_sd=-v)
    ef = E_CHARGE * d.f_p
    assert np.max(np.abs(b.currents.T + a.currents)) < 1e-10 * ef


def test_symmetric_device_has_no_pumped_current():
    p, d = symmetric_device()
    res = asymmetry_study(p, d, [1.0])
    assert abs(res.zero_bias_current[0]) < 1e-10 * E_CHARGE * d.f_p


def test_mirrored_amplitude_ratio_reaches_one_electron():
    p, d = reference_config()
    res = asymmetry_study(p, d, np.linspace(1.0, 1.5, 11), knob="amp_br/amp_bl", jobs=4)
    ratio, dev = res.best(1)
    assert dev < 0.05


def test_unknown_knob():
    p, d = reference_config()
    with pytest.raises(ValueError, match="knob"):
        asymmetry_study(p, d, [1.0], knob="c_top")


def test_self_fit_has_zero_residual():
    p, d = reference_config()
    v = np.linspace(0.5e-3, 5e-3, 12)
    cur = bias_trace(p, d, v).currents
    fit = fit_parameters(v, cur, ["temperature"], p, d, max_evals=4)
    assert fit.history[0]["residual"] < 1e-30
    assert fit.residual < 1e-30
    assert fit.values["temperature"] == pytest.approx(0.3)


def test_fit_argument_checks():
    p, d = reference_config()
    v = np.linspace(0, 1e-3, 9)
    with pytest.raises(ValueError, match="10"):
        fit_parameters(v, v, ["temperature"], p, d)
    with pytest.raises(ValueError, match="free"):
        fit_parameters(np.linspace(0, 1e-3, 10), np.zeros(10), [], p, d)


def test_snapshot_reproduces_bit_identical_current():
    p, d = reference_config()
    d = replace(d, v_sd=2.1e-3)
    snap = snapshot(p, d)["si"]
    dev = dict(snap["device"])
    dev["barrier_left"] = BarrierLaw(**dev["barrier_left"])
    dev["barrier_right"] = BarrierLaw(**dev["barrier_right"])
    p2, d2 = DeviceParams(**dev), DriveConfig(**snap["drive"])
    assert (p2, d2) == (p, d)
    assert periodic_steady_state(p2, d2).current == periodic_steady_state(p, d).current


def test_trace_csv_round_trip(tmp_path):
    p, d = reference_config()
    tr = bias_trace(p, d, np.array([1e-3, 3e-3]))
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    text = path.read_text().splitlines()
    assert text[0].startswith("v_sd_mV,current_A,current_pA")
    assert float(text[2].split(",")[1]) == tr.currents[1]
    measured = tmp_path / "m.csv"
    measured.write_text("v_sd_mV,current_pA\n1.0,2.0\n3.0,4.5\n")
    v, i = read_measured_csv(measured)
    assert np.allclose(v, [1e-3, 3e-3]) and np.allclose(i, [2e-12, 4.5e-12])
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_measured_csv(bad)

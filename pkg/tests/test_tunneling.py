import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shuttlesim import _kernels
from shuttlesim.constants import E_CHARGE, K_B
from shuttlesim.electrostatics import Event, bias_at, free_energy_change
from shuttlesim.experiments import reference_config
from shuttlesim.tunneling import TransitionRates, rates_at, thermal_factor, tunnel_rate


def test_rate_at_zero_energy():
    T, R = 0.3, 1e6
    assert tunnel_rate(0.0, R, T) == pytest.approx(K_B * T / (E_CHARGE**2 * R), rel=1e-15)


def test_rate_deep_downhill_is_ohmic():
    T, R = 0.3, 1e6
    dF = -1000 * K_B * T
    assert tunnel_rate(dF, R, T) == pytest.approx(-dF / (E_CHARGE**2 * R), rel=1e-12)


def test_rate_deep_uphill_vanishes():
    assert tunnel_rate(1e5 * K_B * 0.3, 1e6, 0.3) == 0.0


def test_rate_rejects_bad_inputs():
    with pytest.raises(ValueError):
        tunnel_rate(0.0, 0.0, 0.3)
    with pytest.raises(ValueError):
        tunnel_rate(0.0, 1e6, 0.0)


def test_thermal_factor_smooth_across_series_cutoff():
    x = np.array([-1.0001e-4, -0.9999e-4, 0.0, 0.9999e-4, 1.0001e-4])
    exact = np.array([float(v / math.expm1(v)) if v else 1.0 for v in x])
    assert np.allclose(thermal_factor(x), exact, rtol=1e-14, atol=0)


@given(st.floats(-700, 700))
def test_thermal_factor_matches_definition(x):
    got = float(thermal_factor(x))
    if abs(x) < 1e-12:
        assert got == pytest.approx(1.0)
    else:
        # x / (e^x - 1) evaluated through exp(-x) for positive x
        ref = x * math.exp(-x) / -math.expm1(-x) if x > 0 else x / math.expm1(x)
        assert got == pytest.approx(ref, rel=1e-12, abs=1e-300)
    assert got >= 0.0


@given(st.floats(-60, 60), st.floats(0.01, 20.0), st.floats(1e5, 1e12))
def test_detailed_balance(x, T, R):
    dF = x * K_B * T
    ratio = tunnel_rate(dF, R, T) / tunnel_rate(-dF, R, T)
    assert ratio == pytest.approx(math.exp(-x), rel=1e-9)


def test_rates_at_matches_kernel_and_formula():
    p, d = reference_config()
    window = (110, 125)
    t = 0.3 * d.period
    r = rates_at(p, d, window, t)
    N = window[1] - window[0] + 1
    out = np.empty((4, N))
    _kernels.rates(_kernels.pack(p, d), window[0], N, t, out)
    for k, name in enumerate(("in_l", "out_l", "in_r", "out_r")):
        assert np.allclose(getattr(r, name), out[k], rtol=1e-12, atol=0)
    assert r.in_l[-1] == 0.0 and r.in_r[-1] == 0.0 and r.out_l[0] == 0.0 and r.out_r[0] == 0.0
    # interior entry against the scalar formula
    b = bias_at(p, d, t)
    from shuttlesim.tunneling import barrier_resistance
    from shuttlesim.params import gate_waveform

    v_bl, _ = gate_waveform(d, t)
    dF = free_energy_change(p, 117, b, Event.IN_L)
    assert r[Event.IN_L][117 - 110] == pytest.approx(tunnel_rate(dF, barrier_resistance(p.barrier_left, v_bl), p.temperature), rel=1e-12)
    assert isinstance(r, TransitionRates)

import math

import pytest

from shuttlesim.config import (
    ConfigError,
    apply_overrides,
    device_params,
    drive_config,
    dumps,
    external_from_params,
    load_config,
    parse_config,
)
from shuttlesim.constants import E_CHARGE, R_QUANTUM
from shuttlesim.experiments import reference_config


@pytest.fixture(scope="module")
def cfg():
    return load_config()


def test_reference_values(cfg):
    p, d = cfg.device, cfg.drive
    assert p.c_l == pytest.approx(15e-18) and p.c_pl == pytest.approx(1.22e-18)
    assert p.temperature == 0.3 and p.bias_shift == pytest.approx(1e-4)
    assert p.barrier_left.r_floor == pytest.approx(10 * R_QUANTUM)
    assert d.f_p == 60e6 and d.phase_bl == pytest.approx(math.pi) and d.phase_br == 0.0


def test_dump_parse_round_trip(cfg, tmp_path):
    again = parse_config(dumps(cfg.values))
    assert again.values == cfg.values
    assert (again.device, again.drive) == (cfg.device, cfg.drive)
    path = tmp_path / "c.toml"
    path.write_text(dumps(cfg.values))
    assert load_config(path).values == cfg.values


def test_external_units_round_trip():
    p, d = reference_config()
    ext = external_from_params(p, d)
    assert ext["device"]["offset_charge_e"] == pytest.approx(p.offset_charge / E_CHARGE)
    p2 = device_params({"device": ext["device"]})
    d2 = drive_config({"drive": ext["drive"]})
    for a, b in ((p2.c_l, p.c_l), (p2.barrier_right.r0, p.barrier_right.r0), (d2.mean_br, d.mean_br)):
        assert a == pytest.approx(b, rel=1e-14)


def test_unknown_key_lists_valid_ones(cfg):
    values = dict(cfg.values)
    values["drive"] = {**values["drive"], "freq": 1.0}
    with pytest.raises(ConfigError, match="valid keys: .*f_p_mhz"):
        parse_config(values)


def test_missing_required_key(cfg):
    values = dict(cfg.values)
    values["device"] = {k: v for k, v in values["device"].items() if k != "c_l_af"}
    with pytest.raises(ConfigError, match="device.c_l_af"):
        parse_config(values)


def test_type_and_syntax_errors(cfg):
    with pytest.raises(ConfigError, match="not valid TOML"):
        parse_config("device = [")
    with pytest.raises(ConfigError, match="integer"):
        apply_overrides(cfg.values, ["trace.points=2.5"])
    with pytest.raises(ConfigError, match="number"):
        apply_overrides(cfg.values, ["drive.f_p_mhz=fast"])


def test_overrides(cfg):
    new = cfg.with_overrides(["drive.f_p_mhz=120", "device.barrier_left.r0_mohm=1e3", "kmc.event_log=true"])
    assert new.drive.f_p == 120e6
    assert new.device.barrier_left.r0 == 1e9
    assert new.section("kmc")["event_log"] is True
    assert cfg.drive.f_p == 60e6
    with pytest.raises(ConfigError, match="key=value"):
        apply_overrides(cfg.values, ["drive.f_p_mhz"])
    with pytest.raises(ConfigError, match="unknown"):
        apply_overrides(cfg.values, ["drive.nope=1"])
    with pytest.raises(ConfigError, match="unknown section"):
        apply_overrides(cfg.values, ["nope.x=1"])
